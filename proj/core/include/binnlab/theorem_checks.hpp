#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "binnlab/oracles.hpp"

namespace binnlab {

/// Frozen 2-layer test instance for the p-policy bias/variance experiments.
struct Prop34Instance {
  NetworkSpec spec;
  NetworkParams params;
  Tensor input;
  LossSpec loss;
  std::size_t target = 0;
  std::size_t construction_seed = 0;
};

/// Deterministic seeded search for an instance in the regime the interval
/// results assume: second-layer standardised preactivations concentrated in
/// (-1, 1) with high probability, first-layer firing probabilities spread on
/// both sides of 0.5, and trained-style alignment between each unit's firing
/// side and its conditional downstream derivative magnitudes. The first
/// construction seed passing all checks is frozen, so every run rebuilds the
/// identical instance.
Prop34Instance make_prop34_instance();

struct Prop34Report {
  struct PolicyStats {
    std::string name;
    double median_abs_bias = 0.0;
    double median_variance = 0.0;
  };
  std::vector<PolicyStats> policies;  // P0, P1, HALF, ST, LOW_VAR
  std::size_t trials = 0;
  bool bias_ordering_ok = false;   // |bias(P0)|,|bias(P1)| exceed |bias(ST)|,|bias(HALF)|
  bool lowvar_variance_ok = false; // Var(LOW_VAR) <= Var(HALF)
};

Prop34Report run_prop34_experiment(std::size_t trials, const RngKey& key);

/// Firing-rate comparison between the recurrent-view implementation (the
/// h*/kappa^2 recursions) and a literal per-step weight-resampling
/// implementation of the unrolled membrane potential, on a fixed 2-neuron,
/// 4-step recurrent instance.
struct RecurrentEquivalenceReport {
  std::size_t neurons = 0, steps = 0, runs = 0;
  std::vector<double> recursion_rates;  // [t * neurons + i]
  std::vector<double> explicit_rates;
  double max_z = 0.0;  // max |rate diff| / SE(diff)
  bool within_3se = false;
};

RecurrentEquivalenceReport run_recurrent_equivalence_check(std::size_t runs, const RngKey& key);

}  // namespace binnlab
