#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "binnlab/estimators.hpp"
#include "binnlab/losses.hpp"
#include "binnlab/network.hpp"
#include "binnlab/rng.hpp"

namespace binnlab {

struct EnumerationBudget {
  std::size_t max_stochastic_units = 20;
};

struct BudgetExceededError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Oracle-referenced bias/variance report for an estimator on a fixed
/// network; one entry per flat parameter.
struct EstimatorMoments {
  std::vector<double> mean_gradient;
  std::vector<double> variance;
  std::vector<double> bias;            // mean - oracle
  std::vector<double> standard_error;  // sqrt(variance / trials)
  std::size_t trials = 0;
};

struct BiasBoundReport {
  double epsilon = 0.0;
  double empirical_probability = 0.0;
  double chebyshev_lower_bound = 0.0;  // 1 - sum_i Var(h_i/kappa_i)/eps^2
  double standard_error = 0.0;         // Monte Carlo SE of the empirical probability
};

/// Exact expected loss: sums loss over every configuration of the binary
/// units, weighting by the product of conditional Bernoulli probabilities.
/// Branches with probability below 1e-300 are pruned. Throws
/// BudgetExceededError when the unit count exceeds the budget.
double enumerate_expected_loss(const NetworkSpec& spec, const NetworkParams& params,
                               const Tensor& input, std::size_t target, const LossSpec& loss,
                               const EnumerationBudget& budget);

/// Conditional expected loss with one unit forced to `value` (its own
/// probability factor removed; siblings and downstream marginalised).
double enumerate_expected_loss_pinned(const NetworkSpec& spec, const NetworkParams& params,
                                      const Tensor& input, std::size_t target,
                                      const LossSpec& loss, const EnumerationBudget& budget,
                                      std::size_t layer, std::size_t unit, std::size_t step,
                                      double value);

/// Central finite differences of the enumerated expected loss over every
/// parameter; step delta = step_scale * max(1, |param|). This is the bias
/// reference for every estimator.
std::vector<double> exact_gradient_fd(const NetworkSpec& spec, const NetworkParams& params,
                                      const Tensor& input, std::size_t target,
                                      const LossSpec& loss, const EnumerationBudget& budget,
                                      double step_scale = 1e-4);

/// Exact expected gradient by explicit per-unit marginalisation: for each
/// unit, E[(L1 - L0) * dF/dparam] with the conditional losses enumerated,
/// plus the pathwise expectation for readout weights. Independent route from
/// exact_gradient_fd. Feedforward networks only.
std::vector<double> exact_gradient_ram(const NetworkSpec& spec, const NetworkParams& params,
                                       const Tensor& input, std::size_t target,
                                       const LossSpec& loss, const EnumerationBudget& budget);

/// Score-function estimator moments: per trial, loss * sum over units of
/// dlog p(o_unit)/dparam (readout weights use the pathwise derivative). Bias
/// is referenced against exact_gradient_fd. Feedforward networks only.
EstimatorMoments reinforce_gradient(const NetworkSpec& spec, const NetworkParams& params,
                                    const Tensor& input, std::size_t target,
                                    const LossSpec& loss, std::size_t trials, const RngKey& key,
                                    const EnumerationBudget& budget);

/// Monte Carlo moments of a local estimator (forward + backward per trial),
/// bias referenced against exact_gradient_fd. EstimatorKind::Exact reports
/// the oracle itself with zero variance; Reinforce delegates to
/// reinforce_gradient. A precomputed oracle gradient may be passed to avoid
/// re-running the finite-difference enumeration.
EstimatorMoments estimator_moments(const NetworkSpec& spec, const NetworkParams& params,
                                   const Tensor& input, std::size_t target, const LossSpec& loss,
                                   const EstimatorConfig& estimator, std::size_t trials,
                                   const RngKey& key, const EnumerationBudget& budget,
                                   const std::vector<double>* precomputed_oracle = nullptr);

struct RaoBlackwellOptions {
  double a0 = 1.3;  // fixed downstream coefficient at o = 0
  double a1 = -0.7;
  /// Test hook: offset added to the closed form (negative control).
  double closed_form_bias = 0.0;
};

struct RaoBlackwellReport {
  double f = 0.0, temperature = 0.0;
  double closed_form[2] = {0.0, 0.0};  // conditional factor at o = 0, 1
  double mc_mean[2] = {0.0, 0.0};
  double mc_se[2] = {0.0, 0.0};
  std::size_t counts[2] = {0, 0};
  double var_agr = 0.0, var_gsst = 0.0;
  bool within_3se = false;
  bool variance_ok = false;  // Var(AGR path) <= Var(GS-ST path)
};

/// Monte Carlo check that the closed-form conditional expectation of the
/// relaxed surrogate derivative matches its sampled average given each output
/// state, and that the marginalised path has no more variance.
RaoBlackwellReport rao_blackwell_check(double f, double temperature, std::size_t trials,
                                       const RngKey& key, const RaoBlackwellOptions& options = {});

/// Joint concentration of standardised preactivations h*_i/kappa_i: exact
/// per-unit means/variances by enumeration, empirical joint probability by
/// Monte Carlo, and the union-bound/Chebyshev lower bound.
BiasBoundReport chebyshev_bound_check(const NetworkSpec& spec, const NetworkParams& params,
                                      const Tensor& input, double epsilon, std::size_t trials,
                                      const RngKey& key, const EnumerationBudget& budget);

}  // namespace binnlab
