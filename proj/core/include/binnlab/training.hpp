#pragma once

#include <cstdint>
#include <vector>

#include "binnlab/datasets.hpp"
#include "binnlab/elbo.hpp"
#include "binnlab/estimators.hpp"
#include "binnlab/network.hpp"

namespace binnlab {

/// Adam state with two learning-rate groups: weight-like parameters and
/// log-scales (the scales typically train an order of magnitude faster).
struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;
  double lr_weights = 0.005;
  double lr_scales = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState init(const ParamLayout& layout, double lr_weights, double lr_scales);
};

/// One Adam update with bias correction; lr_factor scales both group rates
/// (the cosine schedule multiplier).
void adam_step(NetworkParams& params, const std::vector<double>& grads, OptimizerState& state,
               double lr_factor = 1.0);

/// Cosine annealing: lr_min + (lr0 - lr_min) (1 + cos(pi e/(E-1)))/2 with
/// lr_min = lr0 / floor_divisor. Constant lr0 when E == 1.
double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0, double floor_divisor);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lambda_kl = 1e-6;
  KlMode kl_mode = KlMode::PerWeight;
  EstimatorConfig estimator;
  double lr_weights = 0.005;
  double lr_scales = 0.05;
  double cosine_floor_divisor = 50.0;
  bool shuffle = true;
  std::uint64_t seed = 1;
  /// Schedule horizon; 0 means `epochs`. Lets short probes reuse a longer
  /// schedule shape.
  std::size_t schedule_epochs = 0;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;     // mean objective over the epoch's batches
  double eval_accuracy = 0.0;  // deterministic (MFA) forward accuracy
  double kl_value = 0.0;       // lambda-weighted regulariser, 0 under lambda=0
  std::vector<double> per_layer_grad_norms;  // from the final batch
  double attenuation_factor = -1.0;          // -1 flags undefined (zero norms)
};

/// Geometric mean over adjacent layer pairs of norm_l / norm_{l+1}
/// (shallower over deeper); 1.0 means perfectly preserved gradient flow.
/// Returns -1 when fewer than 2 layers or any norm is zero.
double attenuation_factor(const std::vector<double>& per_layer_grad_norms);

/// One pass over the training split in shuffled batches. The objective is
/// mean data loss + lambda * KL; the NKL variant forces lambda to 0. Batch
/// order and sampling noise come from independent substreams keyed by
/// (seed, epoch), so a run can resume from any epoch boundary bit-exactly.
EpochMetrics train_epoch(const NetworkSpec& spec, NetworkParams& params, const Dataset& data,
                         const TrainConfig& config, OptimizerState& opt, std::size_t epoch);

/// Accuracy of the deterministic (MFA) forward pass over the given rows.
double evaluate_accuracy(const NetworkSpec& spec, const NetworkParams& params,
                         const Dataset& data, const std::vector<std::size_t>& rows);

/// L2 gradient norm per layer (all parameter blocks of that layer).
std::vector<double> per_layer_gradient_norms(const ParamLayout& layout,
                                             const std::vector<double>& grads,
                                             std::size_t num_layers);

}  // namespace binnlab
