#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "binnlab/estimators.hpp"
#include "binnlab/network_spec.hpp"
#include "binnlab/params.hpp"
#include "binnlab/rng.hpp"
#include "binnlab/tensor.hpp"
#include "binnlab/variational.hpp"

namespace binnlab {

/// Per-timestep recurrent state: noiseless membrane potential, accumulated
/// weight-noise variance (raw, before base noise and floor), last outputs.
struct LifState {
  Tensor h_star;
  Tensor kappa_sq_acc;
  Tensor prev_outputs;

  static LifState zero(std::size_t width);
};

/// Forward record of one layer at one timestep, complete enough to replay the
/// backward pass deterministically.
struct LayerStepTrace {
  Tensor inputs;        // activations seen by this layer at this step
  Tensor h_star;        // effective preactivation per unit
  Tensor kappa_sq;      // effective sampling variance (incl. base noise + floor)
  Tensor outputs;       // binary
  Tensor u;             // uniform draws; empty under MFA
  // residual blocks: inner preactivation before scale/bias/identity
  Tensor inner_h, inner_kappa_sq;
  // lif: state entering the step and raw variance leaving it
  Tensor prev_h_star, prev_kappa_sq_acc, prev_outputs, kappa_sq_acc;
};

struct SampleTrace {
  std::vector<std::vector<LayerStepTrace>> steps;  // [layer][t]; readout slot empty
  std::vector<Tensor> readout_potentials;          // per t, [classes]
  Tensor logits;
};

struct ForwardTrace {
  std::vector<SampleTrace> samples;
};

/// Materialise a stochastic layer's posterior view. Under Fpv/Nkl the scales
/// are the fixed fpv_sigma (per-layer granularity); otherwise they come from
/// the learned log-scale block.
PosteriorParams make_layer_posterior(const NetworkSpec& spec, const NetworkParams& params,
                                     std::size_t layer);

/// Preactivation-only computations (outputs left empty); the enumeration
/// oracles walk these with forced unit configurations instead of sampling.
LayerStepTrace dense_preactivation(const NetworkSpec& spec, const NetworkParams& params,
                                   std::size_t layer, const Tensor& inputs);
LayerStepTrace conv_preactivation(const NetworkSpec& spec, const NetworkParams& params,
                                  std::size_t layer, const Tensor& inputs);
LayerStepTrace lif_preactivation(const NetworkSpec& spec, const NetworkParams& params,
                                 std::size_t layer, const LifState& state,
                                 const Tensor& inputs_t);
/// Fill outputs (and the uniform draws under sampling variants).
void sample_step_outputs(const NetworkSpec& spec, std::size_t layer, LayerStepTrace& trace,
                         RngStream* rng);
/// State carried to the next timestep once a step's outputs are fixed.
LifState lif_state_after(const LayerStepTrace& trace);

/// Resolved posterior std for a layer's weight (i, j) under the network
/// variant and granularity. Conv layers index j over [in_c * k * k].
double layer_sigma(const NetworkSpec& spec, const NetworkParams& params, std::size_t layer,
                   std::size_t i, std::size_t j);
double layer_recurrent_sigma(const NetworkSpec& spec, const NetworkParams& params,
                             std::size_t layer, std::size_t i, std::size_t k);

/// One dense stochastic layer (residual combine included when configured).
/// Sampling uses o = H(F - 1 + u) with u uniform; MFA thresholds h* - theta.
/// rng may be null only under MFA.
LayerStepTrace binary_dense_forward(const NetworkSpec& spec, const NetworkParams& params,
                                    std::size_t layer, const Tensor& inputs, RngStream* rng);

/// Residual block: h*_tot = scale * h*_inner + bias + identity, thresholded
/// as one binary unit per channel. Requires spec.layers[layer].residual.
LayerStepTrace residual_block_forward(const NetworkSpec& spec, const NetworkParams& params,
                                      std::size_t layer, const Tensor& inputs, RngStream* rng);

/// Binary convolutional layer (stride 1, zero padding); each output position
/// is an independent binary unit.
LayerStepTrace conv_forward(const NetworkSpec& spec, const NetworkParams& params,
                            std::size_t layer, const Tensor& inputs, RngStream* rng);

/// One leaky-integrate-and-fire step:
///   h*_t    = beta h*_{t-1} + sum_j m_ij o_{j,t} + sum_{k != i} p_ik o_{k,t-1}
///             - theta o_{i,t-1}
///   kap2_t  = beta^2 kap2_{t-1} + sum_j sig_ij^2 o_{j,t}^2
///             + sum_{k != i} nu_ik^2 o_{k,t-1}^2
/// The firing variance adds the per-step base noise and the floor on top of
/// the raw recursion value.
std::pair<LayerStepTrace, LifState> lif_step(const NetworkSpec& spec,
                                             const NetworkParams& params, std::size_t layer,
                                             const LifState& state, const Tensor& inputs_t,
                                             RngStream* rng);

/// Non-spiking leaky-integrator readout over a spike train: logit_c is the
/// sum over time of the readout potential R_{c,t} = beta R_{c,t-1} + W o_t.
Tensor readout_logits(const NetworkSpec& spec, const NetworkParams& params, std::size_t layer,
                      const std::vector<Tensor>& outputs_over_time);

/// Batch forward. BNN batches are [B, inputs]; spiking batches [B, T, channels].
/// Deterministic given (spec, params, batch, key): sample s at layer l, step t
/// draws from key.child(s).child(l).child(t).
std::pair<Tensor, ForwardTrace> network_forward(const NetworkSpec& spec,
                                                const NetworkParams& params,
                                                const Tensor& batch, const RngKey& key);

/// Backward composition over a recorded trace: applies the configured unit
/// rule everywhere, propagates through weights, residual identity paths,
/// per-channel scale/bias, and (for spiking) back through both the beta h*
/// and beta^2 kappa^2 recursions plus reset and recurrent paths. Gradients
/// are summed over the batch and aligned with params.layout.
std::vector<double> network_backward(const NetworkSpec& spec, const NetworkParams& params,
                                     const ForwardTrace& trace, const Tensor& loss_grads,
                                     const EstimatorConfig& estimator);

}  // namespace binnlab
