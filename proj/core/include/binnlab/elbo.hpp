#pragma once

#include <vector>

#include "binnlab/network.hpp"
#include "binnlab/variational.hpp"

namespace binnlab {

/// KL regulariser of the variational objective, already weighted by lambda.
/// PerWeight sums 0.5 ln(1 + (m/sigma)^2) over every variational weight
/// (feedforward and recurrent); PerNeuron sums the per-neuron form over all
/// units and timesteps from the traces, averaged over the batch. lambda = 0
/// returns exactly 0. Readout weights and per-channel scale/bias carry no
/// posterior and are excluded.
double elbo_regularizer(const NetworkSpec& spec, const NetworkParams& params,
                        const ForwardTrace* traces, KlMode mode, double lambda);

/// Adds lambda * d(regulariser)/d(params) into a layout-aligned gradient
/// vector. The per-neuron form differentiates through each unit's own
/// preactivation statistics (including the spiking beta-decay chains) but
/// stops at binary outputs, so it composes additively with the estimator
/// backward on frozen traces.
void accumulate_elbo_gradient(const NetworkSpec& spec, const NetworkParams& params,
                              const ForwardTrace* traces, KlMode mode, double lambda,
                              std::vector<double>& grads);

}  // namespace binnlab
