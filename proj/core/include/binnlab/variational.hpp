#pragma once

#include <cstddef>
#include <optional>

#include "binnlab/tensor.hpp"

namespace binnlab {

/// Additive floor on every accumulated noise variance so the firing
/// probability stays defined when no input is active.
inline constexpr double kVarianceFloor = 1e-12;

enum class ScaleGranularity { PerLayer, PerNeuron, PerWeight };

enum class KlMode { PerWeight, PerNeuron };

/// Gaussian posterior over a layer's weights: means m_ij plus log standard
/// deviations at the configured granularity (scalar, per output neuron, or
/// one per weight). Scales live in log space so positivity needs no
/// projection. Recurrent blocks are optional and follow the same scheme.
struct PosteriorParams {
  Tensor means;                          // [out, in]
  Tensor log_scales;                     // [1], [out], or [out, in]
  ScaleGranularity granularity = ScaleGranularity::PerLayer;
  std::optional<Tensor> recurrent_means;       // [out, out]
  std::optional<Tensor> recurrent_log_scales;  // granularity-shaped

  void validate() const;
  /// sigma_ij resolved through the granularity.
  double sigma(std::size_t i, std::size_t j) const;
  double recurrent_sigma(std::size_t i, std::size_t k) const;
};

/// Gaussian prior, either fixed (alpha, tau^2) or per-weight empirical Bayes.
struct PriorParams {
  Tensor means;      // alpha_ij
  Tensor variances;  // tau_ij^2
  enum class Mode { Fixed, EmpiricalBayes } mode = Mode::Fixed;

  void validate() const;
};

/// Per-neuron Gaussian preactivation statistics: h*_i and kappa_i^2.
struct ReparamOutput {
  Tensor h_star;
  Tensor kappa_sq;
};

/// Dense local reparameterisation over binary inputs:
///   h*_i = sum_j m_ij o_j,   kappa_i^2 = sum_j sigma_ij^2 o_j^2 + floor.
ReparamOutput local_reparam_dense(const PosteriorParams& params, const Tensor& inputs);

/// 2D convolutional form (stride 1, zero padding). h* is the cross-correlation
/// of the mean kernel with the input map; kappa^2 cross-correlates the squared
/// scale kernel with the squared input map. Noise enters only through kappa^2
/// at sampling time, which realises independent weight draws per position.
/// mean_kernel and scale_kernel are [outC, inC, k, k]; input [inC, H, W].
ReparamOutput local_reparam_conv(const Tensor& mean_kernel, const Tensor& scale_kernel,
                                 const Tensor& input_map, std::size_t pad);

/// KL(N(m, sigma^2) || N(alpha, tau^2)) in nats:
///   ln(sqrt(tau^2)/sigma) + ((m - alpha)^2 + sigma^2 - tau^2) / (2 tau^2).
double kl_gaussian(double m, double sigma, double alpha, double tau_sq);

/// Empirical-Bayes prior variance as printed in the source derivation,
/// (m^2 + sigma^2) / 2. Note: minimising kl_gaussian over tau^2 alone gives
/// (m - alpha)^2 + sigma^2 instead; both prior modes are exposed and the
/// per-weight regulariser below is the form actually optimised.
double empirical_bayes_tau_sq(double m, double sigma);

/// Per-weight regulariser 0.5 ln(1 + (m/sigma)^2), nonnegative, zero iff
/// m = 0. Equals kl_gaussian(m, sigma, 0, m^2 + sigma^2) exactly; additive
/// constants are dropped since they never affect gradients.
double kl_per_weight(double m, double sigma);

/// Per-neuron regulariser 0.5 ln(1 + (h*/kappa)^2) on the current forward
/// pass's preactivation statistics; invariant under joint scaling of both.
double kl_per_neuron(double h_star, double kappa);

}  // namespace binnlab
