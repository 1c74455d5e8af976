#pragma once

#include <cstddef>
#include <vector>

#include "binnlab/variational.hpp"

namespace binnlab {

/// Training variants. Full samples unit outputs and learns posterior scales;
/// Mfa thresholds the noiseless preactivation (backward still sees the
/// learned kappa); Fpv samples with a fixed posterior std and learns means
/// only; Nkl is Fpv with the KL weight forced to zero.
enum class Variant { Full, Mfa, Fpv, Nkl };

inline bool variant_samples(Variant v) { return v != Variant::Mfa; }
inline bool variant_learns_scales(Variant v) {
  return v == Variant::Full || v == Variant::Mfa;
}

enum class LayerKind { Dense, Conv, Lif, Readout };

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t in_size = 0;   // flattened input width
  std::size_t out_size = 0;  // flattened output width (dense/lif/readout)
  bool residual = false;     // dense only; adds identity path + per-channel scale/bias
  bool recurrent = false;    // lif only
  double theta = 0.0;        // firing threshold
  double beta = 0.0;         // membrane decay (lif) or integrator decay (readout)
  ScaleGranularity granularity = ScaleGranularity::PerLayer;

  // conv geometry (kind == Conv); out_size = out_channels * out_h() * out_w()
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t kernel = 0, pad = 0;

  std::size_t out_h() const { return in_h + 2 * pad - kernel + 1; }
  std::size_t out_w() const { return in_w + 2 * pad - kernel + 1; }
  bool is_stochastic() const { return kind != LayerKind::Readout; }
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  Variant variant = Variant::Full;
  double fpv_sigma = 0.5;        // posterior std under Fpv/Nkl
  std::size_t timesteps = 1;     // spiking unroll length
  double base_noise_var = 0.0;   // per-step firing variance added in spiking layers
  // BPTT path through kappa^2's dependence on past outputs; off for ablation.
  bool kappa_feedback_grad = true;

  void validate() const;
  bool is_spiking() const;
  std::size_t input_size() const { return layers.front().in_size; }
  std::size_t num_classes() const { return layers.back().out_size; }
  /// Binary units per forward pass (spiking units count once per timestep).
  std::size_t stochastic_unit_count() const;
};

/// Plain dense stack: widths = {input, hidden..., last_hidden}, then readout.
NetworkSpec make_mlp_spec(const std::vector<std::size_t>& widths, std::size_t classes,
                          double theta, ScaleGranularity granularity, Variant variant);

/// Input dense layer, `blocks` residual blocks of constant width, readout.
NetworkSpec make_residual_mlp_spec(std::size_t input_bits, std::size_t width,
                                   std::size_t blocks, std::size_t classes, double theta,
                                   ScaleGranularity granularity, Variant variant);

/// Recurrent spiking stack over `timesteps`, leaky-integrator readout.
NetworkSpec make_lif_spec(std::size_t channels, const std::vector<std::size_t>& hidden,
                          std::size_t classes, std::size_t timesteps, double beta,
                          double theta, bool recurrent, double readout_beta,
                          ScaleGranularity granularity, Variant variant,
                          double base_noise_var);

}  // namespace binnlab
