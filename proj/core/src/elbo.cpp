#include "binnlab/elbo.hpp"

#include <cmath>
#include <stdexcept>

namespace binnlab {

namespace {

/// Iterate (mean, sigma) pairs of every variational weight block.
template <typename Fn>
void for_each_variational_weight(const NetworkSpec& spec, const NetworkParams& params, Fn&& fn) {
  for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    const ParamBlock& mb = params.layout.require(l, ParamKind::Means);
    const std::size_t rows = (ls.kind == LayerKind::Conv) ? ls.out_channels : ls.out_size;
    const std::size_t cols = mb.size() / rows;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        fn(l, ParamKind::Means, i, j, cols, params.values[mb.offset + i * cols + j],
           layer_sigma(spec, params, l, i, j));
      }
    }
    if (ls.recurrent) {
      const ParamBlock& rb = params.layout.require(l, ParamKind::RecurrentMeans);
      for (std::size_t i = 0; i < ls.out_size; ++i) {
        for (std::size_t k = 0; k < ls.out_size; ++k) {
          if (k == i) continue;  // no self-connections
          fn(l, ParamKind::RecurrentMeans, i, k, ls.out_size,
             params.values[rb.offset + i * ls.out_size + k],
             layer_recurrent_sigma(spec, params, l, i, k));
        }
      }
    }
  }
}

void add_log_scale_grad(const NetworkSpec& spec, const NetworkParams& params, std::size_t layer,
                        ParamKind scale_kind, std::size_t i, std::size_t j, std::size_t cols,
                        double contrib, std::vector<double>& grads) {
  const ParamBlock* sb = params.layout.find(layer, scale_kind);
  if (!sb) return;  // fixed-variance variants learn no scales
  switch (spec.layers[layer].granularity) {
    case ScaleGranularity::PerLayer:
      grads[sb->offset] += contrib;
      break;
    case ScaleGranularity::PerNeuron:
      grads[sb->offset + i] += contrib;
      break;
    case ScaleGranularity::PerWeight:
      grads[sb->offset + i * cols + j] += contrib;
      break;
  }
}

void accumulate_conv_unit(const NetworkSpec& spec, const NetworkParams& params,
                          std::size_t layer, const LayerStepTrace& step, std::size_t unit,
                          double dh_in, double dk2_in, std::vector<double>& grads) {
  const LayerSpec& ls = spec.layers[layer];
  const ParamBlock& mb = params.layout.require(layer, ParamKind::Means);
  const std::size_t oh = ls.out_h(), ow = ls.out_w();
  const std::size_t c = unit / (oh * ow);
  const std::size_t y = (unit / ow) % oh;
  const std::size_t x = unit % ow;
  const std::size_t kstride = ls.in_channels * ls.kernel * ls.kernel;
  for (std::size_t ic = 0; ic < ls.in_channels; ++ic) {
    for (std::size_t ky = 0; ky < ls.kernel; ++ky) {
      const std::ptrdiff_t iy =
          static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(ls.pad);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ls.in_h)) continue;
      for (std::size_t kx = 0; kx < ls.kernel; ++kx) {
        const std::ptrdiff_t ix =
            static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(ls.pad);
        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(ls.in_w)) continue;
        const std::size_t in_flat = (ic * ls.in_h + static_cast<std::size_t>(iy)) * ls.in_w +
                                    static_cast<std::size_t>(ix);
        const std::size_t k_flat = (ic * ls.kernel + ky) * ls.kernel + kx;
        const double o = step.inputs[in_flat];
        grads[mb.offset + c * kstride + k_flat] += dh_in * o;
        if (o != 0.0) {
          const double s = layer_sigma(spec, params, layer, c, k_flat);
          add_log_scale_grad(spec, params, layer, ParamKind::LogScales, c, k_flat, kstride,
                             dk2_in * 2.0 * s * s * o * o, grads);
        }
      }
    }
  }
}

}  // namespace

double elbo_regularizer(const NetworkSpec& spec, const NetworkParams& params,
                        const ForwardTrace* traces, KlMode mode, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("elbo_regularizer: lambda must be >= 0");
  if (lambda == 0.0) return 0.0;

  if (mode == KlMode::PerWeight) {
    double total = 0.0;
    for_each_variational_weight(spec, params,
                                [&](std::size_t, ParamKind, std::size_t, std::size_t,
                                    std::size_t, double m, double sigma) {
                                  total += kl_per_weight(m, sigma);
                                });
    return lambda * total;
  }

  if (traces == nullptr || traces->samples.empty()) {
    throw std::invalid_argument("elbo_regularizer: per-neuron mode needs forward traces");
  }
  double total = 0.0;
  for (const SampleTrace& st : traces->samples) {
    for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
      for (const LayerStepTrace& step : st.steps[l]) {
        for (std::size_t i = 0; i < step.h_star.size(); ++i) {
          total += kl_per_neuron(step.h_star[i], std::sqrt(step.kappa_sq[i]));
        }
      }
    }
  }
  return lambda * total / static_cast<double>(traces->samples.size());
}

void accumulate_elbo_gradient(const NetworkSpec& spec, const NetworkParams& params,
                              const ForwardTrace* traces, KlMode mode, double lambda,
                              std::vector<double>& grads) {
  if (grads.size() != params.layout.total) {
    throw std::invalid_argument("accumulate_elbo_gradient: gradient size mismatch");
  }
  if (lambda == 0.0) return;

  if (mode == KlMode::PerWeight) {
    for_each_variational_weight(
        spec, params,
        [&](std::size_t layer, ParamKind kind, std::size_t i, std::size_t j, std::size_t cols,
            double m, double sigma) {
          const double denom = sigma * sigma + m * m;
          const ParamBlock& mb = params.layout.require(layer, kind);
          grads[mb.offset + i * cols + j] += lambda * m / denom;
          // d/dlog sigma of 0.5 ln(1 + (m/sigma)^2) = -m^2 / (sigma^2 + m^2)
          const ParamKind scale_kind = (kind == ParamKind::Means)
                                           ? ParamKind::LogScales
                                           : ParamKind::RecurrentLogScales;
          add_log_scale_grad(spec, params, layer, scale_kind, i, j, cols,
                             lambda * (-(m * m) / denom), grads);
        });
    return;
  }

  if (traces == nullptr || traces->samples.empty()) {
    throw std::invalid_argument("accumulate_elbo_gradient: per-neuron mode needs forward traces");
  }
  const double batch_scale = lambda / static_cast<double>(traces->samples.size());

  for (const SampleTrace& st : traces->samples) {
    for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
      const LayerSpec& ls = spec.layers[l];
      const ParamBlock& mb = params.layout.require(l, ParamKind::Means);
      const std::size_t steps_count = st.steps[l].size();
      const std::size_t n = ls.out_size;

      // Adjoints through the spiking decay chains; single step for
      // feedforward layers. Gradients stop at binary outputs.
      std::vector<double> ah_next(n, 0.0), ak2_next(n, 0.0);
      for (std::size_t ti = steps_count; ti-- > 0;) {
        const LayerStepTrace& step = st.steps[l][ti];
        std::vector<double> ah(n), ak2(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double kappa_sq = step.kappa_sq[i];
          const double h = step.h_star[i];
          const double denom = kappa_sq + h * h;
          const double d_h = batch_scale * h / denom;
          // d/d kappa^2 of 0.5 ln(1 + h^2/kappa^2) = -h^2 / (2 kappa^2 (kappa^2 + h^2))
          const double d_k2 = batch_scale * (-(h * h) / (2.0 * kappa_sq * denom));
          if (ls.kind == LayerKind::Lif) {
            ah[i] = d_h + ls.beta * ah_next[i];
            ak2[i] = d_k2 + ls.beta * ls.beta * ak2_next[i];
          } else {
            ah[i] = d_h;
            ak2[i] = d_k2;
          }
        }

        for (std::size_t i = 0; i < n; ++i) {
          double dh_in = ah[i];
          double dk2_in = ak2[i];
          if (ls.residual) {
            const ParamBlock& scb = params.layout.require(l, ParamKind::ChannelScale);
            const ParamBlock& bb = params.layout.require(l, ParamKind::ChannelBias);
            const double s = params.values[scb.offset + i];
            grads[scb.offset + i] +=
                ah[i] * step.inner_h[i] + ak2[i] * 2.0 * s * step.inner_kappa_sq[i];
            grads[bb.offset + i] += ah[i];
            dh_in = ah[i] * s;
            dk2_in = ak2[i] * s * s;
          }
          if (ls.kind == LayerKind::Conv) {
            accumulate_conv_unit(spec, params, l, step, i, dh_in, dk2_in, grads);
            continue;
          }
          for (std::size_t j = 0; j < ls.in_size; ++j) {
            const double o = step.inputs[j];
            grads[mb.offset + i * ls.in_size + j] += dh_in * o;
            if (o != 0.0) {
              const double s = layer_sigma(spec, params, l, i, j);
              add_log_scale_grad(spec, params, l, ParamKind::LogScales, i, j, ls.in_size,
                                 dk2_in * 2.0 * s * s * o * o, grads);
            }
          }
          if (ls.recurrent) {
            const ParamBlock& rb = params.layout.require(l, ParamKind::RecurrentMeans);
            for (std::size_t k = 0; k < n; ++k) {
              if (k == i) continue;
              const double o = step.prev_outputs[k];
              grads[rb.offset + i * n + k] += dh_in * o;
              if (o != 0.0) {
                const double s = layer_recurrent_sigma(spec, params, l, i, k);
                add_log_scale_grad(spec, params, l, ParamKind::RecurrentLogScales, i, k, n,
                                   dk2_in * 2.0 * s * s * o * o, grads);
              }
            }
          }
        }
        ah_next = ah;
        ak2_next = ak2;
      }
    }
  }
}

}  // namespace binnlab
