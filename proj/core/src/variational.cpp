#include "binnlab/variational.hpp"

#include <cmath>
#include <stdexcept>

namespace binnlab {

namespace {

void check_scale_shape(const Tensor& log_scales, ScaleGranularity granularity,
                       std::size_t out, std::size_t in, const char* what) {
  bool ok = false;
  switch (granularity) {
    case ScaleGranularity::PerLayer:
      ok = log_scales.size() == 1;
      break;
    case ScaleGranularity::PerNeuron:
      ok = log_scales.rank() == 1 && log_scales.size() == out;
      break;
    case ScaleGranularity::PerWeight:
      ok = log_scales.rank() == 2 && log_scales.dim(0) == out && log_scales.dim(1) == in;
      break;
  }
  if (!ok) {
    throw std::invalid_argument(std::string(what) + ": log_scales shape " +
                                log_scales.shape_string() + " does not match granularity");
  }
}

double scale_at(const Tensor& log_scales, ScaleGranularity granularity, std::size_t i,
                std::size_t j, std::size_t in) {
  switch (granularity) {
    case ScaleGranularity::PerLayer:
      return std::exp(log_scales[0]);
    case ScaleGranularity::PerNeuron:
      return std::exp(log_scales[i]);
    case ScaleGranularity::PerWeight:
      return std::exp(log_scales[i * in + j]);
  }
  return 0.0;
}

void check_binary(const Tensor& t, const char* what) {
  if (!t.is_binary()) {
    throw std::invalid_argument(std::string(what) + ": inputs must be exactly 0/1");
  }
}

}  // namespace

void PosteriorParams::validate() const {
  if (means.rank() != 2) throw std::invalid_argument("PosteriorParams: means must be [out, in]");
  const std::size_t out = means.dim(0), in = means.dim(1);
  check_scale_shape(log_scales, granularity, out, in, "PosteriorParams");
  if (recurrent_means) {
    if (recurrent_means->rank() != 2 || recurrent_means->dim(0) != out ||
        recurrent_means->dim(1) != out) {
      throw std::invalid_argument("PosteriorParams: recurrent means must be [out, out]");
    }
    if (!recurrent_log_scales) {
      throw std::invalid_argument("PosteriorParams: recurrent scales missing");
    }
    check_scale_shape(*recurrent_log_scales, granularity, out, out, "PosteriorParams(recurrent)");
  }
}

double PosteriorParams::sigma(std::size_t i, std::size_t j) const {
  return scale_at(log_scales, granularity, i, j, means.dim(1));
}

double PosteriorParams::recurrent_sigma(std::size_t i, std::size_t k) const {
  return scale_at(*recurrent_log_scales, granularity, i, k, means.dim(0));
}

void PriorParams::validate() const {
  if (!means.same_shape(variances)) {
    throw std::invalid_argument("PriorParams: means/variances shape mismatch");
  }
  if (mode == Mode::Fixed) {
    for (double v : variances.data()) {
      if (!(v > 0.0)) throw std::invalid_argument("PriorParams: fixed variances must be > 0");
    }
  }
}

ReparamOutput local_reparam_dense(const PosteriorParams& params, const Tensor& inputs) {
  params.validate();
  check_binary(inputs, "local_reparam_dense");
  const std::size_t out = params.means.dim(0), in = params.means.dim(1);
  if (inputs.rank() != 1 || inputs.size() != in) {
    throw std::invalid_argument("local_reparam_dense: input shape " + inputs.shape_string() +
                                " does not match [" + std::to_string(in) + "]");
  }
  ReparamOutput r{Tensor({out}), Tensor({out})};
  for (std::size_t i = 0; i < out; ++i) {
    double h = 0.0, v = 0.0;
    for (std::size_t j = 0; j < in; ++j) {
      const double o = inputs[j];
      if (o == 0.0) continue;
      h += params.means(i, j) * o;
      const double s = params.sigma(i, j);
      v += s * s * o * o;
    }
    r.h_star[i] = h;
    r.kappa_sq[i] = v + kVarianceFloor;
  }
  return r;
}

ReparamOutput local_reparam_conv(const Tensor& mean_kernel, const Tensor& scale_kernel,
                                 const Tensor& input_map, std::size_t pad) {
  if (mean_kernel.rank() != 4 || !mean_kernel.same_shape(scale_kernel)) {
    throw std::invalid_argument("local_reparam_conv: kernels must be matching [outC, inC, k, k]");
  }
  if (input_map.rank() != 3) {
    throw std::invalid_argument("local_reparam_conv: input must be [inC, H, W]");
  }
  check_binary(input_map, "local_reparam_conv");
  const std::size_t out_c = mean_kernel.dim(0), in_c = mean_kernel.dim(1);
  const std::size_t kh = mean_kernel.dim(2), kw = mean_kernel.dim(3);
  if (input_map.dim(0) != in_c) {
    throw std::invalid_argument("local_reparam_conv: channel mismatch");
  }
  const std::size_t h = input_map.dim(1), w = input_map.dim(2);
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw std::invalid_argument("local_reparam_conv: kernel larger than padded input");
  }
  const std::size_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;

  ReparamOutput r{Tensor({out_c, oh, ow}), Tensor({out_c, oh, ow})};
  for (std::size_t c = 0; c < out_c; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc_h = 0.0, acc_v = 0.0;
        for (std::size_t ic = 0; ic < in_c; ++ic) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const double o = input_map(ic, static_cast<std::size_t>(iy),
                                         static_cast<std::size_t>(ix));
              if (o == 0.0) continue;
              acc_h += mean_kernel(c, ic, ky, kx) * o;
              const double s = scale_kernel(c, ic, ky, kx);
              acc_v += s * s * o * o;
            }
          }
        }
        r.h_star(c, y, x) = acc_h;
        r.kappa_sq(c, y, x) = acc_v + kVarianceFloor;
      }
    }
  }
  return r;
}

double kl_gaussian(double m, double sigma, double alpha, double tau_sq) {
  if (!(sigma > 0.0) || !(tau_sq > 0.0)) {
    throw std::invalid_argument("kl_gaussian: scales must be positive");
  }
  const double d = m - alpha;
  return 0.5 * std::log(tau_sq / (sigma * sigma)) +
         (d * d + sigma * sigma - tau_sq) / (2.0 * tau_sq);
}

double empirical_bayes_tau_sq(double m, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("empirical_bayes_tau_sq: sigma must be > 0");
  return 0.5 * (m * m + sigma * sigma);
}

double kl_per_weight(double m, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("kl_per_weight: sigma must be > 0");
  const double r = m / sigma;
  return 0.5 * std::log1p(r * r);
}

double kl_per_neuron(double h_star, double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("kl_per_neuron: kappa must be > 0");
  const double r = h_star / kappa;
  return 0.5 * std::log1p(r * r);
}

}  // namespace binnlab
