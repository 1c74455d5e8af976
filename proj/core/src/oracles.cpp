#include "binnlab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>

#include "binnlab/parallel.hpp"
#include "binnlab/special_functions.hpp"

namespace binnlab {

namespace {

constexpr double kPruneProbability = 1e-300;

void check_budget(const NetworkSpec& spec, const EnumerationBudget& budget) {
  const std::size_t n = spec.stochastic_unit_count();
  if (n > budget.max_stochastic_units) {
    throw BudgetExceededError("enumeration budget exceeded: " + std::to_string(n) +
                              " stochastic units > " +
                              std::to_string(budget.max_stochastic_units));
  }
}

void check_oracle_input(const NetworkSpec& spec, const Tensor& input) {
  if (spec.is_spiking()) {
    if (input.rank() != 2 || input.dim(0) != spec.timesteps ||
        input.dim(1) != spec.input_size()) {
      throw std::invalid_argument("oracle input must be [T, channels] for spiking specs");
    }
  } else if (input.rank() != 1 || input.size() != spec.input_size()) {
    throw std::invalid_argument("oracle input must be [inputs] for feedforward specs");
  }
  if (!input.is_binary()) throw std::invalid_argument("oracle input must be binary");
}

struct Pin {
  std::size_t layer = 0, unit = 0, step = 0;
  double value = 0.0;
};

struct WalkHooks {
  /// Leaf: final logits, per-step top-layer outputs, path probability.
  std::function<void(const Tensor&, const std::vector<Tensor>&, double)> on_leaf;
  /// Stage: preactivation of (layer, step) under a prefix with probability
  /// `prob`, before this stage's own configuration branches.
  std::function<void(std::size_t, std::size_t, const LayerStepTrace&, double)> on_stage;
};

/// Depth-first enumeration over all unit configurations, layer by layer and
/// step by step, carrying conditional probabilities forward.
class ConfigWalker {
 public:
  ConfigWalker(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
               const WalkHooks& hooks, const Pin* pin)
      : spec_(spec), params_(params), input_(input), hooks_(hooks), pin_(pin),
        readout_(spec.layers.size() - 1) {}

  void run() {
    std::vector<LifState> states;
    if (spec_.is_spiking()) {
      for (const LayerSpec& ls : spec_.layers) states.push_back(LifState::zero(ls.out_size));
    }
    Tensor potential({spec_.num_classes()});
    Tensor logits({spec_.num_classes()});
    std::vector<Tensor> tops;
    step_layer(0, 0, input_slice(0), states, potential, logits, tops, 1.0);
  }

 private:
  Tensor input_slice(std::size_t t) const {
    if (!spec_.is_spiking()) return input_;
    Tensor a({spec_.input_size()});
    for (std::size_t c = 0; c < spec_.input_size(); ++c) a[c] = input_(t, c);
    return a;
  }

  void step_layer(std::size_t t, std::size_t layer, const Tensor& activ,
                  std::vector<LifState> states, Tensor potential, Tensor logits,
                  std::vector<Tensor> tops, double prob) {
    if (layer == readout_) {
      // Accumulate the readout for this step, then advance time or finish.
      const LayerSpec& ro = spec_.layers[readout_];
      auto w = params_.span_of(readout_, ParamKind::ReadoutWeights);
      for (std::size_t c = 0; c < ro.out_size; ++c) {
        double drive = 0.0;
        for (std::size_t j = 0; j < ro.in_size; ++j) drive += w[c * ro.in_size + j] * activ[j];
        potential[c] = ro.beta * potential[c] + drive;
        logits[c] += potential[c];
      }
      tops.push_back(activ);
      if (t + 1 == spec_.timesteps) {
        hooks_.on_leaf(logits, tops, prob);
        return;
      }
      step_layer(t + 1, 0, input_slice(t + 1), std::move(states), std::move(potential),
                 std::move(logits), std::move(tops), prob);
      return;
    }

    const LayerSpec& ls = spec_.layers[layer];
    LayerStepTrace pre;
    switch (ls.kind) {
      case LayerKind::Dense:
        pre = dense_preactivation(spec_, params_, layer, activ);
        break;
      case LayerKind::Conv:
        pre = conv_preactivation(spec_, params_, layer, activ);
        break;
      case LayerKind::Lif:
        pre = lif_preactivation(spec_, params_, layer, states[layer], activ);
        break;
      case LayerKind::Readout:
        break;
    }
    if (hooks_.on_stage) hooks_.on_stage(layer, t, pre, prob);

    const std::size_t width = ls.out_size;
    std::vector<double> fire(width);
    for (std::size_t i = 0; i < width; ++i) {
      fire[i] = fire_probability(pre.h_star[i], std::sqrt(pre.kappa_sq[i]), ls.theta);
    }
    const bool pinned_here = pin_ && pin_->layer == layer && pin_->step == t;

    std::vector<double> config(width, 0.0);
    enumerate_units(t, layer, pre, fire, pinned_here, 0, config, states, potential, logits,
                    tops, prob);
  }

  void enumerate_units(std::size_t t, std::size_t layer, const LayerStepTrace& pre,
                       const std::vector<double>& fire, bool pinned_here, std::size_t unit,
                       std::vector<double>& config, std::vector<LifState>& states,
                       Tensor& potential, Tensor& logits, std::vector<Tensor>& tops,
                       double prob) {
    if (prob < kPruneProbability) return;
    const std::size_t width = fire.size();
    if (unit == width) {
      LayerStepTrace step = pre;
      step.outputs = Tensor::from({width}, config);
      Tensor outputs = step.outputs;
      if (spec_.layers[layer].kind == LayerKind::Lif) {
        std::vector<LifState> next_states = states;
        next_states[layer] = lif_state_after(step);
        step_layer(t, layer + 1, outputs, std::move(next_states), potential, logits, tops, prob);
      } else {
        step_layer(t, layer + 1, outputs, states, potential, logits, tops, prob);
      }
      return;
    }
    if (pinned_here && pin_->unit == unit) {
      // Forced value, probability factor excluded (conditional expectation).
      config[unit] = pin_->value;
      enumerate_units(t, layer, pre, fire, pinned_here, unit + 1, config, states, potential,
                      logits, tops, prob);
      return;
    }
    config[unit] = 1.0;
    enumerate_units(t, layer, pre, fire, pinned_here, unit + 1, config, states, potential,
                    logits, tops, prob * fire[unit]);
    config[unit] = 0.0;
    enumerate_units(t, layer, pre, fire, pinned_here, unit + 1, config, states, potential,
                    logits, tops, prob * (1.0 - fire[unit]));
  }

  const NetworkSpec& spec_;
  const NetworkParams& params_;
  const Tensor& input_;
  const WalkHooks& hooks_;
  const Pin* pin_;
  std::size_t readout_;
};

double expected_loss_impl(const NetworkSpec& spec, const NetworkParams& params,
                          const Tensor& input, std::size_t target, const LossSpec& loss,
                          const Pin* pin) {
  double total = 0.0;
  WalkHooks hooks;
  hooks.on_leaf = [&](const Tensor& logits, const std::vector<Tensor>&, double prob) {
    total += prob * eval_loss(loss, logits, target).first;
  };
  ConfigWalker(spec, params, input, hooks, pin).run();
  return total;
}

/// coeff * dF_unit/dparam for a feedforward stochastic layer, written into a
/// layout-aligned gradient vector. Zero at the probability clip bounds.
void accumulate_prob_grads(const NetworkSpec& spec, const NetworkParams& params,
                           std::size_t layer, const LayerStepTrace& pre, std::size_t unit,
                           double coeff, std::vector<double>& grads) {
  if (coeff == 0.0) return;
  const LayerSpec& ls = spec.layers[layer];
  const double kappa = std::sqrt(pre.kappa_sq[unit]);
  const double z = (pre.h_star[unit] - ls.theta) / kappa;
  const double f_raw = std_normal_cdf(z);
  if (f_raw <= kProbClipLo || f_raw >= kProbClipHi) return;
  const double density = std_normal_pdf(z);
  const double df_dh = density / kappa;
  const double df_dkappa = density * (-z / kappa);

  const ParamBlock& mb = params.layout.require(layer, ParamKind::Means);
  const ParamBlock* sb = params.layout.find(layer, ParamKind::LogScales);

  auto add_log_scale = [&](std::size_t i, std::size_t j, std::size_t in_stride, double dv,
                           double activity) {
    if (!sb) return;
    const double s = layer_sigma(spec, params, layer, i, j);
    const double contrib = coeff * dv * 2.0 * s * s * activity;
    switch (ls.granularity) {
      case ScaleGranularity::PerLayer:
        grads[sb->offset] += contrib;
        break;
      case ScaleGranularity::PerNeuron:
        grads[sb->offset + i] += contrib;
        break;
      case ScaleGranularity::PerWeight:
        grads[sb->offset + i * in_stride + j] += contrib;
        break;
    }
  };

  if (ls.kind == LayerKind::Dense) {
    double dh_in = df_dh;
    double dv_in = df_dkappa / (2.0 * kappa);
    if (ls.residual) {
      const ParamBlock& scb = params.layout.require(layer, ParamKind::ChannelScale);
      const ParamBlock& bb = params.layout.require(layer, ParamKind::ChannelBias);
      const double s = params.values[scb.offset + unit];
      const double v_in = pre.inner_kappa_sq[unit];
      grads[scb.offset + unit] +=
          coeff * (df_dh * pre.inner_h[unit] + df_dkappa * (s * v_in / kappa));
      grads[bb.offset + unit] += coeff * df_dh;
      dh_in = df_dh * s;
      dv_in = df_dkappa * (s * s) / (2.0 * kappa);
    }
    for (std::size_t j = 0; j < ls.in_size; ++j) {
      const double o = pre.inputs[j];
      grads[mb.offset + unit * ls.in_size + j] += coeff * dh_in * o;
      if (o != 0.0) add_log_scale(unit, j, ls.in_size, dv_in, o * o);
    }
  } else if (ls.kind == LayerKind::Conv) {
    const std::size_t oh = ls.out_h(), ow = ls.out_w();
    const std::size_t c = unit / (oh * ow);
    const std::size_t y = (unit / ow) % oh;
    const std::size_t x = unit % ow;
    const std::size_t kstride = ls.in_channels * ls.kernel * ls.kernel;
    const double dv = df_dkappa / (2.0 * kappa);
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
          const double o = pre.inputs[in_flat];
          grads[mb.offset + c * kstride + k_flat] += coeff * df_dh * o;
          if (o != 0.0) add_log_scale(c, k_flat, kstride, dv, o * o);
        }
      }
    }
  } else {
    throw std::invalid_argument("accumulate_prob_grads: feedforward layers only");
  }
}

void require_feedforward(const NetworkSpec& spec, const char* what) {
  if (spec.is_spiking()) {
    throw std::invalid_argument(std::string(what) +
                                ": feedforward networks only (use exact_gradient_fd for spiking)");
  }
}

/// Expected loss enumerating from `layer` onwards with fixed activations,
/// optionally pinning one unit of that first layer.
double expected_loss_from_layer(const NetworkSpec& spec, const NetworkParams& params,
                                std::size_t layer, const Tensor& activ, std::size_t target,
                                const LossSpec& loss,
                                std::optional<std::pair<std::size_t, double>> pin_unit) {
  const std::size_t readout = spec.layers.size() - 1;
  if (layer == readout) {
    Tensor logits = readout_logits(spec, params, readout, {activ});
    return eval_loss(loss, logits, target).first;
  }
  const LayerSpec& ls = spec.layers[layer];
  LayerStepTrace pre = (ls.kind == LayerKind::Conv)
                           ? conv_preactivation(spec, params, layer, activ)
                           : dense_preactivation(spec, params, layer, activ);
  std::vector<double> fire(ls.out_size);
  for (std::size_t i = 0; i < ls.out_size; ++i) {
    fire[i] = fire_probability(pre.h_star[i], std::sqrt(pre.kappa_sq[i]), ls.theta);
  }
  double total = 0.0;
  std::vector<double> config(ls.out_size, 0.0);
  std::function<void(std::size_t, double)> rec = [&](std::size_t unit, double prob) {
    if (prob < kPruneProbability) return;
    if (unit == ls.out_size) {
      total += prob * expected_loss_from_layer(spec, params, layer + 1,
                                               Tensor::from({ls.out_size}, config), target,
                                               loss, std::nullopt);
      return;
    }
    if (pin_unit && pin_unit->first == unit) {
      config[unit] = pin_unit->second;
      rec(unit + 1, prob);
      return;
    }
    config[unit] = 1.0;
    rec(unit + 1, prob * fire[unit]);
    config[unit] = 0.0;
    rec(unit + 1, prob * (1.0 - fire[unit]));
  };
  rec(0, 1.0);
  return total;
}

/// Enumerate prefixes (configurations of layers below `target_layer`) and
/// call handler(activations entering target_layer, prefix probability).
void walk_prefixes(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                   std::size_t target_layer,
                   const std::function<void(const Tensor&, double)>& handler) {
  std::function<void(std::size_t, const Tensor&, double)> rec = [&](std::size_t layer,
                                                                    const Tensor& activ,
                                                                    double prob) {
    if (prob < kPruneProbability) return;
    if (layer == target_layer) {
      handler(activ, prob);
      return;
    }
    const LayerSpec& ls = spec.layers[layer];
    LayerStepTrace pre = (ls.kind == LayerKind::Conv)
                             ? conv_preactivation(spec, params, layer, activ)
                             : dense_preactivation(spec, params, layer, activ);
    std::vector<double> fire(ls.out_size);
    for (std::size_t i = 0; i < ls.out_size; ++i) {
      fire[i] = fire_probability(pre.h_star[i], std::sqrt(pre.kappa_sq[i]), ls.theta);
    }
    std::vector<double> config(ls.out_size, 0.0);
    std::function<void(std::size_t, double)> units = [&](std::size_t unit, double p) {
      if (p < kPruneProbability) return;
      if (unit == ls.out_size) {
        rec(layer + 1, Tensor::from({ls.out_size}, config), p);
        return;
      }
      config[unit] = 1.0;
      units(unit + 1, p * fire[unit]);
      config[unit] = 0.0;
      units(unit + 1, p * (1.0 - fire[unit]));
    };
    units(0, prob);
  };
  rec(0, input, 1.0);
}

/// Shared moment collection over Monte Carlo trials, chunk-deterministic.
EstimatorMoments collect_moments(std::size_t trials, std::size_t dims,
                                 const std::function<void(std::size_t, std::vector<double>&)>& trial_fn,
                                 const std::vector<double>& oracle) {
  if (trials < 2) throw std::invalid_argument("moments need at least 2 trials");
  const std::size_t chunks = default_chunk_count(trials);
  std::vector<std::vector<double>> sums(chunks), sqsums(chunks);
  parallel_chunks(trials, chunks, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    std::vector<double> sum(dims, 0.0), sq(dims, 0.0), g(dims, 0.0);
    for (std::size_t trial = begin; trial < end; ++trial) {
      std::fill(g.begin(), g.end(), 0.0);
      trial_fn(trial, g);
      for (std::size_t d = 0; d < dims; ++d) {
        sum[d] += g[d];
        sq[d] += g[d] * g[d];
      }
    }
    sums[chunk] = std::move(sum);
    sqsums[chunk] = std::move(sq);
  });

  std::vector<double> sum(dims, 0.0), sq(dims, 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t d = 0; d < dims; ++d) {
      sum[d] += sums[c][d];
      sq[d] += sqsums[c][d];
    }
  }

  EstimatorMoments m;
  m.trials = trials;
  m.mean_gradient.resize(dims);
  m.variance.resize(dims);
  m.bias.resize(dims);
  m.standard_error.resize(dims);
  const double n = static_cast<double>(trials);
  for (std::size_t d = 0; d < dims; ++d) {
    const double mean = sum[d] / n;
    double var = (sq[d] / n - mean * mean) * n / (n - 1.0);
    if (var < 0.0) var = 0.0;
    m.mean_gradient[d] = mean;
    m.variance[d] = var;
    m.bias[d] = mean - oracle[d];
    m.standard_error[d] = std::sqrt(var / n);
  }
  return m;
}

Tensor single_sample_batch(const NetworkSpec& spec, const Tensor& input) {
  if (spec.is_spiking()) {
    Tensor batch({1, input.dim(0), input.dim(1)});
    for (std::size_t i = 0; i < input.size(); ++i) batch[i] = input[i];
    return batch;
  }
  Tensor batch({1, input.size()});
  for (std::size_t i = 0; i < input.size(); ++i) batch[i] = input[i];
  return batch;
}

}  // namespace

double enumerate_expected_loss(const NetworkSpec& spec, const NetworkParams& params,
                               const Tensor& input, std::size_t target, const LossSpec& loss,
                               const EnumerationBudget& budget) {
  spec.validate();
  check_budget(spec, budget);
  check_oracle_input(spec, input);
  return expected_loss_impl(spec, params, input, target, loss, nullptr);
}

double enumerate_expected_loss_pinned(const NetworkSpec& spec, const NetworkParams& params,
                                      const Tensor& input, std::size_t target,
                                      const LossSpec& loss, const EnumerationBudget& budget,
                                      std::size_t layer, std::size_t unit, std::size_t step,
                                      double value) {
  spec.validate();
  check_budget(spec, budget);
  check_oracle_input(spec, input);
  Pin pin{layer, unit, step, value};
  return expected_loss_impl(spec, params, input, target, loss, &pin);
}

std::vector<double> exact_gradient_fd(const NetworkSpec& spec, const NetworkParams& params,
                                      const Tensor& input, std::size_t target,
                                      const LossSpec& loss, const EnumerationBudget& budget,
                                      double step_scale) {
  spec.validate();
  check_budget(spec, budget);
  check_oracle_input(spec, input);
  if (!(step_scale > 0.0)) throw std::invalid_argument("exact_gradient_fd: step must be > 0");

  NetworkParams work = params;
  std::vector<double> grads(params.layout.total, 0.0);
  for (std::size_t p = 0; p < params.layout.total; ++p) {
    const double v = params.values[p];
    const double delta = step_scale * std::max(1.0, std::abs(v));
    work.values[p] = v + delta;
    const double up = expected_loss_impl(spec, work, input, target, loss, nullptr);
    work.values[p] = v - delta;
    const double down = expected_loss_impl(spec, work, input, target, loss, nullptr);
    work.values[p] = v;
    grads[p] = (up - down) / (2.0 * delta);
  }
  return grads;
}

std::vector<double> exact_gradient_ram(const NetworkSpec& spec, const NetworkParams& params,
                                       const Tensor& input, std::size_t target,
                                       const LossSpec& loss, const EnumerationBudget& budget) {
  spec.validate();
  require_feedforward(spec, "exact_gradient_ram");
  check_budget(spec, budget);
  check_oracle_input(spec, input);

  std::vector<double> grads(params.layout.total, 0.0);
  const std::size_t readout = spec.layers.size() - 1;

  // Pathwise expectation for the readout weights.
  {
    const ParamBlock& wb = params.layout.require(readout, ParamKind::ReadoutWeights);
    const LayerSpec& ro = spec.layers[readout];
    WalkHooks hooks;
    hooks.on_leaf = [&](const Tensor& logits, const std::vector<Tensor>& tops, double prob) {
      const Tensor g = eval_loss(loss, logits, target).second;
      const Tensor& top = tops.back();
      for (std::size_t c = 0; c < ro.out_size; ++c) {
        for (std::size_t j = 0; j < ro.in_size; ++j) {
          grads[wb.offset + c * ro.in_size + j] += prob * g[c] * top[j];
        }
      }
    };
    ConfigWalker(spec, params, input, hooks, nullptr).run();
  }

  // Per-unit marginalised finite differences for stochastic-layer parameters.
  for (std::size_t layer = 0; layer < readout; ++layer) {
    walk_prefixes(spec, params, input, layer, [&](const Tensor& activ, double prob) {
      const LayerSpec& ls = spec.layers[layer];
      LayerStepTrace pre = (ls.kind == LayerKind::Conv)
                               ? conv_preactivation(spec, params, layer, activ)
                               : dense_preactivation(spec, params, layer, activ);
      for (std::size_t i = 0; i < ls.out_size; ++i) {
        const double l1 = expected_loss_from_layer(spec, params, layer, activ, target, loss,
                                                   std::pair{i, 1.0});
        const double l0 = expected_loss_from_layer(spec, params, layer, activ, target, loss,
                                                   std::pair{i, 0.0});
        accumulate_prob_grads(spec, params, layer, pre, i, prob * (l1 - l0), grads);
      }
    });
  }
  return grads;
}

EstimatorMoments reinforce_gradient(const NetworkSpec& spec, const NetworkParams& params,
                                    const Tensor& input, std::size_t target,
                                    const LossSpec& loss, std::size_t trials, const RngKey& key,
                                    const EnumerationBudget& budget) {
  spec.validate();
  require_feedforward(spec, "reinforce_gradient");
  check_oracle_input(spec, input);
  const std::vector<double> oracle = exact_gradient_fd(spec, params, input, target, loss, budget);

  const Tensor batch = single_sample_batch(spec, input);
  const std::size_t readout = spec.layers.size() - 1;
  const ParamBlock& wb = params.layout.require(readout, ParamKind::ReadoutWeights);
  const LayerSpec& ro = spec.layers[readout];

  auto trial_fn = [&](std::size_t trial, std::vector<double>& grad) {
    auto [logits_batch, trace] = network_forward(spec, params, batch,
                                                 key.child(rngtag::kTrial).child(trial));
    Tensor logits({spec.num_classes()});
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = logits_batch(0, c);
    const auto [loss_value, loss_grad] = eval_loss(loss, logits, target);

    // Pathwise derivative for the readout weights on this configuration.
    const SampleTrace& st = trace.samples[0];
    const Tensor& top = st.steps[readout - 1][0].outputs;
    for (std::size_t c = 0; c < ro.out_size; ++c) {
      for (std::size_t j = 0; j < ro.in_size; ++j) {
        grad[wb.offset + c * ro.in_size + j] += loss_grad[c] * top[j];
      }
    }

    // Score function: loss * sum over units of dlog p(o)/dparam.
    for (std::size_t layer = 0; layer < readout; ++layer) {
      const LayerSpec& ls = spec.layers[layer];
      const LayerStepTrace& step = st.steps[layer][0];
      for (std::size_t i = 0; i < ls.out_size; ++i) {
        const double f = fire_probability(step.h_star[i], std::sqrt(step.kappa_sq[i]), ls.theta);
        const double score = step.outputs[i] == 1.0 ? 1.0 / f : -1.0 / (1.0 - f);
        accumulate_prob_grads(spec, params, layer, step, i, loss_value * score, grad);
      }
    }
  };
  return collect_moments(trials, params.layout.total, trial_fn, oracle);
}

EstimatorMoments estimator_moments(const NetworkSpec& spec, const NetworkParams& params,
                                   const Tensor& input, std::size_t target, const LossSpec& loss,
                                   const EstimatorConfig& estimator, std::size_t trials,
                                   const RngKey& key, const EnumerationBudget& budget,
                                   const std::vector<double>* precomputed_oracle) {
  spec.validate();
  estimator.validate();
  check_oracle_input(spec, input);

  if (estimator.kind == EstimatorKind::Reinforce) {
    return reinforce_gradient(spec, params, input, target, loss, trials, key, budget);
  }

  const std::vector<double> oracle =
      precomputed_oracle ? *precomputed_oracle
                         : exact_gradient_fd(spec, params, input, target, loss, budget);
  if (estimator.kind == EstimatorKind::Exact) {
    EstimatorMoments m;
    m.trials = trials;
    m.mean_gradient = oracle;
    m.variance.assign(oracle.size(), 0.0);
    m.bias.assign(oracle.size(), 0.0);
    m.standard_error.assign(oracle.size(), 0.0);
    return m;
  }

  const Tensor batch = single_sample_batch(spec, input);
  auto trial_fn = [&](std::size_t trial, std::vector<double>& grad) {
    auto [logits_batch, trace] = network_forward(spec, params, batch,
                                                 key.child(rngtag::kTrial).child(trial));
    Tensor logits({spec.num_classes()});
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = logits_batch(0, c);
    const Tensor loss_grad = eval_loss(loss, logits, target).second;
    Tensor lg({std::size_t{1}, logits.size()});
    for (std::size_t c = 0; c < logits.size(); ++c) lg(0, c) = loss_grad[c];
    grad = network_backward(spec, params, trace, lg, estimator);
  };
  return collect_moments(trials, params.layout.total, trial_fn, oracle);
}

RaoBlackwellReport rao_blackwell_check(double f, double temperature, std::size_t trials,
                                       const RngKey& key, const RaoBlackwellOptions& options) {
  if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("rao_blackwell_check: F must be in (0,1)");
  if (!(temperature > 0.0)) throw std::invalid_argument("rao_blackwell_check: k must be > 0");
  if (trials < 2) throw std::invalid_argument("rao_blackwell_check: need at least 2 trials");

  RaoBlackwellReport report;
  report.f = f;
  report.temperature = temperature;
  for (int o = 0; o < 2; ++o) {
    report.closed_form[o] =
        agr_surrogate_factor(static_cast<double>(o), f, temperature) + options.closed_form_bias;
  }

  struct Acc {
    double sum[2] = {0, 0}, sq[2] = {0, 0};
    std::size_t count[2] = {0, 0};
    double path_sum[2] = {0, 0}, path_sq[2] = {0, 0};  // [gsst, agr]
  };
  const std::size_t chunks = default_chunk_count(trials);
  std::vector<Acc> accs(chunks);
  parallel_chunks(trials, chunks, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    Acc acc;
    RngStream rng = key.child(chunk).stream();
    for (std::size_t i = begin; i < end; ++i) {
      const double u = rng.next_double();
      const int o = (f - 1.0 + u >= 0.0) ? 1 : 0;
      const double g = gs_st_surrogate_factor(u, f, temperature);
      acc.sum[o] += g;
      acc.sq[o] += g * g;
      ++acc.count[o];
      const double a = (o == 1) ? options.a1 : options.a0;
      const double x_gs = g * a;
      const double x_agr = report.closed_form[o] * a;
      acc.path_sum[0] += x_gs;
      acc.path_sq[0] += x_gs * x_gs;
      acc.path_sum[1] += x_agr;
      acc.path_sq[1] += x_agr * x_agr;
    }
    accs[chunk] = acc;
  });

  Acc total;
  for (const Acc& a : accs) {
    for (int o = 0; o < 2; ++o) {
      total.sum[o] += a.sum[o];
      total.sq[o] += a.sq[o];
      total.count[o] += a.count[o];
    }
    for (int p = 0; p < 2; ++p) {
      total.path_sum[p] += a.path_sum[p];
      total.path_sq[p] += a.path_sq[p];
    }
  }

  report.within_3se = true;
  for (int o = 0; o < 2; ++o) {
    report.counts[o] = total.count[o];
    const double n = static_cast<double>(total.count[o]);
    if (total.count[o] < 2) {
      report.within_3se = false;
      continue;
    }
    const double mean = total.sum[o] / n;
    double var = (total.sq[o] / n - mean * mean) * n / (n - 1.0);
    if (var < 0.0) var = 0.0;
    report.mc_mean[o] = mean;
    report.mc_se[o] = std::sqrt(var / n);
    if (std::abs(mean - report.closed_form[o]) > 3.0 * report.mc_se[o]) {
      report.within_3se = false;
    }
  }
  const double n = static_cast<double>(trials);
  for (int p = 0; p < 2; ++p) {
    const double mean = total.path_sum[p] / n;
    double var = (total.path_sq[p] / n - mean * mean) * n / (n - 1.0);
    if (var < 0.0) var = 0.0;
    (p == 0 ? report.var_gsst : report.var_agr) = var;
  }
  report.variance_ok = report.var_agr <= report.var_gsst;
  return report;
}

BiasBoundReport chebyshev_bound_check(const NetworkSpec& spec, const NetworkParams& params,
                                      const Tensor& input, double epsilon, std::size_t trials,
                                      const RngKey& key, const EnumerationBudget& budget) {
  spec.validate();
  check_budget(spec, budget);
  check_oracle_input(spec, input);
  if (!(epsilon > 0.0)) throw std::invalid_argument("chebyshev_bound_check: epsilon must be > 0");

  // Exact per-unit first/second moments of h*/kappa by enumeration.
  std::vector<std::size_t> unit_offset(spec.layers.size(), 0);
  std::size_t total_units = 0;
  for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
    unit_offset[l] = total_units;
    total_units += spec.layers[l].out_size * spec.timesteps;
  }
  std::vector<double> first(total_units, 0.0), second(total_units, 0.0);
  WalkHooks hooks;
  hooks.on_leaf = [](const Tensor&, const std::vector<Tensor>&, double) {};
  hooks.on_stage = [&](std::size_t layer, std::size_t t, const LayerStepTrace& pre, double prob) {
    const std::size_t base = unit_offset[layer] + t * spec.layers[layer].out_size;
    for (std::size_t i = 0; i < pre.h_star.size(); ++i) {
      const double v = pre.h_star[i] / std::sqrt(pre.kappa_sq[i]);
      first[base + i] += prob * v;
      second[base + i] += prob * v * v;
    }
  };
  ConfigWalker(spec, params, input, hooks, nullptr).run();

  double var_sum = 0.0;
  for (std::size_t i = 0; i < total_units; ++i) {
    var_sum += std::max(0.0, second[i] - first[i] * first[i]);
  }

  // Monte Carlo joint-concentration frequency.
  const Tensor batch = single_sample_batch(spec, input);
  const std::size_t chunks = default_chunk_count(trials);
  std::vector<std::size_t> hits(chunks, 0);
  parallel_chunks(trials, chunks, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    std::size_t local = 0;
    for (std::size_t trial = begin; trial < end; ++trial) {
      auto [logits, trace] = network_forward(spec, params, batch,
                                             key.child(rngtag::kTrial).child(trial));
      bool inside = true;
      const SampleTrace& st = trace.samples[0];
      for (std::size_t l = 0; l + 1 < spec.layers.size() && inside; ++l) {
        for (std::size_t t = 0; t < spec.timesteps && inside; ++t) {
          const LayerStepTrace& step = st.steps[l][t];
          const std::size_t base = unit_offset[l] + t * spec.layers[l].out_size;
          for (std::size_t i = 0; i < step.h_star.size(); ++i) {
            const double v = step.h_star[i] / std::sqrt(step.kappa_sq[i]);
            if (!(std::abs(v - first[base + i]) < epsilon)) {
              inside = false;
              break;
            }
          }
        }
      }
      if (inside) ++local;
    }
    hits[chunk] = local;
  });
  std::size_t hit_total = 0;
  for (std::size_t h : hits) hit_total += h;

  BiasBoundReport report;
  report.epsilon = epsilon;
  report.empirical_probability = static_cast<double>(hit_total) / static_cast<double>(trials);
  report.chebyshev_lower_bound = 1.0 - var_sum / (epsilon * epsilon);
  report.standard_error = std::sqrt(report.empirical_probability *
                                    (1.0 - report.empirical_probability) /
                                    static_cast<double>(trials));
  return report;
}

}  // namespace binnlab
