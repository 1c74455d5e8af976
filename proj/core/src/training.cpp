#include "binnlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "binnlab/losses.hpp"

namespace binnlab {

OptimizerState OptimizerState::init(const ParamLayout& layout, double lr_weights,
                                    double lr_scales) {
  OptimizerState s;
  s.first_moment.assign(layout.total, 0.0);
  s.second_moment.assign(layout.total, 0.0);
  s.lr_weights = lr_weights;
  s.lr_scales = lr_scales;
  return s;
}

void adam_step(NetworkParams& params, const std::vector<double>& grads, OptimizerState& state,
               double lr_factor) {
  if (grads.size() != params.values.size() || grads.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);

  for (const ParamBlock& block : params.layout.blocks) {
    const double lr =
        lr_factor * (block.group == ParamGroup::Scales ? state.lr_scales : state.lr_weights);
    for (std::size_t p = block.offset; p < block.offset + block.size(); ++p) {
      const double g = grads[p];
      state.first_moment[p] = state.beta1 * state.first_moment[p] + (1.0 - state.beta1) * g;
      state.second_moment[p] =
          state.beta2 * state.second_moment[p] + (1.0 - state.beta2) * g * g;
      const double m_hat = state.first_moment[p] / bc1;
      const double v_hat = state.second_moment[p] / bc2;
      params.values[p] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0, double floor_divisor) {
  if (total_epochs == 0 || epoch >= total_epochs) {
    throw std::invalid_argument("cosine_lr: epoch out of range");
  }
  if (!(floor_divisor >= 1.0)) throw std::invalid_argument("cosine_lr: floor divisor must be >= 1");
  if (total_epochs == 1) return lr0;
  const double lr_min = lr0 / floor_divisor;
  const double phase = std::numbers::pi * static_cast<double>(epoch) /
                       static_cast<double>(total_epochs - 1);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("TrainConfig: zero epochs/batch");
  if (lambda_kl < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  if (!(lr_weights > 0.0) || !(lr_scales > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  }
  if (!(cosine_floor_divisor >= 1.0)) {
    throw std::invalid_argument("TrainConfig: cosine floor divisor must be >= 1");
  }
  estimator.validate();
}

double attenuation_factor(const std::vector<double>& per_layer_grad_norms) {
  if (per_layer_grad_norms.size() < 2) return -1.0;
  double log_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t l = 0; l + 1 < per_layer_grad_norms.size(); ++l) {
    const double shallow = per_layer_grad_norms[l];
    const double deep = per_layer_grad_norms[l + 1];
    if (!(shallow > 0.0) || !(deep > 0.0)) return -1.0;
    log_sum += std::log(shallow / deep);
    ++pairs;
  }
  return std::exp(log_sum / static_cast<double>(pairs));
}

std::vector<double> per_layer_gradient_norms(const ParamLayout& layout,
                                             const std::vector<double>& grads,
                                             std::size_t num_layers) {
  std::vector<double> sq(num_layers, 0.0);
  for (const ParamBlock& block : layout.blocks) {
    double acc = 0.0;
    for (std::size_t p = block.offset; p < block.offset + block.size(); ++p) {
      acc += grads[p] * grads[p];
    }
    sq[block.layer] += acc;
  }
  std::vector<double> norms(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) norms[l] = std::sqrt(sq[l]);
  return norms;
}

namespace {

Tensor gather_batch(const Dataset& data, const std::vector<std::size_t>& rows,
                    std::size_t begin, std::size_t end) {
  const std::size_t b = end - begin;
  if (data.spiking()) {
    Tensor batch({b, data.inputs.dim(1), data.inputs.dim(2)});
    const std::size_t stride = data.inputs.dim(1) * data.inputs.dim(2);
    for (std::size_t s = 0; s < b; ++s) {
      const std::size_t row = rows[begin + s];
      for (std::size_t i = 0; i < stride; ++i) batch[s * stride + i] = data.inputs[row * stride + i];
    }
    return batch;
  }
  Tensor batch({b, data.inputs.dim(1)});
  const std::size_t stride = data.inputs.dim(1);
  for (std::size_t s = 0; s < b; ++s) {
    const std::size_t row = rows[begin + s];
    for (std::size_t i = 0; i < stride; ++i) batch[s * stride + i] = data.inputs[row * stride + i];
  }
  return batch;
}

}  // namespace

double evaluate_accuracy(const NetworkSpec& spec, const NetworkParams& params,
                         const Dataset& data, const std::vector<std::size_t>& rows) {
  if (rows.empty()) return 0.0;
  NetworkSpec eval_spec = spec;
  eval_spec.variant = Variant::Mfa;  // deterministic evaluation forward
  std::size_t correct = 0;
  const Tensor batch = gather_batch(data, rows, 0, rows.size());
  auto [logits, trace] = network_forward(eval_spec, params, batch, RngKey(0));
  for (std::size_t s = 0; s < rows.size(); ++s) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < spec.num_classes(); ++c) {
      if (logits(s, c) > logits(s, best)) best = c;
    }
    if (best == data.targets[rows[s]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

EpochMetrics train_epoch(const NetworkSpec& spec, NetworkParams& params, const Dataset& data,
                         const TrainConfig& config, OptimizerState& opt, std::size_t epoch) {
  config.validate();
  data.validate();
  if (data.train_indices.empty()) throw std::invalid_argument("train_epoch: empty train split");

  const double lambda = (spec.variant == Variant::Nkl) ? 0.0 : config.lambda_kl;
  const std::size_t schedule_total = config.schedule_epochs ? config.schedule_epochs
                                                            : config.epochs;
  const double lr_factor =
      cosine_lr(std::min(epoch, schedule_total - 1), schedule_total, 1.0,
                config.cosine_floor_divisor);

  // Batch order from a dedicated stream, independent of sampling noise, so
  // estimator ablations share identical data order.
  std::vector<std::size_t> order = data.train_indices;
  if (config.shuffle) {
    RngStream shuffle_rng = RngKey(config.seed).child(rngtag::kShuffle).child(epoch).stream();
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i));
      std::swap(order[i - 1], order[j]);
    }
  }

  EpochMetrics metrics;
  metrics.epoch = epoch;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::vector<double> last_grads;

  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const std::size_t end = std::min(begin + config.batch_size, order.size());
    const std::size_t b = end - begin;
    const Tensor batch = gather_batch(data, order, begin, end);
    const RngKey batch_key =
        RngKey(config.seed).child(rngtag::kSample).child(epoch).child(begin / config.batch_size);

    auto [logits, trace] = network_forward(spec, params, batch, batch_key);

    Tensor loss_grads({b, spec.num_classes()});
    double batch_loss = 0.0;
    for (std::size_t s = 0; s < b; ++s) {
      Tensor row({spec.num_classes()});
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = logits(s, c);
      auto [value, grad] = cross_entropy(row, data.targets[order[begin + s]]);
      batch_loss += value;
      // Mean loss over the batch.
      for (std::size_t c = 0; c < row.size(); ++c) {
        loss_grads(s, c) = grad[c] / static_cast<double>(b);
      }
    }
    batch_loss /= static_cast<double>(b);

    std::vector<double> grads =
        network_backward(spec, params, trace, loss_grads, config.estimator);
    accumulate_elbo_gradient(spec, params, &trace, config.kl_mode, lambda, grads);
    const double kl_term = elbo_regularizer(spec, params, &trace, config.kl_mode, lambda);

    adam_step(params, grads, opt, lr_factor);

    loss_sum += batch_loss + kl_term;
    ++loss_count;
    metrics.kl_value = kl_term;
    last_grads = std::move(grads);
  }

  metrics.train_loss = loss_sum / static_cast<double>(loss_count);
  metrics.per_layer_grad_norms =
      per_layer_gradient_norms(params.layout, last_grads, spec.layers.size());
  // Attenuation over the stochastic layers only; the readout is not part of
  // the depth chain.
  std::vector<double> hidden(metrics.per_layer_grad_norms.begin(),
                             metrics.per_layer_grad_norms.end() - 1);
  metrics.attenuation_factor = attenuation_factor(hidden);
  const std::vector<std::size_t>& eval_rows =
      data.eval_indices.empty() ? data.train_indices : data.eval_indices;
  metrics.eval_accuracy = evaluate_accuracy(spec, params, data, eval_rows);
  return metrics;
}

}  // namespace binnlab
