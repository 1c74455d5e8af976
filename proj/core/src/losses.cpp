#include "binnlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace binnlab {

std::pair<double, Tensor> cross_entropy(const Tensor& logits, std::size_t target_class) {
  if (logits.rank() != 1 || logits.empty()) {
    throw std::invalid_argument("cross_entropy: logits must be a nonempty vector");
  }
  if (target_class >= logits.size()) {
    throw std::invalid_argument("cross_entropy: target class out of range");
  }
  if (!logits.all_finite()) throw std::invalid_argument("cross_entropy: non-finite logits");

  const double max_logit = *std::max_element(logits.data().begin(), logits.data().end());
  double sum_exp = 0.0;
  for (double v : logits.data()) sum_exp += std::exp(v - max_logit);
  const double log_z = max_logit + std::log(sum_exp);
  const double loss = log_z - logits[target_class];

  Tensor grad({logits.size()});
  for (std::size_t c = 0; c < logits.size(); ++c) {
    grad[c] = std::exp(logits[c] - log_z);
  }
  grad[target_class] -= 1.0;
  return {loss, grad};
}

std::pair<double, Tensor> eval_loss(const LossSpec& loss, const Tensor& logits,
                                    std::size_t target_class) {
  switch (loss.kind) {
    case LossKind::CrossEntropy:
      return cross_entropy(logits, target_class);
    case LossKind::LinearInLogits: {
      if (!loss.linear_coeffs.same_shape(logits)) {
        throw std::invalid_argument("eval_loss: linear coefficient shape mismatch");
      }
      double value = loss.constant;
      for (std::size_t c = 0; c < logits.size(); ++c) {
        value += loss.linear_coeffs[c] * logits[c];
      }
      return {value, loss.linear_coeffs};
    }
  }
  throw std::invalid_argument("eval_loss: unknown loss kind");
}

}  // namespace binnlab
