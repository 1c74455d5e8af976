#pragma once

#include <cstddef>
#include <utility>

#include "binnlab/tensor.hpp"

namespace binnlab {

/// Softmax cross-entropy with log-sum-exp stabilisation. Returns the loss and
/// dL/dlogits (softmax - onehot), which sums to zero across classes.
std::pair<double, Tensor> cross_entropy(const Tensor& logits, std::size_t target_class);

enum class LossKind { CrossEntropy, LinearInLogits };

/// A loss the oracles can differentiate. LinearInLogits is constant +
/// sum_c coeff_c * logit_c, the exactly-linear case the unbiasedness results
/// need (zero coefficients give a constant loss).
struct LossSpec {
  LossKind kind = LossKind::CrossEntropy;
  Tensor linear_coeffs;   // LinearInLogits only
  double constant = 0.0;  // LinearInLogits only

  static LossSpec ce() { return LossSpec{}; }
  static LossSpec linear(Tensor coeffs, double constant = 0.0) {
    return LossSpec{LossKind::LinearInLogits, std::move(coeffs), constant};
  }
};

std::pair<double, Tensor> eval_loss(const LossSpec& loss, const Tensor& logits,
                                    std::size_t target_class);

}  // namespace binnlab
