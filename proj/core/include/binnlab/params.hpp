#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "binnlab/network_spec.hpp"
#include "binnlab/rng.hpp"

namespace binnlab {

enum class ParamKind {
  Means,
  LogScales,
  RecurrentMeans,
  RecurrentLogScales,
  ChannelScale,
  ChannelBias,
  ReadoutWeights,
};

/// Optimiser grouping: means and affine terms follow the weight learning
/// rate, log-scales follow the (typically larger) scale learning rate.
enum class ParamGroup { Weights, Scales };

struct ParamBlock {
  std::size_t layer = 0;
  ParamKind kind = ParamKind::Means;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;
  ParamGroup group = ParamGroup::Weights;
  std::string name;  // e.g. "layer3.means"

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;

  static ParamLayout build(const NetworkSpec& spec);

  const ParamBlock* find(std::size_t layer, ParamKind kind) const;
  const ParamBlock& require(std::size_t layer, ParamKind kind) const;
  /// Block that owns a flat parameter index.
  const ParamBlock& owner(std::size_t flat_index) const;
};

/// All learnable parameters as one flat vector plus its layout. Gradients and
/// optimiser moments reuse the same flat indexing.
struct NetworkParams {
  ParamLayout layout;
  std::vector<double> values;

  std::span<double> block_span(const ParamBlock& b) {
    return {values.data() + b.offset, b.size()};
  }
  std::span<const double> block_span(const ParamBlock& b) const {
    return {values.data() + b.offset, b.size()};
  }
  std::span<double> span_of(std::size_t layer, ParamKind kind) {
    return block_span(layout.require(layer, kind));
  }
  std::span<const double> span_of(std::size_t layer, ParamKind kind) const {
    return block_span(layout.require(layer, kind));
  }
};

/// Kaiming-uniform means (bound sqrt(6/fan_in)); scales start at
/// sigma0 = 0.5/sqrt(fan_in); residual per-channel scale 1 and bias 0;
/// recurrent diagonals zeroed (no self-connections).
NetworkParams init_network_params(const NetworkSpec& spec, const RngKey& key);

/// Zero vector aligned with a layout.
std::vector<double> zero_gradients(const ParamLayout& layout);

}  // namespace binnlab
