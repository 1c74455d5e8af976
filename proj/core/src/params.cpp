#include "binnlab/params.hpp"

#include <cmath>
#include <stdexcept>

namespace binnlab {

namespace {

std::vector<std::size_t> scale_shape(ScaleGranularity granularity, std::size_t out,
                                     std::vector<std::size_t> weight_shape) {
  switch (granularity) {
    case ScaleGranularity::PerLayer:
      return {1};
    case ScaleGranularity::PerNeuron:
      return {out};
    case ScaleGranularity::PerWeight:
      return weight_shape;
  }
  return {1};
}

const char* kind_suffix(ParamKind kind) {
  switch (kind) {
    case ParamKind::Means: return "means";
    case ParamKind::LogScales: return "log_scales";
    case ParamKind::RecurrentMeans: return "rec_means";
    case ParamKind::RecurrentLogScales: return "rec_log_scales";
    case ParamKind::ChannelScale: return "scale";
    case ParamKind::ChannelBias: return "bias";
    case ParamKind::ReadoutWeights: return "readout";
  }
  return "?";
}

}  // namespace

ParamLayout ParamLayout::build(const NetworkSpec& spec) {
  spec.validate();
  ParamLayout layout;
  const bool learned_scales = variant_learns_scales(spec.variant);

  auto push = [&](std::size_t layer, ParamKind kind, std::vector<std::size_t> shape,
                  ParamGroup group) {
    ParamBlock b;
    b.layer = layer;
    b.kind = kind;
    b.offset = layout.total;
    b.shape = std::move(shape);
    b.group = group;
    b.name = "layer" + std::to_string(layer) + "." + kind_suffix(kind);
    layout.total += b.size();
    layout.blocks.push_back(std::move(b));
  };

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    switch (ls.kind) {
      case LayerKind::Dense: {
        push(l, ParamKind::Means, {ls.out_size, ls.in_size}, ParamGroup::Weights);
        if (learned_scales) {
          push(l, ParamKind::LogScales,
               scale_shape(ls.granularity, ls.out_size, {ls.out_size, ls.in_size}),
               ParamGroup::Scales);
        }
        if (ls.residual) {
          push(l, ParamKind::ChannelScale, {ls.out_size}, ParamGroup::Weights);
          push(l, ParamKind::ChannelBias, {ls.out_size}, ParamGroup::Weights);
        }
        break;
      }
      case LayerKind::Conv: {
        std::vector<std::size_t> kshape = {ls.out_channels, ls.in_channels, ls.kernel, ls.kernel};
        push(l, ParamKind::Means, kshape, ParamGroup::Weights);
        if (learned_scales) {
          push(l, ParamKind::LogScales, scale_shape(ls.granularity, ls.out_channels, kshape),
               ParamGroup::Scales);
        }
        break;
      }
      case LayerKind::Lif: {
        push(l, ParamKind::Means, {ls.out_size, ls.in_size}, ParamGroup::Weights);
        if (learned_scales) {
          push(l, ParamKind::LogScales,
               scale_shape(ls.granularity, ls.out_size, {ls.out_size, ls.in_size}),
               ParamGroup::Scales);
        }
        if (ls.recurrent) {
          push(l, ParamKind::RecurrentMeans, {ls.out_size, ls.out_size}, ParamGroup::Weights);
          if (learned_scales) {
            push(l, ParamKind::RecurrentLogScales,
                 scale_shape(ls.granularity, ls.out_size, {ls.out_size, ls.out_size}),
                 ParamGroup::Scales);
          }
        }
        break;
      }
      case LayerKind::Readout: {
        push(l, ParamKind::ReadoutWeights, {ls.out_size, ls.in_size}, ParamGroup::Weights);
        break;
      }
    }
  }
  return layout;
}

const ParamBlock* ParamLayout::find(std::size_t layer, ParamKind kind) const {
  for (const ParamBlock& b : blocks) {
    if (b.layer == layer && b.kind == kind) return &b;
  }
  return nullptr;
}

const ParamBlock& ParamLayout::require(std::size_t layer, ParamKind kind) const {
  const ParamBlock* b = find(layer, kind);
  if (!b) {
    throw std::invalid_argument("ParamLayout: missing block layer " + std::to_string(layer) +
                                " kind " + std::to_string(static_cast<int>(kind)));
  }
  return *b;
}

const ParamBlock& ParamLayout::owner(std::size_t flat_index) const {
  for (const ParamBlock& b : blocks) {
    if (flat_index >= b.offset && flat_index < b.offset + b.size()) return b;
  }
  throw std::out_of_range("ParamLayout: flat index out of range");
}

NetworkParams init_network_params(const NetworkSpec& spec, const RngKey& key) {
  NetworkParams params;
  params.layout = ParamLayout::build(spec);
  params.values.assign(params.layout.total, 0.0);

  for (std::size_t bi = 0; bi < params.layout.blocks.size(); ++bi) {
    const ParamBlock& b = params.layout.blocks[bi];
    const LayerSpec& ls = spec.layers[b.layer];
    auto view = params.block_span(b);
    RngStream rng = key.child(rngtag::kInit).child(bi).stream();

    const std::size_t fan_in = (ls.kind == LayerKind::Conv)
                                   ? ls.in_channels * ls.kernel * ls.kernel
                                   : ls.in_size;
    const std::size_t rec_fan_in = ls.out_size;

    switch (b.kind) {
      case ParamKind::Means:
      case ParamKind::ReadoutWeights: {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : view) v = (2.0 * rng.next_double() - 1.0) * bound;
        break;
      }
      case ParamKind::RecurrentMeans: {
        const double bound = std::sqrt(6.0 / static_cast<double>(rec_fan_in));
        for (double& v : view) v = (2.0 * rng.next_double() - 1.0) * bound;
        // no self-connections
        for (std::size_t i = 0; i < ls.out_size; ++i) view[i * ls.out_size + i] = 0.0;
        break;
      }
      case ParamKind::LogScales: {
        const double sigma0 = 0.5 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : view) v = std::log(sigma0);
        break;
      }
      case ParamKind::RecurrentLogScales: {
        const double sigma0 = 0.5 / std::sqrt(static_cast<double>(rec_fan_in));
        for (double& v : view) v = std::log(sigma0);
        break;
      }
      case ParamKind::ChannelScale:
        for (double& v : view) v = 1.0;
        break;
      case ParamKind::ChannelBias:
        // Recentre the binary identity path: o - 0.5 is symmetric around the
        // threshold, which keeps residual units off the saturated tails.
        for (double& v : view) v = -0.5;
        break;
    }
  }
  return params;
}

std::vector<double> zero_gradients(const ParamLayout& layout) {
  return std::vector<double>(layout.total, 0.0);
}

}  // namespace binnlab
