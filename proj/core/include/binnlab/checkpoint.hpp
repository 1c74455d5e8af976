#pragma once

#include <cstdint>
#include <string>

#include "binnlab/network_spec.hpp"
#include "binnlab/params.hpp"
#include "binnlab/training.hpp"

namespace binnlab {

/// Versioned training snapshot. Parameter and optimiser arrays are stored as
/// base64-encoded little-endian 64-bit floats, so load(save(x)) restores the
/// run bit-for-bit; the rng needs only (seed, next_epoch) because every
/// substream is keyed by absolute epoch.
struct TrainingCheckpoint {
  std::uint64_t seed = 0;
  std::size_t next_epoch = 0;
  NetworkSpec spec;
  NetworkParams params;
  OptimizerState opt;
};

void save_checkpoint(const TrainingCheckpoint& checkpoint, const std::string& path);
TrainingCheckpoint load_checkpoint(const std::string& path);

}  // namespace binnlab
