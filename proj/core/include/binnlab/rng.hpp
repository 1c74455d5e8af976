#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace binnlab {

/// Splittable counter-based random stream.
///
/// Substream derivation (bit-exact contract, identical on every platform):
///   state = mix(seed)
///   for each path element p: state = mix(state ^ mix(p))
/// where mix() is the SplitMix64 output permutation applied after adding the
/// golden-ratio increment 0x9E3779B97F4A7C15:
///   z  = x + 0x9E3779B97F4A7C15
///   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
///   z ^= z >> 27; z *= 0x94D049BB133111EB
///   z ^= z >> 31
/// Draws then follow the plain SplitMix64 sequence from the derived state, so
/// draw n is mix(state + n * 0x9E3779B97F4A7C15) and any position can be
/// reached by jumping the counter. Distinct (seed, path) pairs give
/// statistically independent streams; identical pairs replay identical draws.
class RngStream {
 public:
  explicit RngStream(std::uint64_t derived_state) : state_(derived_state) {}

  static std::uint64_t mix(std::uint64_t x) {
    std::uint64_t z = x + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static RngStream from(std::uint64_t seed, std::span<const std::uint64_t> path) {
    std::uint64_t state = mix(seed);
    for (std::uint64_t p : path) state = mix(state ^ mix(p));
    return RngStream(state);
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes two uniforms, no cached spare.
  double next_gaussian() {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, bound) by rejection (unbiased).
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t limit = bound * ((~std::uint64_t{0}) / bound);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// (seed, path) address of a substream. Child keys extend the path, giving a
/// tree of independent streams: (layer, timestep, trial, ...) all replayable.
struct RngKey {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> path;

  RngKey() = default;
  explicit RngKey(std::uint64_t s) : seed(s) {}
  RngKey(std::uint64_t s, std::vector<std::uint64_t> p) : seed(s), path(std::move(p)) {}

  RngKey child(std::uint64_t index) const {
    RngKey k(seed, path);
    k.path.push_back(index);
    return k;
  }

  RngStream stream() const { return RngStream::from(seed, path); }
};

/// Fixed path tags so independent concerns never share a substream.
namespace rngtag {
inline constexpr std::uint64_t kInit = 0;
inline constexpr std::uint64_t kSample = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kTrial = 3;
inline constexpr std::uint64_t kData = 4;
}  // namespace rngtag

}  // namespace binnlab
