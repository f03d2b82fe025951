#pragma once

#include <cstdint>

namespace cmtrl {

/// Counter-based pseudo-random stream (splitmix64 core).
///
/// Each agent owns one stream derived from (seed, stream_id). A draw is a pure
/// function of the stream state, so simulations are reproducible bit-for-bit
/// regardless of how per-agent work is scheduled. Streams with different ids
/// never share state.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t id() const { return id_; }

  std::uint64_t next_u64();

  /// Uniform double in [0, 1), 53 mantissa bits.
  double next_double();

  /// Inverse-CDF draw from a finite distribution. `probs` holds n nonnegative
  /// weights summing to ~1; rounding residue falls on the last index.
  int sample(const double* probs, int n, int stride = 1);

 private:
  std::uint64_t state_ = 0x9E3779B97F4A7C15ull;
  std::uint64_t id_ = 0;
};

}  // namespace cmtrl
