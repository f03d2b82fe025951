#include "cmtrl/rng.hpp"

namespace cmtrl {

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : id_(stream_id) {
  // Two finalizer rounds decorrelate nearby (seed, id) pairs.
  state_ = mix64(mix64(seed + kGamma) + (stream_id + 1) * kGamma);
}

std::uint64_t RngStream::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int RngStream::sample(const double* probs, int n, int stride) {
  const double u = next_double();
  double cum = 0.0;
  for (int i = 0; i < n; ++i) {
    cum += probs[i * stride];
    if (u < cum) return i;
  }
  return n - 1;
}

}  // namespace cmtrl
