#pragma once

#include <cstdint>

namespace grace {

// Purpose tags keep the random substreams used by different parts of a run
// disjoint: view corruption never shares draws with parameter init, splits,
// or the one-shot contamination transform.
enum class RngPurpose : uint64_t {
  EdgeRemoval = 1,
  FeatureMask = 2,
  ParamInit = 3,
  Split = 4,
  Contaminate = 5,
  ProbeInit = 6,
};

namespace detail {
// Finalizer from splitmix64 (Vigna, public domain).
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Counter-based random stream: the i-th output is a pure function of
/// (key, i), so any substream can be reconstructed in isolation without
/// replaying the draws that preceded it.
class StreamRng {
 public:
  explicit StreamRng(uint64_t key) : key_(key) {}

  /// Substream keyed by (master_seed, epoch, stream_index, purpose).
  static StreamRng substream(uint64_t master_seed, uint64_t epoch, uint64_t stream_index,
                             RngPurpose purpose) {
    uint64_t k = detail::mix64(master_seed + GOLDEN);
    k = detail::mix64(k ^ (epoch + GOLDEN));
    k = detail::mix64(k ^ (stream_index + GOLDEN));
    k = detail::mix64(k ^ (static_cast<uint64_t>(purpose) + GOLDEN));
    return StreamRng(k);
  }

  uint64_t next_u64() {
    counter_ += GOLDEN;
    return detail::mix64(key_ + counter_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// One Bernoulli trial; returns true with probability p. p=0 never fires,
  /// p=1 always does (next_double() < 1 exactly).
  bool bernoulli(double p) { return next_double() < p; }

  /// Uniform in [-bound, bound].
  double uniform_symmetric(double bound) { return bound * (2.0 * next_double() - 1.0); }

  /// Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny against 2^64.
    return next_u64() % n;
  }

 private:
  static constexpr uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL;
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace grace
