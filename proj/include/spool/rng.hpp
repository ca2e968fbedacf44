#pragma once

#include <cmath>
#include <cstdint>

namespace spool {

// Counter-addressed pseudo-random stream built on the splitmix64 finalizer.
//
// A stream is (key, counter). Draw i of a stream is a pure hash of
// (key, i), so values depend only on the key and the draw index, never on
// which thread produced them. Substreams derive a fresh key from
// (parent key, tag); sampling code fans out one substream per batch element
// and addresses draws by region index, which makes results independent of
// the execution schedule.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed)
      : key_(finalize(seed + kGolden)), counter_(0) {}

  // Independent child stream. Children with distinct tags (or from distinct
  // parents) behave as unrelated streams.
  RngStream substream(std::uint64_t tag) const {
    RngStream child;
    child.key_ = finalize(key_ ^ finalize(tag * kTagSalt + kGolden));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() { return u64_at(counter_++); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() { return to_unit(next_u64()); }

  // Uniform integer in [0, bound). Lemire multiply-shift with rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const unsigned __int128 m =
          static_cast<unsigned __int128>(next_u64()) * bound;
      if (static_cast<std::uint64_t>(m) >= threshold)
        return static_cast<std::uint64_t>(m >> 64);
    }
  }

  // Standard normal via Box-Muller. Two draws per call; no cached spare, so
  // the stream position is a pure function of the call count.
  double next_gaussian() {
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Stateless indexed access; does not advance the stream.
  std::uint64_t u64_at(std::uint64_t index) const {
    return finalize(key_ + (index + 1) * kGolden);
  }
  double unit_at(std::uint64_t index) const { return to_unit(u64_at(index)); }

  std::uint64_t position() const { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kTagSalt = 0xD1B54A32D192ED03ull;

  static std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static double to_unit(std::uint64_t v) {
    return static_cast<double>(v >> 11) * 0x1.0p-53;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

// Fixed substream tags hanging off a run's master seed. Adding a consumer
// means adding a tag here; existing consumers keep their streams.
namespace rng_tags {
constexpr std::uint64_t kInit = 1;      // weight initialization
constexpr std::uint64_t kShuffle = 2;   // per-epoch training order
constexpr std::uint64_t kTrain = 3;     // train-phase pooling samples
constexpr std::uint64_t kEval = 4;      // test-phase sampling (stochastic eval)
constexpr std::uint64_t kSubsample = 5; // dataset subsampling
constexpr std::uint64_t kViz = 6;       // visualization resampling
}  // namespace rng_tags

}  // namespace spool
