#pragma once

#include <cstdint>
#include <random>

#include <boost/random/normal_distribution.hpp>

namespace fqs {

/**
 * A seedable random stream. Every stream is keyed by (seed, stream, substream)
 * through std::seed_seq, so the numbers a stratum (or a chunk of a stratum)
 * sees never depend on which worker runs it or in which order.
 *
 * Stream layout used by the estimator:
 *   stream    = stratum index (plain MC is stratum 0 of the trivial strata)
 *   substream = chunk index within the stratum, offset by the phase
 *               (pilot draws use kPilotPhase, main draws kMainPhase)
 */
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0)
      : engine_(make_engine(seed, stream, substream)) {}

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() {
    const std::uint64_t bits = engine_() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal draw (ziggurat).
  double normal() { return normal_(engine_); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream,
                                     std::uint64_t substream) {
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq seq{lo(seed), hi(seed), lo(stream), hi(stream), lo(substream), hi(substream)};
    return std::mt19937_64(seq);
  }

  std::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
};

inline constexpr std::uint64_t kMainPhase = 0;
inline constexpr std::uint64_t kPilotPhase = std::uint64_t{1} << 40;

}  // namespace fqs
