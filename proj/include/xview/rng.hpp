#ifndef XVIEW_RNG_HPP_
#define XVIEW_RNG_HPP_

#include <array>
#include <cstdint>
#include <string_view>

namespace xview {

/// SplitMix64 finalizer; used for seeding and for deriving child seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Child seed for a named purpose: splitmix64(master ^ fnv1a64(tag)).
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) noexcept;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

/// xoshiro256** seeded through SplitMix64. The stream depends only on the
/// seed; all derived draws use integer arithmetic or IEEE-exact operations
/// except the gaussian transform, which calls std::log and std::sqrt.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  static constexpr std::string_view algorithm() noexcept { return "xoshiro256**/splitmix64"; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer in [0, n), rejection sampled (no modulo bias). n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via the Marsaglia polar method.
  double gaussian() noexcept;

  bool operator==(const SeededRng&) const = default;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xview

#endif  // XVIEW_RNG_HPP_
