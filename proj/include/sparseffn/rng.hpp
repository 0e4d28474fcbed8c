#pragma once

#include <array>
#include <cstdint>

namespace sparseffn {

// xoshiro256** seeded through splitmix64. Normal draws use the Box-Muller
// transform on 53-bit uniforms, so streams are reproducible across platforms
// and standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) noexcept;

  // Independent stream derived from (seed, stream id).
  static SeededRng derive(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1).
  double uniform() noexcept;
  // Uniform integer on [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept;
  double normal() noexcept;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace sparseffn
