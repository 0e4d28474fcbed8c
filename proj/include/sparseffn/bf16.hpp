#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace sparseffn {

// Brain-float encoding: the upper half of an IEEE binary32, rounded to
// nearest-even. NaN payloads are quieted rather than rounded.
inline std::uint16_t encode_bf16(float v) noexcept {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  if (std::isnan(v)) return static_cast<std::uint16_t>((bits >> 16) | 0x40u);
  const std::uint32_t lsb = (bits >> 16) & 1u;
  return static_cast<std::uint16_t>((bits + 0x7FFFu + lsb) >> 16);
}

inline float decode_bf16(std::uint16_t h) noexcept {
  return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

inline float round_bf16(float v) noexcept { return decode_bf16(encode_bf16(v)); }

}  // namespace sparseffn
