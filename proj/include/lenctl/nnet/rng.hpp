#pragma once

// Counter-based random stream: the value at (stream, counter) is a pure
// function of both, so dropout masks replay exactly regardless of call order.

#include <cstdint>

namespace lenctl::nnet {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine_streams(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL));
}

// Uniform in [0, 1) with 53 random bits.
constexpr double counter_uniform(std::uint64_t stream, std::uint64_t counter) {
  return static_cast<double>(mix64(stream ^ mix64(counter)) >> 11) * 0x1.0p-53;
}

}  // namespace lenctl::nnet
