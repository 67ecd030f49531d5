#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace bispike {

// Counter-based RNG (Philox4x32-10). Every draw is a pure function of
// (seed, stream, timestep, element index), so any sample can be regenerated
// in isolation: resume, replay and parallel evaluation all see identical
// streams with no state to thread through the code.
std::array<uint32_t, 4> philox4x32(uint64_t key, uint64_t ctr_hi, uint64_t ctr_lo);

// Stable 32-bit stream id from a label such as "init/emb_tok" or "batch".
uint32_t stream_id(std::string_view label);

class RngStream {
 public:
  RngStream(uint64_t seed, uint32_t stream, uint32_t timestep = 0)
      : seed_(seed), stream_(stream), t_(timestep) {}

  // Uniform in [0, 1), 24-bit resolution.
  float uniform(uint64_t element) const;
  // Uniform in the open interval (0, 1); safe to feed through log().
  double uniform_open(uint64_t element) const;
  double gaussian(uint64_t element) const;               // standard normal
  double laplace(uint64_t element, double b = 1.0) const;  // location 0, scale b
  uint32_t bits32(uint64_t element) const;

  uint64_t seed() const { return seed_; }
  uint32_t stream() const { return stream_; }
  uint32_t timestep() const { return t_; }

 private:
  uint64_t seed_;
  uint32_t stream_;
  uint32_t t_;
};

}  // namespace bispike
