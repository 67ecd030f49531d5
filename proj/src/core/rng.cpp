#include "core/rng.hpp"

#include <cmath>

namespace bispike {

namespace {

constexpr uint32_t kPhiloxW32A = 0x9E3779B9u;
constexpr uint32_t kPhiloxW32B = 0xBB67AE85u;
constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;

inline void philox_round(std::array<uint32_t, 4>& ctr, uint32_t k0, uint32_t k1) {
  uint64_t p0 = static_cast<uint64_t>(kPhiloxM0) * ctr[0];
  uint64_t p1 = static_cast<uint64_t>(kPhiloxM1) * ctr[2];
  uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
  uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
  ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
}

}  // namespace

std::array<uint32_t, 4> philox4x32(uint64_t key, uint64_t ctr_hi, uint64_t ctr_lo) {
  std::array<uint32_t, 4> ctr = {
      static_cast<uint32_t>(ctr_lo), static_cast<uint32_t>(ctr_lo >> 32),
      static_cast<uint32_t>(ctr_hi), static_cast<uint32_t>(ctr_hi >> 32)};
  uint32_t k0 = static_cast<uint32_t>(key);
  uint32_t k1 = static_cast<uint32_t>(key >> 32);
  for (int r = 0; r < 10; ++r) {
    philox_round(ctr, k0, k1);
    k0 += kPhiloxW32A;
    k1 += kPhiloxW32B;
  }
  return ctr;
}

uint32_t stream_id(std::string_view label) {
  // FNV-1a.
  uint32_t h = 2166136261u;
  for (char c : label) {
    h ^= static_cast<uint8_t>(c);
    h *= 16777619u;
  }
  return h;
}

float RngStream::uniform(uint64_t element) const {
  uint32_t r = bits32(element);
  return static_cast<float>(r >> 8) * (1.0f / 16777216.0f);
}

double RngStream::uniform_open(uint64_t element) const {
  uint32_t r = bits32(element);
  return (static_cast<double>(r) + 0.5) * (1.0 / 4294967296.0);
}

uint32_t RngStream::bits32(uint64_t element) const {
  uint64_t hi = (static_cast<uint64_t>(stream_) << 32) | t_;
  return philox4x32(seed_, hi, element)[0];
}

double RngStream::gaussian(uint64_t element) const {
  uint64_t hi = (static_cast<uint64_t>(stream_) << 32) | t_;
  auto r = philox4x32(seed_, hi, element);
  double u1 = (static_cast<double>(r[0]) + 0.5) * (1.0 / 4294967296.0);
  double u2 = (static_cast<double>(r[1]) + 0.5) * (1.0 / 4294967296.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double RngStream::laplace(uint64_t element, double b) const {
  double u = uniform_open(element) - 0.5;
  return -b * std::copysign(std::log(1.0 - 2.0 * std::fabs(u)), u);
}

}  // namespace bispike
