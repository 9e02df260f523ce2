#include "sdeflow/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sdeflow {

namespace {

constexpr uint32_t kPhiloxW32A = 0x9E3779B9u;
constexpr uint32_t kPhiloxW32B = 0xBB67AE85u;
constexpr uint32_t kPhiloxM4x32A = 0xD2511F53u;
constexpr uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

inline void mul_hi_lo(uint32_t a, uint32_t b, uint32_t* lo, uint32_t* hi) {
  const uint64_t p = static_cast<uint64_t>(a) * static_cast<uint64_t>(b);
  *lo = static_cast<uint32_t>(p);
  *hi = static_cast<uint32_t>(p >> 32);
}

inline void one_round(uint32_t ctr[4], const uint32_t key[2]) {
  uint32_t lo0, hi0, lo1, hi1;
  mul_hi_lo(kPhiloxM4x32A, ctr[0], &lo0, &hi0);
  mul_hi_lo(kPhiloxM4x32B, ctr[2], &lo1, &hi1);
  const uint32_t r0 = hi1 ^ ctr[1] ^ key[0];
  const uint32_t r1 = lo1;
  const uint32_t r2 = hi0 ^ ctr[3] ^ key[1];
  const uint32_t r3 = lo0;
  ctr[0] = r0;
  ctr[1] = r1;
  ctr[2] = r2;
  ctr[3] = r3;
}

}  // namespace

PhiloxBlock philox4x32(const uint32_t counter[4], const uint32_t key[2]) {
  PhiloxBlock out;
  uint32_t c[4] = {counter[0], counter[1], counter[2], counter[3]};
  uint32_t k[2] = {key[0], key[1]};
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kPhiloxW32A;
      k[1] += kPhiloxW32B;
    }
    one_round(c, k);
  }
  out.x[0] = c[0];
  out.x[1] = c[1];
  out.x[2] = c[2];
  out.x[3] = c[3];
  return out;
}

namespace {

// Layout: key = master seed; counter = (stream lo, stream hi, step, lane).
// Lane space is split so normal and uniform draws never share a block.
inline PhiloxBlock block_for(uint64_t seed, uint64_t stream, uint32_t step, uint32_t lane) {
  const uint32_t key[2] = {static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
  const uint32_t ctr[4] = {static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32),
                           step, lane};
  return philox4x32(ctr, key);
}

// (0, 1] so the log in Box-Muller is always finite.
inline double to_unit_open(uint32_t v) {
  return (static_cast<double>(v) + 1.0) * 0x1.0p-32;
}

}  // namespace

double normal_draw(uint64_t seed, uint64_t stream, uint32_t step, uint32_t lane) {
  const PhiloxBlock b = block_for(seed, stream, step, lane);
  const double u1 = to_unit_open(b.x[0]);
  const double u2 = to_unit_open(b.x[1]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double uniform_draw(uint64_t seed, uint64_t stream, uint32_t step, uint32_t lane) {
  const PhiloxBlock b = block_for(seed, stream, step, lane | 0x80000000u);
  return static_cast<double>(b.x[0]) * 0x1.0p-32;
}

BrownianPath make_brownian_path(uint64_t seed, uint64_t replicate, int m, int steps) {
  if (steps <= 0) throw std::invalid_argument("make_brownian_path: steps must be positive");
  if (m <= 0 || m > kMaxDim) throw std::invalid_argument("make_brownian_path: bad driving dimension");
  BrownianPath p;
  p.m = m;
  p.steps = steps;
  p.dt = 1.0 / static_cast<double>(steps);
  p.seed = seed;
  p.replicate = replicate;
  p.dw.resize(static_cast<size_t>(steps) * static_cast<size_t>(m));
  const double root_dt = std::sqrt(p.dt);
  for (int k = 0; k < steps; ++k)
    for (int l = 0; l < m; ++l)
      p.dw[static_cast<size_t>(k) * static_cast<size_t>(m) + static_cast<size_t>(l)] =
          root_dt * normal_draw(seed, replicate, static_cast<uint32_t>(k), static_cast<uint32_t>(l));
  return p;
}

}  // namespace sdeflow
