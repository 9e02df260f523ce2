/// @file rng.hpp
/// @brief Counter-based random streams (Philox 4x32-10) and Brownian path
///        generation. Streams are keyed by (master seed, replicate, particle)
///        so any increment can be regenerated independently of evaluation
///        order; runs are bit-reproducible on the same platform regardless of
///        thread count.

#pragma once

#include <cstdint>
#include <vector>

#include "sdeflow/core.hpp"

namespace sdeflow {

struct PhiloxBlock {
  uint32_t x[4];
};

/// One 128-bit Philox 4x32 block with 10 rounds.
PhiloxBlock philox4x32(const uint32_t counter[4], const uint32_t key[2]);

/// Standard normal draw derived from a Philox block via Box-Muller.
/// Deterministic in (seed, stream, step, lane).
double normal_draw(uint64_t seed, uint64_t stream, uint32_t step, uint32_t lane);

/// Uniform draw in [0, 1) from the same keying scheme, distinct lane space.
double uniform_draw(uint64_t seed, uint64_t stream, uint32_t step, uint32_t lane);

/// Time grid is [0, 1] split into `steps` equal increments. A path holds the
/// Brownian increments dW[k*m + l] for step k and driving component l.
struct BrownianPath {
  int m = 1;
  int steps = 0;
  double dt = 0.0;
  uint64_t seed = 0;
  uint64_t replicate = 0;
  std::vector<double> dw;

  double increment(int step, int comp) const {
    return dw[static_cast<size_t>(step) * static_cast<size_t>(m) + static_cast<size_t>(comp)];
  }
};

/// Generate the increments for one replicate. steps * dt must equal the unit
/// horizon to within 1e-12.
BrownianPath make_brownian_path(uint64_t seed, uint64_t replicate, int m, int steps);

}  // namespace sdeflow
