/// @file ldp.hpp
/// @brief Small-noise rate machinery: rate-function minimization over
///        piecewise-constant controls constrained by the deterministic
///        skeleton, Monte Carlo event probabilities on an epsilon ladder with
///        extrapolation, Laplace-functional estimation, and convergence
///        tables for weakly convergent control families.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdeflow/coefficients.hpp"
#include "sdeflow/core.hpp"
#include "sdeflow/flow.hpp"

namespace sdeflow {

/// Event/target description shared by the optimizer and the Monte Carlo
/// table. phi(x) = dot(x, direction); events are {phi >= level}.
struct EventTarget {
  enum class Kind { whole_space, endpoint_point, endpoint_halfspace, running_max };
  Kind kind = Kind::endpoint_point;
  Vec point;      ///< endpoint_point: the target endpoint
  Vec direction;  ///< halfspace / running_max events
  double level = 0.0;

  std::string describe() const;

  static EventTarget whole(int d);
  static EventTarget endpoint(const Vec& a);
  static EventTarget halfspace(const Vec& dir, double level);
  /// Running-maximum exceedance: sup over grid times of phi(x_t) >= level.
  static EventTarget threshold(const Vec& dir, double level);
};

struct RateOptions {
  int max_iters = 400;      ///< gradient iterations per penalty stage
  double grad_tol = 1e-9;   ///< stage stops when the gradient norm drops below
  double penalty0 = 100.0;  ///< first-stage quadratic penalty weight
  int stages = 4;           ///< penalty multiplies by 10 each stage
  double feas_tol = 1e-4;   ///< residual below which the result is feasible
};

/// Result of minimizing (1/2)||h||^2 subject to the skeleton hitting the
/// target. `value` equals h_star.energy() exactly when feasible and +infinity
/// otherwise (the infimum over an empty set).
struct RateEstimate {
  std::string description;
  Control h_star;
  double value = 0.0;
  double energy = 0.0;  ///< (1/2)||h_star||^2 of the best control found
  int iterations = 0;
  std::vector<double> grad_norms;  ///< final gradient norm per penalty stage
  double residual = 0.0;           ///< distance of the trajectory to the target
  bool feasible = false;
  double penalty_final = 0.0;
};

/// Adjoint-gradient minimization of (1/2)||h||^2 + penalty * dist^2 on the
/// Heun-discretized skeleton with one control value per step (K steps =
/// K control segments, K >= 16), Barzilai-Borwein steps safeguarded by
/// backtracking, and four penalty-continuation stages.
RateEstimate rate_minimize(const VectorFieldSpec& field, const Vec& x0, const EventTarget& target,
                           int segments, const RateOptions& opts = {});

/// One epsilon row of the small-noise table.
struct SmallNoiseRow {
  double eps = 0.0;
  uint64_t hits = 0;
  uint64_t trials = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0;  ///< 95% Wilson interval
  double ci_hi = 0.0;
  double eps_log_p = 0.0;  ///< eps * log(p_hat); meaningless when hits == 0
  bool usable = false;     ///< hits > 0
};

struct SmallNoiseTable {
  std::string event;
  std::vector<SmallNoiseRow> rows;  ///< sorted by descending eps
  /// Extrapolated limit of eps*log P as eps -> 0, from the three smallest
  /// usable eps. On a ratio-2 ladder the two-stage form 2*R23 - R12 (pairwise
  /// linear extrapolations R) cancels both the eps and the eps*log(eps) terms
  /// of exponential tail asymptotics; on other spacings only the single
  /// pairwise extrapolation from the two smallest rows is used.
  double extrapolated = 0.0;
  bool extrapolation_valid = false;
  bool two_stage = false;
};

/// Monte Carlo estimate of P(event) for dX = b dt + sqrt(eps) sigma dW on the
/// unit horizon with `steps` Euler steps (dt = 1/steps), one counter-based
/// stream per particle; row r uses master seed `seed + r`. Zero-hit rows
/// report the one-sided Wilson interval and are excluded from extrapolation.
SmallNoiseTable small_noise_mc(const VectorFieldSpec& field, const Vec& x0,
                               const std::vector<double>& eps_ladder, const EventTarget& event,
                               uint64_t particles, int steps, uint64_t seed,
                               RunMode mode = RunMode::parallel);

struct LaplaceEstimate {
  double value = 0.0;  ///< eps * log mean exp(-g/eps), log-sum-exp reduction
  double ess = 0.0;    ///< (sum w)^2 / sum w^2 of the normalized weights
  bool reliable = true;  ///< false when ess < 100
  uint64_t particles = 0;
};

/// Estimate eps*log E[exp(-g(X^eps)/eps)] by Monte Carlo over `particles`
/// paths of dX = b dt + sqrt(eps) sigma dW (unit horizon, dt = 1/steps).
/// g receives the discrete path (steps+1 states) and must stay within
/// [-bound, bound]; a violating sample throws std::domain_error.
LaplaceEstimate laplace_estimate(const VectorFieldSpec& field, const Vec& x0,
                                 const std::function<double(const std::vector<Vec>&)>& g,
                                 double bound, double eps, uint64_t particles, int steps,
                                 uint64_t seed, RunMode mode = RunMode::parallel);

/// One row of the weak-convergence table for a control family h_n -> h.
struct WeakConvergenceRow {
  int index = 0;           ///< family index n
  double control_gap = 0.0;  ///< L2 norm of h_n - h
  double sup_w = 0.0;      ///< sup_t |int_0^t sigma(X^h_s)(h_n(s) - h(s)) ds|
  double sup_path_gap = 0.0;  ///< sup_t |X^{h_n}_t - X^h_t|
};

/// Tabulate, against n, the oscillation integral w_t (computed along the
/// limit trajectory X^h on the step grid) and the skeleton solution gap.
/// Every control must lie in the L2 ball of radius M; violations throw.
/// indices[i] labels family member i in the returned rows.
std::vector<WeakConvergenceRow> weak_convergence_check(const VectorFieldSpec& field, const Vec& x0,
                                                       const std::vector<Control>& family,
                                                       const std::vector<int>& indices,
                                                       const Control& h, double M, int steps,
                                                       RunMode mode = RunMode::parallel);

/// Side-by-side comparison of the optimizer's rate and the Monte Carlo trend.
struct LdpReport {
  double rate_value = 0.0;      ///< I from the rate estimate
  double extrapolated = 0.0;    ///< -extrapolated eps log P
  double rel_discrepancy = 0.0;  ///< |extrapolated - I| / max(I, 1e-12); 0 when both vanish
  bool sandwich_consistent = false;  ///< rel_discrepancy <= tol (or both sides zero)
  bool trend_above_rate = false;     ///< every usable -eps log P row >= I - tol*max(I,1)
  double tol = 0.0;
  std::vector<double> trend;  ///< -eps log p per usable row, descending eps
};

/// Requires the table's event to match the rate estimate's target
/// description; discrepancies are reported, not judged.
LdpReport ldp_report(const RateEstimate& rate, const SmallNoiseTable& table, double tol = 0.15);

}  // namespace sdeflow
