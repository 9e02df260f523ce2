/// @file stability.hpp
/// @brief Stability functional xi_delta, flow-gap estimates between two
///        approximate flows under shared noise, the maximal-function
///        Lipschitz audit, the f_{delta,eps} majorant, and the Cauchy
///        convergence study across mollification levels.

#pragma once

#include "sdeflow/density.hpp"

namespace sdeflow {

/// Smooth profile with xi(s) = s on [0, delta/4], xi(s) = delta/2 on
/// [3 delta/4, inf), 0 <= xi' <= 1 and |xi''| <= 3.75/delta: a quintic
/// smoothstep blend of xi' from 1 to 0 over [delta/4, 3 delta/4], which is
/// the unique such interval making the profile C^2 with the required plateau
/// value delta/2. On [0, delta] it satisfies s <= 2 xi(s).
struct XiDelta {
  double delta = 0.1;

  explicit XiDelta(double delta_in);  // requires delta in (0,1)
  double value(double s) const;
  double deriv(double s) const;
  double second(double s) const;
};

/// Convenience form of XiDelta(delta).value(s).
double xi_delta_eval(double s, double delta);

// --- flow gap -------------------------------------------------------------------

/// Gap functionals between two flows driven by the same path from the same
/// grid. All integrals run over start points in B_N with weights
/// w_i * e^{lambda(start_i)}, so ensembles should carry Lebesgue cell
/// weights; pass the zero measure when the weights already represent mu.
/// The confinement event G_R = {sup_t |X_t| v |X'_t| <= R} uses the running
/// sup over every step, and Phi = sup over saved times of |Z_t|^2.
struct StabilityReport {
  int level_a = 0, level_b = 0;  // ladder levels when produced by cauchy_study
  double radius_ball = 0.0;      // N
  double radius_confine = 0.0;   // R
  double delta = 0.0;

  double xi_gap = 0.0;   // int_{B_N cap G_R} (xi_delta(Phi) ^ 1) dmu
  double sq_gap = 0.0;   // int_{B_N cap G_R} (Phi ^ 1) dmu
  double log_gap = 0.0;  // int_{B_N cap G_R} log(Phi/delta^2 + 1) dmu
  double excluded_mass = 0.0;       // mu(B_N cap G_R^c)
  double confined_mass = 0.0;       // mu(B_N cap G_R)
  double sup_overlay_integral = 0.0;  // int_{B_N} sup_t(|X_t| v |X'_t|) dmu
  long confined_count = 0;
  long excluded_count = 0;
  long total_count = 0;  // particles starting in B_N
  /// Confined particles with log(Phi/delta^2+1) <= (1/2) log(1/delta) but
  /// Phi >= delta; zero by elementary algebra, counted as a self-check.
  long threshold_violations = 0;
};

/// Requires the two ensembles to share grid, path, and saved times; throws
/// std::invalid_argument otherwise (the gap is meaningful only under shared
/// noise). Symmetric in its arguments and identically zero on the diagonal.
StabilityReport flow_gap(const FlowEnsemble& a, const FlowEnsemble& b, double delta, double N,
                         double R, const WeightedMeasure& measure,
                         RunMode mode = RunMode::parallel);

// --- maximal-function Lipschitz audit ---------------------------------------------

struct PairSample {
  Vec x, y;
};

/// Deterministic sample of `count` pairs with x uniform in the box and
/// |x - y| <= R.
std::vector<PairSample> sample_pairs(const Box& box, double R, size_t count, uint64_t seed);

/// Fraction of pairs violating
///   |b(x) - b(y)| <= 2^d |x - y| (M_R|grad b|(x) + M_R|grad b|(y)) + 1e-9.
/// Pairs within a declared singular locus' exclusion radius are skipped.
double lipschitz_maximal_check(const VectorFieldSpec& field, double R,
                               const std::vector<PairSample>& pairs,
                               const MaximalOptions& opts = {},
                               RunMode mode = RunMode::parallel);

// --- the f_{delta,eps} majorant ---------------------------------------------------

/// Three-term majorant at x:
///   eps^{-d} ||rho||_inf int_{B_1} |grad b|(x+z) dz
///   + delta^{-1} int_0^delta avg_{B_s} |grad b|(x+.) ds
///   + int_delta^{sqrt(delta)} s^{-1} avg_{B_s} |grad(b_eps - b)|(x+.) ds,
/// with midpoint ladders in s (log-spaced for the third term). Requires
/// delta, eps in (0, 1/4).
double f_delta_eps_majorant(const VectorFieldSpec& field, const Vec& x, double delta, double eps,
                            std::shared_ptr<const MollifierKernel> kernel,
                            const MaximalOptions& opts = {}, int s_nodes = 16);

/// Companion integral bound: int_{B_R} f_{delta,eps} dx against
/// C_{rho,d} eps^{-d} ||grad b||_{L1(B_{R+1})}
///   + (1/2) log(1/delta) ||grad(b_eps - b)||_{L1(B_{R+1})}
/// with C_{rho,d} = ||rho||_inf |B_1| + 1.
struct MajorantBudget {
  double integral_f = 0.0;
  double budget = 0.0;
  double c_rho_d = 0.0;
  bool holds = false;
};

MajorantBudget f_delta_eps_budget(const VectorFieldSpec& field, double delta, double eps,
                                  std::shared_ptr<const MollifierKernel> kernel, double R,
                                  int lattice_n, const MaximalOptions& opts = {},
                                  int s_nodes = 16, RunMode mode = RunMode::parallel);

// --- Cauchy study across mollification levels --------------------------------------

struct GapRow {
  int level_a = 0, level_b = 0;
  double xi_gap_mean = 0.0, xi_gap_se = 0.0;
  double sq_gap_mean = 0.0, sq_gap_se = 0.0;
  double log_gap_mean = 0.0, log_gap_se = 0.0;
  double excluded_mean = 0.0;
};

struct CauchyStudy {
  std::vector<int> levels;
  double delta = 0.0, radius_ball = 0.0, radius_confine = 0.0;
  std::vector<GapRow> rows;  // consecutive pairs, then the extreme pair
};

/// For each replicate, drives every approximation level with one shared path
/// from the shared grid and reports replicate-averaged gap functionals with
/// standard errors for consecutive level pairs and the extreme pair.
/// Levels are realized by mollified_cutoff_level. For 1D fields the level
/// coefficients are tabulated on a tabulate_n-point piecewise-linear grid
/// spanning [-R-1, R+1] before integration (tabulate_n = 0 disables this);
/// kernel sums would otherwise dominate the runtime.
CauchyStudy cauchy_study(const VectorFieldSpec& field, const std::vector<int>& levels,
                         double delta, double N, double R, const WeightedMeasure& measure,
                         int replicates, const ParticleGrid& grid, int steps, uint64_t seed,
                         int monitor = 16, int tabulate_n = 16384,
                         Scheme scheme = Scheme::ito_euler, RunMode mode = RunMode::parallel);

}  // namespace sdeflow
