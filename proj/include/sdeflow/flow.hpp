/// @file flow.hpp
/// @brief SDE flow integration over particle grids with shared noise: base
///        flow, tangent (variational) flow, Jacobian-determinant formula,
///        deterministic skeleton equation, and the controlled small-noise
///        equation.
///
/// All particles of one ensemble share a single Brownian path (common noise),
/// so the ensemble is a discretization of one flow map realization.

#pragma once

#include <string>

#include "sdeflow/coefficients.hpp"
#include "sdeflow/rng.hpp"

namespace sdeflow {

inline constexpr double kDivergenceThreshold = 1e8;

enum class Scheme { ito_euler, stratonovich };

/// Config tags: "ito-euler" | "stratonovich-heun". Unknown tags throw.
Scheme scheme_from_tag(const std::string& tag);
std::string scheme_tag(Scheme s);

/// Start points with quadrature weights for a weighted measure e^{lambda} dx.
struct ParticleGrid {
  int d = 1;
  std::vector<Vec> points;
  std::vector<double> weights;

  double total_weight() const;

  /// Cell-center lattice over a box; weight = e^{lambda(center)} * cellvol.
  /// An empty log_weight means Lebesgue measure.
  static ParticleGrid lattice(const Box& box, const std::array<int, kMaxDim>& n,
                              const std::function<double(const Vec&)>& log_weight = {});
};

struct FlowEnsemble {
  int d = 1;
  std::string scheme;           // "ito-euler" | "stratonovich-heun"
  BrownianPath path;            // the shared driving path
  std::vector<Vec> start;       // grid points
  std::vector<double> weights;  // grid weights
  std::vector<double> save_times;
  std::vector<int> save_steps;
  std::vector<std::vector<Vec>> positions;  // [save][particle]
  std::vector<std::vector<Mat>> tangent;    // [save][particle], filled by simulate_tangent
  bool has_tangent = false;
  std::vector<unsigned char> diverged;  // per particle
  std::vector<double> sup_norm;         // running sup_t |X_t| per particle
  std::vector<double> max_comp0;        // running max_t X_t[0] per particle
  int divergent_count = 0;
};

/// Euler-Maruyama under the Ito tag; the Stratonovich tag integrates the Ito
/// form with the corrected drift. Requires path.dt <= 1e-2. Particles whose
/// norm exceeds 1e8 are frozen, flagged, and counted.
FlowEnsemble simulate_flow(const VectorFieldSpec& field, const ParticleGrid& grid,
                           const BrownianPath& path, const std::vector<double>& saves,
                           Scheme scheme = Scheme::ito_euler, RunMode mode = RunMode::parallel);

/// Variational flow dJ = grad b J dt + grad sigma^{.l} J dW^l along the same
/// path and scheme; J_0 = I. Returns a copy of the ensemble with tangent data.
FlowEnsemble simulate_tangent(const VectorFieldSpec& field, const FlowEnsemble& ensemble,
                              RunMode mode = RunMode::parallel);

/// Single-particle full-resolution trajectory (positions at steps 0..steps).
std::vector<Vec> integrate_path(const VectorFieldSpec& field, const Vec& x0,
                                const BrownianPath& path, Scheme scheme = Scheme::ito_euler);

/// det grad X_t via the exponential formula, left-point discretization:
/// exp{ sum div sigma(X_k) dW_k + sum [div b - (1/2) d_i sigma^{jl} d_j sigma^{il}](X_k) dt }.
/// The field must be the Ito-form field that drove the trajectory. Returns
/// one value per entry of save_steps.
std::vector<double> jacobian_via_formula(const VectorFieldSpec& field,
                                         const std::vector<Vec>& trajectory,
                                         const BrownianPath& path,
                                         const std::vector<int>& save_steps);

struct MomentBound {
  double bound = 0.0;        // exp{t p sup [bracket]^+}; +inf if the sup overflowed
  double sup_bracket = 0.0;  // the estimated sup of the positive part
  double mc_estimate = 0.0;  // E |det grad X_t|^{-p} from tangent determinants
  double mc_se = 0.0;
  bool bound_finite = true;
};

/// Moment bound for the inverse Jacobian against its Monte Carlo estimate.
/// The bracket is -div b + (1/2) d_i sigma^{jl} d_j sigma^{il}
///               + sigma^{il} d2_{ij} sigma^{jl} + (p/2) |div sigma|^2,
/// with the sup taken over a sample lattice on sup_box.
MomentBound inverse_jacobian_moment(const VectorFieldSpec& field, double p, double t,
                                    const Box& sup_box, int sup_samples,
                                    const ParticleGrid& grid, int replicates, int steps,
                                    uint64_t seed, Scheme scheme = Scheme::ito_euler,
                                    RunMode mode = RunMode::parallel);

/// Piecewise-constant control on a uniform partition of [0,1].
struct Control {
  int m = 1;
  std::vector<Vec> values;  // h_k, one per interval

  int segments() const { return static_cast<int>(values.size()); }
  double seg_dt() const { return 1.0 / segments(); }
  double energy() const;       // (1/2) sum |h_k|^2 seg_dt
  double l2_norm() const;      // sqrt(sum |h_k|^2 seg_dt)
  bool in_ball(double M) const { return l2_norm() <= M; }
  const Vec& at_time(double t) const;

  static Control constant(int m, const Vec& v, int segments);
  static Control zero(int m, int segments);
};

struct SkeletonResult {
  std::vector<std::vector<Vec>> traj;  // [particle][step 0..steps]
  std::vector<unsigned char> diverged;
  int divergent_count = 0;
  double dt = 0.0;
};

/// Deterministic RK2 (Heun) integration of dx/dt = b(x) + sigma(x) h_t from
/// every grid point. steps must be a positive multiple of h.segments().
SkeletonResult solve_skeleton(const VectorFieldSpec& field, const Control& h,
                              const ParticleGrid& grid, int steps,
                              RunMode mode = RunMode::parallel);

/// dX = b(X)dt + sigma(X)h_t dt + sqrt(eps) sigma(X)dW: RK2 on the
/// deterministic part plus Euler noise. eps = 0 reproduces solve_skeleton
/// bit-for-bit on the same partition.
FlowEnsemble simulate_controlled(const VectorFieldSpec& field, const Control& h, double eps,
                                 const ParticleGrid& grid, const BrownianPath& path,
                                 const std::vector<double>& saves,
                                 RunMode mode = RunMode::parallel);

}  // namespace sdeflow
