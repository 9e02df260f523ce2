/// @file coefficients.hpp
/// @brief Drift/diffusion field catalog, mollification by a compactly
///        supported bump kernel, smooth radial cutoffs, the Stratonovich
///        drift correction, and Hardy-Littlewood maximal averages.
///
/// Field evaluators return limiting values on any declared singular locus;
/// derivative evaluations perturb exact locus hits by 1e-12. Missing analytic
/// derivative data falls back to central finite differences with step
/// h = 1e-4 * (1 + |x|) unless the field forbids it.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "sdeflow/core.hpp"

namespace sdeflow {

enum class Smoothness { smooth, sobolev };

struct SingularLocus {
  std::string description;
  std::function<double(const Vec&)> distance;  // distance to the locus
  double exclusion_radius = 1e-6;
};

struct VectorFieldSpec {
  std::string name;
  int d = 1;  // state dimension
  int m = 1;  // driving dimension
  Smoothness smoothness = Smoothness::smooth;

  std::function<Vec(const Vec&)> drift;       // b(x), length d
  std::function<Mat(const Vec&)> diffusion;   // sigma(x), d x m

  // Optional analytic derivative data; empty means "derive by FD".
  std::function<Mat(const Vec&)> grad_drift;        // (i,j) = d_j b^i
  std::function<Rank3(const Vec&)> grad_diffusion;  // (k,i,l) = d_k sigma^{il}
  std::function<double(const Vec&)> sigma_hess_contraction_fn;  // sum sigma^{il} d2_{ij} sigma^{jl}

  std::optional<SingularLocus> locus;
  double linear_growth_const = 0.0;  // declared C with |b| + |sigma|_F <= C(1+|x|); 0 = none
  bool allow_fd = true;
};

/// Catalog factory. Known names: constant, linear, rotation, ou, geometric,
/// singular_sqrt, shear, sine_diffusion, degenerate_xy. Unknown names or
/// out-of-domain parameters throw std::invalid_argument.
VectorFieldSpec make_field(const std::string& name, const std::map<std::string, double>& params);

// --- derivative access (analytic if declared, FD fallback otherwise) -------

Mat grad_drift_of(const VectorFieldSpec& f, const Vec& x);
Rank3 grad_diffusion_of(const VectorFieldSpec& f, const Vec& x);
double div_drift_of(const VectorFieldSpec& f, const Vec& x);
/// (div sigma)^l = sum_i d_i sigma^{il}
Vec div_diffusion_of(const VectorFieldSpec& f, const Vec& x);
/// sum_{i,j,l} d_i sigma^{jl} d_j sigma^{il}
double grad_sigma_contraction(const VectorFieldSpec& f, const Vec& x);
/// sum_{i,j,l} sigma^{il} d2_{ij} sigma^{jl}
double sigma_hess_contraction(const VectorFieldSpec& f, const Vec& x);

// --- mollification ----------------------------------------------------------

/// Quadrature model of the standard normalized bump exp(-1/(1-|z|^2)) on the
/// unit ball: Gauss-Legendre nodes (polar in d >= 2). The node-set integral of
/// rho is exactly 1 by construction of the normalization.
struct MollifierKernel {
  int d = 1;
  double sup_rho = 0.0;  // max of the normalized bump (value at 0)
  std::vector<Vec> nodes;
  std::vector<double> weights;    // plain ball-quadrature weights
  std::vector<double> rho_vals;   // normalized bump at the nodes
  std::vector<Vec> grad_vals;     // gradient of the normalized bump
  std::vector<Mat> hess_vals;     // Hessian of the normalized bump

  double integral_of_rho() const;  // node-set integral (== 1 up to roundoff)

  /// node_budget <= 0 selects the default: 2048 for d <= 2, 8192 for d = 3.
  static MollifierKernel standard_bump(int d, int node_budget = 0);
};

/// b_eps = b * rho_eps with derivatives taken on the kernel. The returned
/// field is smooth, keeps the driving dimension, and drops any singular
/// locus. eps must be positive.
VectorFieldSpec mollify(const VectorFieldSpec& f, double eps,
                        std::shared_ptr<const MollifierKernel> kernel);

/// Smooth radial cutoff profile: 1 on [0,1], 0 on [2,inf), quintic smoothstep
/// blend between. sup |chi'| = 15/8.
struct CutoffProfile {
  double value(double r) const;
  double deriv(double r) const;
  static constexpr double sup_grad = 15.0 / 8.0;
};

/// b(x) * chi(x/n) componentwise on drift and diffusion; gradient bound
/// passes to sup|grad chi_n| = (15/8)/n. n must be positive.
VectorFieldSpec apply_cutoff(const VectorFieldSpec& f, double n, const CutoffProfile& profile = {});

/// Approximation ladder element: (b * rho_{1/n}) chi_n, both coefficients.
VectorFieldSpec mollified_cutoff_level(const VectorFieldSpec& f, int level,
                                       std::shared_ptr<const MollifierKernel> kernel);

/// Ito-form field equivalent to reading f as a Stratonovich equation: the
/// drift gains (1/2) sum_{j,l} sigma^{jl} d_j sigma^{il}, the diffusion is
/// unchanged. Throws std::runtime_error if derivative data is missing and FD
/// is disabled.
VectorFieldSpec stratonovich_correction(const VectorFieldSpec& f);

// --- maximal function -------------------------------------------------------

/// Scalar samples on a uniform grid over a box, multilinear interpolation.
struct ScalarGrid {
  Box box;
  std::array<int, kMaxDim> n{1, 1, 1};
  std::vector<double> values;

  static ScalarGrid sample(const std::function<double(const Vec&)>& fn, const Box& box,
                           const std::array<int, kMaxDim>& n);
  double interp(const Vec& x) const;
};

struct MaximalOptions {
  int ladder = 32;             // radii in the log-spaced ladder
  double min_radius_factor = 1e-3;
  int radial = 24;             // midpoint nodes per radius (per dimension)
  int angular = 32;            // angular midpoint nodes (d >= 2)
};

/// Average of fn over the ball B_s(x), midpoint quadrature.
double ball_average_fn(const std::function<double(const Vec&)>& fn, int d, double s, const Vec& x,
                       const MaximalOptions& opts = {});

/// sup over the radius ladder (0, R] of ball averages of fn.
double maximal_function_fn(const std::function<double(const Vec&)>& fn, int d, double R,
                           const Vec& x, const MaximalOptions& opts = {});

/// Grid flavor; throws std::domain_error if B_R(x) is not covered by the grid.
double maximal_function(const ScalarGrid& phi, double R, const Vec& x,
                        const MaximalOptions& opts = {});

// --- growth certificate -----------------------------------------------------

/// Numeric sups over a sample box for the coefficient-growth quantities used
/// by the transport estimates: [div b]^-, |div sigma|^2, and the shifted
/// product sup_{|z|<=eps} |sigma(x-z)|_F * |grad div sigma(x)|.
struct GrowthCertificate {
  double sup_neg_div_drift = 0.0;
  double sup_div_diffusion_sq = 0.0;
  double sup_shifted_product = 0.0;
};
GrowthCertificate growth_certificate(const VectorFieldSpec& f, double eps, const Box& box,
                                     int samples_per_dim);

}  // namespace sdeflow
