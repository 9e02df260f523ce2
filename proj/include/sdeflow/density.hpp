/// @file density.hpp
/// @brief Weighted measures with growth envelopes, pushforward density
///        estimation by histogram binning, the Lambda functionals, the L^p
///        density bound, and the transport certificate.

#pragma once

#include "sdeflow/flow.hpp"

namespace sdeflow {

/// mu(dx) = e^{lambda(x)} dx restricted to a quadrature box. Envelopes bound
/// lambda and its derivatives uniformly over shifts: for every |y| <=
/// shift_radius,  lambda(x) <= gamma1(x-y), |grad lambda(x)| <= gamma2(x-y),
/// |hess lambda(x)|_F <= gamma3(x-y).
struct WeightedMeasure {
  std::string name;
  int d = 1;
  double shift_radius = 0.5;
  std::function<double(const Vec&)> lambda;
  std::function<Vec(const Vec&)> grad_lambda;
  std::function<Mat(const Vec&)> hess_lambda;
  std::function<double(const Vec&)> gamma1, gamma2, gamma3;
  Box domain;          // quadrature box
  bool finite_on_rd = false;  // whether the untruncated mass is finite

  ParticleGrid quadrature(const std::array<int, kMaxDim>& n) const;
  double total_mass(const std::array<int, kMaxDim>& n) const;
};

/// Catalog: zero (Lebesgue), log_poly (lambda = -alpha log(1+|x|^2)),
/// gaussian_power (lambda = -|x|^{2 alpha}, alpha >= 1). Common params:
/// d, halfwidth (quadrature box [-hw, hw]^d), alpha.
WeightedMeasure make_measure(const std::string& name, const std::map<std::string, double>& params);

// --- pushforward densities ----------------------------------------------------

struct BinSpec {
  Box box;
  std::array<int, kMaxDim> n{1, 1, 1};

  size_t total() const;
  /// flat index of the bin containing x, or -1 when outside the box
  long flat_index(const Vec& x) const;
  Box bin_box(size_t flat) const;
};

struct DensityEstimate {
  BinSpec bins;
  double time = 0.0;
  std::vector<double> j;        // per-bin pushforward/base ratio
  std::vector<double> se;      // per-bin MC standard error
  std::vector<double> numer;   // landed particle mass per bin
  std::vector<double> mu_mass; // base-measure mass per bin
  std::vector<unsigned char> defined;
  double captured_mass = 0.0;  // landed inside the bin box
  double escaped_mass = 0.0;   // alive but outside the bin box
  double excluded_mass = 0.0;  // divergent particles' weight
  int excluded_count = 0;
};

/// Histogram estimate of J_t = d(flow_* mu)/d mu at the save_index-th saved
/// time. Binning is blocked and merged in a fixed order, so results are
/// independent of the thread count. mu masses per bin use mu_subdiv^d
/// midpoint nodes.
DensityEstimate estimate_pushforward(const FlowEnsemble& ensemble, const WeightedMeasure& measure,
                                     const BinSpec& bins, size_t save_index = 0,
                                     int mu_subdiv = 4, RunMode mode = RunMode::parallel);

/// Average replicate estimates sharing one BinSpec (common-noise averaging).
DensityEstimate merge_density(const std::vector<DensityEstimate>& parts);

/// Sum over defined bins of J^p * mu(bin) — the empirical int J_t^p dmu.
double empirical_lp_norm(const DensityEstimate& est, double p);

// --- Lambda functionals and the L^p bound --------------------------------------

/// Lambda1^l = div sigma^{.l} + sigma^{il} d_i lambda;
/// Lambda2   = div b + b^i d_i lambda
///           + (1/2)(sigma^{il} sigma^{jl} d2_{ij} lambda - d_i sigma^{jl} d_j sigma^{il}).
std::pair<Vec, double> lambda_functionals(const VectorFieldSpec& field,
                                          const WeightedMeasure& measure, const Vec& x);

struct LpBound {
  double value = 0.0;
  bool finite = true;
  double sup_exponent = 0.0;  // largest exponent seen in the integrand
  Vec argmax;                 // where it was attained
  std::string diagnostic;
};

/// mass^{p/(p+1)} * (sup_{t in times} int exp{t p^3 |L1|^2 - t p^2 L2} dmu)^{1/(p+1)}
/// over the measure's quadrature grid; overflow produces +inf with the
/// dominating region reported.
LpBound lp_bound_rhs(const VectorFieldSpec& field, const WeightedMeasure& measure, double p,
                     const std::vector<double>& times, const std::array<int, kMaxDim>& grid_n,
                     RunMode mode = RunMode::parallel);

// --- transport certificate ------------------------------------------------------

struct TestFunction {
  std::string name;
  std::function<double(const Vec&)> fn;
};

/// The six certificate test functions: two ball indicators, two Gaussian
/// bumps, two |x| truncations.
std::vector<TestFunction> certificate_test_functions(int d);

struct CertificateRow {
  std::string name;
  double left = 0.0;     // E int phi(X_t) dmu
  double right = 0.0;    // K_p ||phi||_{L^p_mu}
  double se_left = 0.0;  // replicate SE of the left side
  bool pass = false;
};

struct FlowCertificate {
  double p = 2.0;
  double kp = 0.0;
  bool kp_finite = true;
  std::vector<CertificateRow> rows;
  bool all_pass = false;
};

/// Fills the certificate: K_p = lp_bound_rhs(q)^{1-1/p} with q = p/(p-1)
/// (the Holder step), left sides from replicate ensembles at save_index,
/// pass iff left <= right + 3 SE.
FlowCertificate check_transport_bound(const VectorFieldSpec& field, const WeightedMeasure& measure,
                                      double p, const std::vector<TestFunction>& phis,
                                      const std::vector<FlowEnsemble>& ensembles,
                                      size_t save_index, const std::array<int, kMaxDim>& grid_n,
                                      RunMode mode = RunMode::parallel);

}  // namespace sdeflow
