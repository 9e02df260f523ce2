#include "sdeflow/stability.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace sdeflow {

namespace {

double smoothstep(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
double smoothstep_deriv(double u) {
  const double v = u * (1.0 - u);
  return 30.0 * v * v;
}
/// int_0^u smoothstep = u^4 (2.5 - 3u + u^2)
double smoothstep_integral(double u) { return u * u * u * u * (2.5 + u * (-3.0 + u)); }

double frob(const Mat& m) {
  double s = 0;
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) s += m(i, j) * m(i, j);
  return std::sqrt(s);
}

double frob_diff(const Mat& a, const Mat& b) {
  double s = 0;
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  return std::sqrt(s);
}

double unit_ball_volume(int d) {
  switch (d) {
    case 1: return 2.0;
    case 2: return std::numbers::pi;
    default: return 4.0 * std::numbers::pi / 3.0;
  }
}

}  // namespace

XiDelta::XiDelta(double delta_in) : delta(delta_in) {
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("XiDelta: delta must lie in (0,1)");
}

double XiDelta::value(double s) const {
  if (s <= 0.25 * delta) return std::max(s, 0.0);
  if (s >= 0.75 * delta) return 0.5 * delta;
  const double u = (s - 0.25 * delta) / (0.5 * delta);
  return 0.25 * delta + 0.5 * delta * (u - smoothstep_integral(u));
}

double XiDelta::deriv(double s) const {
  if (s <= 0.25 * delta) return 1.0;
  if (s >= 0.75 * delta) return 0.0;
  return std::clamp(1.0 - smoothstep((s - 0.25 * delta) / (0.5 * delta)), 0.0, 1.0);
}

double XiDelta::second(double s) const {
  if (s <= 0.25 * delta || s >= 0.75 * delta) return 0.0;
  return -smoothstep_deriv((s - 0.25 * delta) / (0.5 * delta)) * 2.0 / delta;
}

double xi_delta_eval(double s, double delta) { return XiDelta(delta).value(s); }

// --- flow gap -------------------------------------------------------------------

StabilityReport flow_gap(const FlowEnsemble& a, const FlowEnsemble& b, double delta, double N,
                         double R, const WeightedMeasure& measure, RunMode mode) {
  if (a.d != b.d || a.d != measure.d)
    throw std::invalid_argument("flow_gap: dimension mismatch");
  if (a.start.size() != b.start.size())
    throw std::invalid_argument("flow_gap: ensembles use different grids");
  if (a.path.seed != b.path.seed || a.path.replicate != b.path.replicate ||
      a.path.m != b.path.m || a.path.steps != b.path.steps)
    throw std::invalid_argument("flow_gap: ensembles must share one driving path");
  if (a.save_times != b.save_times)
    throw std::invalid_argument("flow_gap: ensembles must share saved times");
  for (size_t i = 0; i < a.start.size(); ++i)
    for (int k = 0; k < a.d; ++k)
      if (a.start[i][k] != b.start[i][k])
        throw std::invalid_argument("flow_gap: ensembles use different grids");

  const XiDelta xi(delta);
  const double log_threshold = 0.5 * std::log(1.0 / delta);
  const size_t n = a.start.size();
  const size_t saves = a.positions.size();

  std::vector<double> xi_v(n, 0.0), sq_v(n, 0.0), log_v(n, 0.0), excl_v(n, 0.0), conf_v(n, 0.0),
      sup_v(n, 0.0);
  std::vector<unsigned char> in_ball(n, 0), confined(n, 0), violated(n, 0);

  for_each_index(n, mode, [&](size_t i) {
    if (a.start[i].norm() > N) return;
    in_ball[i] = 1;
    const double w = a.weights[i] * std::exp(measure.lambda(a.start[i]));
    const double overlay = std::max(a.sup_norm[i], b.sup_norm[i]);
    sup_v[i] = w * overlay;
    if (overlay > R || a.diverged[i] || b.diverged[i]) {
      excl_v[i] = w;
      return;
    }
    confined[i] = 1;
    conf_v[i] = w;
    double phi = 0.0;
    for (size_t s = 0; s < saves; ++s) {
      double z2 = 0.0;
      for (int k = 0; k < a.d; ++k) {
        const double z = a.positions[s][i][k] - b.positions[s][i][k];
        z2 += z * z;
      }
      phi = std::max(phi, z2);
    }
    xi_v[i] = w * std::min(xi.value(phi), 1.0);
    sq_v[i] = w * std::min(phi, 1.0);
    const double logval = std::log(phi / (delta * delta) + 1.0);
    log_v[i] = w * logval;
    if (logval <= log_threshold && !(phi < delta)) violated[i] = 1;
  });

  StabilityReport rep;
  rep.delta = delta;
  rep.radius_ball = N;
  rep.radius_confine = R;
  rep.xi_gap = tree_reduce(xi_v);
  rep.sq_gap = tree_reduce(sq_v);
  rep.log_gap = tree_reduce(log_v);
  rep.excluded_mass = tree_reduce(excl_v);
  rep.confined_mass = tree_reduce(conf_v);
  rep.sup_overlay_integral = tree_reduce(sup_v);
  for (size_t i = 0; i < n; ++i) {
    if (!in_ball[i]) continue;
    ++rep.total_count;
    if (confined[i])
      ++rep.confined_count;
    else
      ++rep.excluded_count;
    rep.threshold_violations += violated[i];
  }
  return rep;
}

// --- maximal-function Lipschitz audit ---------------------------------------------

std::vector<PairSample> sample_pairs(const Box& box, double R, size_t count, uint64_t seed) {
  std::vector<PairSample> out(count);
  const int d = box.d;
  for (size_t i = 0; i < count; ++i) {
    Vec x(d);
    for (int k = 0; k < d; ++k)
      x[k] = box.lo[k] +
             (box.hi[k] - box.lo[k]) * uniform_draw(seed, i, 0, static_cast<uint32_t>(k));
    const double r = R * uniform_draw(seed, i, 1, 0);
    Vec y = x;
    if (d == 1) {
      y[0] += uniform_draw(seed, i, 1, 1) < 0.5 ? -r : r;
    } else if (d == 2) {
      const double th = 2.0 * std::numbers::pi * uniform_draw(seed, i, 1, 1);
      y[0] += r * std::cos(th);
      y[1] += r * std::sin(th);
    } else {
      const double c = 2.0 * uniform_draw(seed, i, 1, 1) - 1.0;
      const double th = 2.0 * std::numbers::pi * uniform_draw(seed, i, 1, 2);
      const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
      y[0] += r * s * std::cos(th);
      y[1] += r * s * std::sin(th);
      y[2] += r * c;
    }
    out[i] = {x, y};
  }
  return out;
}

double lipschitz_maximal_check(const VectorFieldSpec& field, double R,
                               const std::vector<PairSample>& pairs, const MaximalOptions& opts,
                               RunMode mode) {
  if (pairs.empty()) return 0.0;
  const auto g = [&](const Vec& u) { return frob(grad_drift_of(field, u)); };
  const double factor = std::pow(2.0, field.d);
  const size_t n = pairs.size();
  std::vector<unsigned char> skip(n, 0), viol(n, 0);
  for_each_index(n, mode, [&](size_t i) {
    const Vec& x = pairs[i].x;
    const Vec& y = pairs[i].y;
    if (field.locus && field.locus->distance &&
        (field.locus->distance(x) < field.locus->exclusion_radius ||
         field.locus->distance(y) < field.locus->exclusion_radius)) {
      skip[i] = 1;
      return;
    }
    Vec diff(field.d);
    const Vec bx = field.drift(x), by = field.drift(y);
    for (int k = 0; k < field.d; ++k) diff[k] = bx[k] - by[k];
    Vec sep(field.d);
    for (int k = 0; k < field.d; ++k) sep[k] = x[k] - y[k];
    const double rhs =
        factor * sep.norm() * (maximal_function_fn(g, field.d, R, x, opts) +
                               maximal_function_fn(g, field.d, R, y, opts)) +
        1e-9;
    if (diff.norm() > rhs) viol[i] = 1;
  });
  size_t used = 0, bad = 0;
  for (size_t i = 0; i < n; ++i) {
    if (skip[i]) continue;
    ++used;
    bad += viol[i];
  }
  return used == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(used);
}

// --- the f_{delta,eps} majorant ---------------------------------------------------

namespace {

void check_majorant_params(double delta, double eps) {
  if (!(delta > 0.0 && delta < 0.25) || !(eps > 0.0 && eps < 0.25))
    throw std::domain_error("f_delta_eps: delta and eps must lie in (0, 1/4)");
}

double majorant_at(const VectorFieldSpec& field, const VectorFieldSpec& mollified, const Vec& x,
                   double delta, double eps, double sup_rho, const MaximalOptions& opts,
                   int s_nodes) {
  const int d = field.d;
  const auto g = [&](const Vec& u) { return frob(grad_drift_of(field, u)); };
  const auto g2 = [&](const Vec& u) {
    return frob_diff(grad_drift_of(mollified, u), grad_drift_of(field, u));
  };
  const double term1 =
      std::pow(eps, -d) * sup_rho * unit_ball_volume(d) * ball_average_fn(g, d, 1.0, x, opts);
  double term2 = 0.0;
  for (int k = 0; k < s_nodes; ++k) {
    const double s = delta * (k + 0.5) / s_nodes;
    term2 += ball_average_fn(g, d, s, x, opts);
  }
  term2 /= s_nodes;
  double term3 = 0.0;
  const double h = 0.5 * std::log(1.0 / delta) / s_nodes;
  for (int k = 0; k < s_nodes; ++k) {
    const double s = std::exp(std::log(delta) + (k + 0.5) * h);
    term3 += h * ball_average_fn(g2, d, s, x, opts);
  }
  return term1 + term2 + term3;
}

}  // namespace

double f_delta_eps_majorant(const VectorFieldSpec& field, const Vec& x, double delta, double eps,
                            std::shared_ptr<const MollifierKernel> kernel,
                            const MaximalOptions& opts, int s_nodes) {
  check_majorant_params(delta, eps);
  const VectorFieldSpec mollified = mollify(field, eps, kernel);
  return majorant_at(field, mollified, x, delta, eps, kernel->sup_rho, opts, s_nodes);
}

MajorantBudget f_delta_eps_budget(const VectorFieldSpec& field, double delta, double eps,
                                  std::shared_ptr<const MollifierKernel> kernel, double R,
                                  int lattice_n, const MaximalOptions& opts, int s_nodes,
                                  RunMode mode) {
  check_majorant_params(delta, eps);
  if (R <= 0.0 || lattice_n < 2) throw std::invalid_argument("f_delta_eps_budget: bad domain");
  const int d = field.d;
  const VectorFieldSpec mollified = mollify(field, eps, kernel);

  Box inner, outer;
  inner.d = outer.d = d;
  inner.lo = Vec(d);
  inner.hi = Vec(d);
  outer.lo = Vec(d);
  outer.hi = Vec(d);
  for (int k = 0; k < d; ++k) {
    inner.lo[k] = -R;
    inner.hi[k] = R;
    outer.lo[k] = -(R + 1.0);
    outer.hi[k] = R + 1.0;
  }
  std::array<int, kMaxDim> n_inner{1, 1, 1}, n_outer{1, 1, 1};
  for (int k = 0; k < d; ++k) {
    n_inner[static_cast<size_t>(k)] = lattice_n;
    n_outer[static_cast<size_t>(k)] = lattice_n;
  }
  const ParticleGrid gi = ParticleGrid::lattice(inner, n_inner);
  const ParticleGrid go = ParticleGrid::lattice(outer, n_outer);

  std::vector<double> fv(gi.points.size(), 0.0);
  for_each_index(gi.points.size(), mode, [&](size_t i) {
    if (gi.points[i].norm() > R) return;
    fv[i] = gi.weights[i] * majorant_at(field, mollified, gi.points[i], delta, eps,
                                        kernel->sup_rho, opts, s_nodes);
  });
  std::vector<double> l1b(go.points.size(), 0.0), l1m(go.points.size(), 0.0);
  for_each_index(go.points.size(), mode, [&](size_t i) {
    const Vec& u = go.points[i];
    if (u.norm() > R + 1.0) return;
    l1b[i] = go.weights[i] * frob(grad_drift_of(field, u));
    l1m[i] = go.weights[i] *
             frob_diff(grad_drift_of(mollified, u), grad_drift_of(field, u));
  });

  MajorantBudget out;
  out.c_rho_d = kernel->sup_rho * unit_ball_volume(d) + 1.0;
  out.integral_f = tree_reduce(fv);
  out.budget = out.c_rho_d * std::pow(eps, -d) * tree_reduce(l1b) +
               0.5 * std::log(1.0 / delta) * tree_reduce(l1m);
  out.holds = out.integral_f <= out.budget * (1.0 + 1e-9) + 1e-12;
  return out;
}

// --- Cauchy study across mollification levels --------------------------------------

namespace {

/// Piecewise-linear tabulation of a 1D field's coefficients on [-hw, hw];
/// constant extension outside. Used to avoid kernel sums in the inner
/// integration loop.
VectorFieldSpec tabulate_1d(const VectorFieldSpec& f, double hw, int n) {
  Box box;
  box.d = 1;
  box.lo = Vec(-hw);
  box.hi = Vec(hw);
  const std::array<int, kMaxDim> nn{n, 1, 1};
  auto bg = std::make_shared<ScalarGrid>(
      ScalarGrid::sample([&](const Vec& x) { return f.drift(x)[0]; }, box, nn));
  std::vector<ScalarGrid> cols;
  for (int l = 0; l < f.m; ++l)
    cols.push_back(
        ScalarGrid::sample([&, l](const Vec& x) { return f.diffusion(x)(0, l); }, box, nn));
  auto sg = std::make_shared<std::vector<ScalarGrid>>(std::move(cols));

  VectorFieldSpec t;
  t.name = f.name + "#tab";
  t.d = 1;
  t.m = f.m;
  t.smoothness = f.smoothness;
  t.drift = [bg](const Vec& x) { return Vec(bg->interp(x)); };
  const int m = f.m;
  t.diffusion = [sg, m](const Vec& x) {
    Mat s(1, m);
    for (int l = 0; l < m; ++l) s(0, l) = (*sg)[static_cast<size_t>(l)].interp(x);
    return s;
  };
  t.allow_fd = true;
  t.linear_growth_const = f.linear_growth_const;
  return t;
}

}  // namespace

CauchyStudy cauchy_study(const VectorFieldSpec& field, const std::vector<int>& levels,
                         double delta, double N, double R, const WeightedMeasure& measure,
                         int replicates, const ParticleGrid& grid, int steps, uint64_t seed,
                         int monitor, int tabulate_n, Scheme scheme, RunMode mode) {
  if (levels.size() < 2) throw std::invalid_argument("cauchy_study: need at least two levels");
  if (!std::is_sorted(levels.begin(), levels.end()))
    throw std::invalid_argument("cauchy_study: levels must increase");
  if (replicates < 1) throw std::invalid_argument("cauchy_study: need replicates");

  const auto kernel =
      std::make_shared<const MollifierKernel>(MollifierKernel::standard_bump(field.d));
  std::vector<VectorFieldSpec> approx;
  for (int lvl : levels) {
    VectorFieldSpec f = mollified_cutoff_level(field, lvl, kernel);
    if (tabulate_n > 0 && field.d == 1) f = tabulate_1d(f, R + 1.0, tabulate_n);
    approx.push_back(std::move(f));
  }

  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t k = 0; k + 1 < levels.size(); ++k) pairs.push_back({k, k + 1});
  pairs.push_back({0, levels.size() - 1});

  std::vector<double> saves;
  for (int j = 1; j <= monitor; ++j) saves.push_back(static_cast<double>(j) / monitor);

  std::vector<std::vector<double>> xi_acc(pairs.size()), sq_acc(pairs.size()),
      log_acc(pairs.size()), ex_acc(pairs.size());
  for (int r = 0; r < replicates; ++r) {
    const BrownianPath path =
        make_brownian_path(seed, static_cast<uint64_t>(r), field.m, steps);
    std::vector<FlowEnsemble> ens;
    for (const VectorFieldSpec& f : approx)
      ens.push_back(simulate_flow(f, grid, path, saves, scheme, mode));
    for (size_t p = 0; p < pairs.size(); ++p) {
      const StabilityReport rep =
          flow_gap(ens[pairs[p].first], ens[pairs[p].second], delta, N, R, measure, mode);
      xi_acc[p].push_back(rep.xi_gap);
      sq_acc[p].push_back(rep.sq_gap);
      log_acc[p].push_back(rep.log_gap);
      ex_acc[p].push_back(rep.excluded_mass);
    }
  }

  const auto mean_se = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double se = v.size() > 1 ? std::sqrt(var / (static_cast<double>(v.size()) *
                                                      (static_cast<double>(v.size()) - 1.0)))
                                   : 0.0;
    return std::pair<double, double>{mean, se};
  };

  CauchyStudy out;
  out.levels = levels;
  out.delta = delta;
  out.radius_ball = N;
  out.radius_confine = R;
  for (size_t p = 0; p < pairs.size(); ++p) {
    GapRow row;
    row.level_a = levels[pairs[p].first];
    row.level_b = levels[pairs[p].second];
    std::tie(row.xi_gap_mean, row.xi_gap_se) = mean_se(xi_acc[p]);
    std::tie(row.sq_gap_mean, row.sq_gap_se) = mean_se(sq_acc[p]);
    std::tie(row.log_gap_mean, row.log_gap_se) = mean_se(log_acc[p]);
    row.excluded_mean = mean_se(ex_acc[p]).first;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace sdeflow
