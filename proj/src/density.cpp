#include "sdeflow/density.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace sdeflow {

namespace {

double get_param(const std::map<std::string, double>& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

Box centered_box(int d, double halfwidth) {
  Box b;
  b.d = d;
  b.lo = Vec(d);
  b.hi = Vec(d);
  for (int i = 0; i < d; ++i) {
    b.lo[i] = -halfwidth;
    b.hi[i] = halfwidth;
  }
  return b;
}

}  // namespace

ParticleGrid WeightedMeasure::quadrature(const std::array<int, kMaxDim>& n) const {
  return ParticleGrid::lattice(domain, n, lambda);
}

double WeightedMeasure::total_mass(const std::array<int, kMaxDim>& n) const {
  return quadrature(n).total_weight();
}

WeightedMeasure make_measure(const std::string& name,
                             const std::map<std::string, double>& params) {
  for (const auto& [k, v] : params) {
    (void)v;
    if (k != "d" && k != "halfwidth" && k != "alpha")
      throw std::invalid_argument("measure '" + name + "': unknown parameter '" + k + "'");
  }
  const int d = static_cast<int>(get_param(params, "d", 1));
  if (d < 1 || d > kMaxDim) throw std::invalid_argument("measure: dimension out of range");

  WeightedMeasure m;
  m.name = name;
  m.d = d;

  if (name == "zero") {
    m.domain = centered_box(d, get_param(params, "halfwidth", 2.0));
    m.lambda = [](const Vec&) { return 0.0; };
    m.grad_lambda = [d](const Vec&) { return Vec(d); };
    m.hess_lambda = [d](const Vec&) { return Mat(d, d); };
    m.gamma1 = [](const Vec&) { return 0.0; };
    m.gamma2 = [](const Vec&) { return 0.0; };
    m.gamma3 = [](const Vec&) { return 0.0; };
    m.finite_on_rd = false;  // Lebesgue on R^d
    return m;
  }

  if (name == "log_poly") {
    const double a = get_param(params, "alpha", 1.0);
    if (a <= 0) throw std::invalid_argument("log_poly: alpha must be positive");
    m.domain = centered_box(d, get_param(params, "halfwidth", 4.0));
    m.lambda = [a](const Vec& x) { return -a * std::log1p(x.norm2()); };
    m.grad_lambda = [a, d](const Vec& x) {
      const double c = -2.0 * a / (1.0 + x.norm2());
      Vec g(d);
      for (int i = 0; i < d; ++i) g[i] = c * x[i];
      return g;
    };
    m.hess_lambda = [a, d](const Vec& x) {
      const double s = 1.0 + x.norm2();
      Mat h(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          h(i, j) = 4.0 * a * x[i] * x[j] / (s * s);
          if (i == j) h(i, j) -= 2.0 * a / s;
        }
      return h;
    };
    m.gamma1 = [a](const Vec& u) { return -a * std::log1p(u.norm2()) + a * std::numbers::ln2; };
    m.gamma2 = [a](const Vec& u) { return 8.0 * a / (1.0 + u.norm()); };
    m.gamma3 = [a](const Vec& u) { return 12.0 * a / (1.0 + u.norm2()); };
    m.finite_on_rd = 2.0 * a > d;
    return m;
  }

  if (name == "gaussian_power") {
    const double a = get_param(params, "alpha", 1.0);
    if (a < 1.0) throw std::invalid_argument("gaussian_power: alpha must be >= 1");
    m.domain = centered_box(d, get_param(params, "halfwidth", 4.0));
    m.lambda = [a](const Vec& x) { return -std::pow(x.norm2(), a); };
    m.grad_lambda = [a, d](const Vec& x) {
      const double r2 = x.norm2();
      Vec g(d);
      if (r2 > 0) {
        const double c = -2.0 * a * std::pow(r2, a - 1.0);
        for (int i = 0; i < d; ++i) g[i] = c * x[i];
      }
      return g;
    };
    m.hess_lambda = [a, d](const Vec& x) {
      const double r2 = x.norm2();
      Mat h(d, d);
      if (r2 > 0) {
        const double c1 = -2.0 * a * std::pow(r2, a - 1.0);
        const double c2 = -4.0 * a * (a - 1.0) * std::pow(r2, a - 2.0);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) {
            h(i, j) = c2 * x[i] * x[j];
            if (i == j) h(i, j) += c1;
          }
      } else if (a == 1.0) {
        for (int i = 0; i < d; ++i) h(i, i) = -2.0;
      }
      return h;
    };
    // C_alpha = sup_r [ (1/2)(r+1/2)^{2a} - r^{2a} ]  (equals 1/4 at a = 1)
    double ca = 0.0;
    for (int i = 0; i <= 4000; ++i) {
      const double r = 4.0 * i / 4000.0;
      ca = std::max(ca, 0.5 * std::pow(r + 0.5, 2 * a) - std::pow(r, 2 * a));
    }
    const double c_alpha = ca;
    m.gamma1 = [a, c_alpha](const Vec& u) {
      return c_alpha - 0.5 * std::pow(u.norm2(), a);
    };
    m.gamma2 = [a](const Vec& u) { return 2.0 * a * std::pow(u.norm() + 0.5, 2 * a - 1.0); };
    m.gamma3 = [a, d](const Vec& u) {
      return (4.0 * a * a + 2.0 * a * std::sqrt(double(d))) *
             std::pow(u.norm() + 0.5, std::max(0.0, 2 * a - 2.0));
    };
    m.finite_on_rd = true;
    return m;
  }

  throw std::invalid_argument("unknown measure '" + name + "'");
}

// --- binning -------------------------------------------------------------------

size_t BinSpec::total() const {
  size_t t = 1;
  for (int i = 0; i < box.d; ++i) t *= static_cast<size_t>(n[static_cast<size_t>(i)]);
  return t;
}

long BinSpec::flat_index(const Vec& x) const {
  long flat = 0;
  for (int i = 0; i < box.d; ++i) {
    const int ni = n[static_cast<size_t>(i)];
    const double u = (x[i] - box.lo[i]) / (box.hi[i] - box.lo[i]);
    if (u < 0.0 || u >= 1.0) return -1;
    const int k = std::min(static_cast<int>(u * ni), ni - 1);
    flat = flat * ni + k;
  }
  return flat;
}

Box BinSpec::bin_box(size_t flat) const {
  Box b;
  b.d = box.d;
  b.lo = Vec(box.d);
  b.hi = Vec(box.d);
  size_t rem = flat;
  for (int i = box.d - 1; i >= 0; --i) {
    const int ni = n[static_cast<size_t>(i)];
    const int k = static_cast<int>(rem % static_cast<size_t>(ni));
    rem /= static_cast<size_t>(ni);
    const double w = (box.hi[i] - box.lo[i]) / ni;
    b.lo[i] = box.lo[i] + k * w;
    b.hi[i] = b.lo[i] + w;
  }
  return b;
}

DensityEstimate estimate_pushforward(const FlowEnsemble& ensemble,
                                     const WeightedMeasure& measure, const BinSpec& bins,
                                     size_t save_index, int mu_subdiv, RunMode mode) {
  if (save_index >= ensemble.positions.size())
    throw std::invalid_argument("estimate_pushforward: save index out of range");
  if (measure.d != ensemble.d)
    throw std::invalid_argument("estimate_pushforward: measure/ensemble dimension");

  DensityEstimate est;
  est.bins = bins;
  est.time = ensemble.save_times[save_index];
  const size_t nb = bins.total();
  est.numer.assign(nb, 0.0);
  est.mu_mass.assign(nb, 0.0);
  est.j.assign(nb, 0.0);
  est.se.assign(nb, 0.0);
  est.defined.assign(nb, 0);

  // mu mass per bin by midpoint quadrature (independent of particles)
  for_each_index(nb, mode, [&](size_t b) {
    const Box bb = bins.bin_box(b);
    size_t total = 1;
    double cellvol = 1.0;
    for (int i = 0; i < bb.d; ++i) {
      total *= static_cast<size_t>(mu_subdiv);
      cellvol *= (bb.hi[i] - bb.lo[i]) / mu_subdiv;
    }
    double acc = 0;
    for (size_t flat = 0; flat < total; ++flat) {
      size_t rem = flat;
      Vec x(bb.d);
      for (int i = bb.d - 1; i >= 0; --i) {
        const int k = static_cast<int>(rem % static_cast<size_t>(mu_subdiv));
        rem /= static_cast<size_t>(mu_subdiv);
        x[i] = bb.lo[i] + (bb.hi[i] - bb.lo[i]) * (k + 0.5) / mu_subdiv;
      }
      acc += std::exp(measure.lambda(x)) * cellvol;
    }
    est.mu_mass[b] = acc;
  });

  // blocked accumulation of landed mass; fixed block partition -> deterministic
  const size_t np = ensemble.start.size();
  const std::vector<Vec>& pos = ensemble.positions[save_index];
  constexpr size_t kBlock = 2048;
  const size_t nblocks = (np + kBlock - 1) / kBlock;
  std::vector<std::vector<double>> block_num(nblocks), block_sq(nblocks);
  std::vector<double> block_escaped(nblocks, 0.0), block_excluded(nblocks, 0.0);
  std::vector<double> block_excl_count(nblocks, 0.0);
  for_each_index(nblocks, mode, [&](size_t blk) {
    std::vector<double>& num = block_num[blk];
    std::vector<double>& sq = block_sq[blk];
    num.assign(nb, 0.0);
    sq.assign(nb, 0.0);
    const size_t lo = blk * kBlock, hi = std::min(np, lo + kBlock);
    for (size_t i = lo; i < hi; ++i) {
      const double w = ensemble.weights[i];
      if (ensemble.diverged[i]) {
        block_excluded[blk] += w;
        block_excl_count[blk] += 1.0;
        continue;
      }
      const long b = bins.flat_index(pos[i]);
      if (b < 0) {
        block_escaped[blk] += w;
      } else {
        num[static_cast<size_t>(b)] += w;
        sq[static_cast<size_t>(b)] += w * w;
      }
    }
  });
  // fixed-order merge across blocks
  std::vector<double> sqsum(nb, 0.0);
  for (size_t blk = 0; blk < nblocks; ++blk) {
    for (size_t b = 0; b < nb; ++b) {
      est.numer[b] += block_num[blk][b];
      sqsum[b] += block_sq[blk][b];
    }
    est.escaped_mass += block_escaped[blk];
    est.excluded_mass += block_excluded[blk];
    est.excluded_count += static_cast<int>(block_excl_count[blk]);
  }
  double captured = 0;
  for (size_t b = 0; b < nb; ++b) {
    captured += est.numer[b];
    if (est.mu_mass[b] > 1e-300) {
      est.defined[b] = 1;
      est.j[b] = est.numer[b] / est.mu_mass[b];
      est.se[b] = std::sqrt(sqsum[b]) / est.mu_mass[b];
    }
  }
  est.captured_mass = captured;
  return est;
}

DensityEstimate merge_density(const std::vector<DensityEstimate>& parts) {
  if (parts.empty()) throw std::invalid_argument("merge_density: no estimates");
  DensityEstimate out = parts[0];
  const double r = static_cast<double>(parts.size());
  for (size_t k = 1; k < parts.size(); ++k) {
    const DensityEstimate& p = parts[k];
    if (p.j.size() != out.j.size()) throw std::invalid_argument("merge_density: bin mismatch");
    for (size_t b = 0; b < out.j.size(); ++b) {
      out.numer[b] += p.numer[b];
      out.j[b] += p.j[b];
      out.se[b] = std::sqrt(out.se[b] * out.se[b] + p.se[b] * p.se[b]);
    }
    out.captured_mass += p.captured_mass;
    out.escaped_mass += p.escaped_mass;
    out.excluded_mass += p.excluded_mass;
    out.excluded_count += p.excluded_count;
  }
  for (size_t b = 0; b < out.j.size(); ++b) {
    out.j[b] /= r;
    out.se[b] /= r;
    out.numer[b] /= r;
  }
  out.captured_mass /= r;
  out.escaped_mass /= r;
  out.excluded_mass /= r;
  return out;
}

double empirical_lp_norm(const DensityEstimate& est, double p) {
  double acc = 0;
  for (size_t b = 0; b < est.j.size(); ++b)
    if (est.defined[b]) acc += std::pow(est.j[b], p) * est.mu_mass[b];
  return acc;
}

// --- Lambda functionals ----------------------------------------------------------

std::pair<Vec, double> lambda_functionals(const VectorFieldSpec& field,
                                          const WeightedMeasure& measure, const Vec& x) {
  if (field.d != measure.d) throw std::invalid_argument("lambda_functionals: dimension");
  const Mat s = field.diffusion(x);
  const Vec divs = div_diffusion_of(field, x);
  const Vec gl = measure.grad_lambda(x);
  const Mat hl = measure.hess_lambda(x);
  const Vec b = field.drift(x);

  Vec l1(field.m);
  for (int l = 0; l < field.m; ++l) {
    double acc = divs[l];
    for (int i = 0; i < field.d; ++i) acc += s(i, l) * gl[i];
    l1[l] = acc;
  }
  double quad = 0;
  for (int l = 0; l < field.m; ++l)
    for (int i = 0; i < field.d; ++i)
      for (int j = 0; j < field.d; ++j) quad += s(i, l) * s(j, l) * hl(i, j);
  const double l2 = div_drift_of(field, x) + dot(b, gl) +
                    0.5 * (quad - grad_sigma_contraction(field, x));
  return {l1, l2};
}

LpBound lp_bound_rhs(const VectorFieldSpec& field, const WeightedMeasure& measure, double p,
                     const std::vector<double>& times, const std::array<int, kMaxDim>& grid_n,
                     RunMode mode) {
  if (p <= 1.0) throw std::invalid_argument("lp_bound_rhs: p must exceed 1");
  const ParticleGrid grid = measure.quadrature(grid_n);
  const size_t nq = grid.points.size();

  // exponent pieces are time-independent; scan once, then apply each t
  std::vector<double> a1(nq), a2(nq);
  for_each_index(nq, mode, [&](size_t i) {
    auto [l1, l2] = lambda_functionals(field, measure, grid.points[i]);
    a1[i] = l1.norm2();
    a2[i] = l2;
  });

  LpBound out;
  const double mass = grid.total_weight();
  double sup_integral = 0;
  for (double t : times) {
    std::vector<double> terms(nq);
    for (size_t i = 0; i < nq; ++i) {
      const double expo = t * p * p * (p * a1[i] - a2[i]);
      if (expo > out.sup_exponent) {
        out.sup_exponent = expo;
        out.argmax = grid.points[i];
      }
      terms[i] = grid.weights[i] * std::exp(std::min(expo, 700.0));
      if (expo > 700.0) out.finite = false;
    }
    sup_integral = std::max(sup_integral, tree_reduce(terms));
  }
  if (!out.finite) {
    out.value = std::numeric_limits<double>::infinity();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "integrand overflow: exponent %.3g at first coordinate %.3g", out.sup_exponent,
                  out.argmax[0]);
    out.diagnostic = buf;
    return out;
  }
  out.value = std::pow(mass, p / (p + 1.0)) * std::pow(sup_integral, 1.0 / (p + 1.0));
  return out;
}

// --- transport certificate --------------------------------------------------------

std::vector<TestFunction> certificate_test_functions(int d) {
  std::vector<TestFunction> v;
  v.push_back({"ball_1", [](const Vec& x) { return x.norm() <= 1.0 ? 1.0 : 0.0; }});
  v.push_back({"ball_half", [](const Vec& x) { return x.norm() <= 0.5 ? 1.0 : 0.0; }});
  v.push_back({"gauss", [](const Vec& x) { return std::exp(-x.norm2()); }});
  v.push_back({"gauss_shift", [](const Vec& x) {
                 Vec y = x;
                 y[0] -= 0.5;
                 return std::exp(-y.norm2() / 0.5);
               }});
  v.push_back({"abs_trunc", [](const Vec& x) { return std::min(x.norm(), 1.0); }});
  v.push_back({"sq_trunc", [](const Vec& x) { return std::min(x.norm2(), 2.0); }});
  (void)d;
  return v;
}

FlowCertificate check_transport_bound(const VectorFieldSpec& field,
                                      const WeightedMeasure& measure, double p,
                                      const std::vector<TestFunction>& phis,
                                      const std::vector<FlowEnsemble>& ensembles,
                                      size_t save_index, const std::array<int, kMaxDim>& grid_n,
                                      RunMode mode) {
  if (ensembles.empty()) throw std::invalid_argument("check_transport_bound: no ensembles");
  if (p <= 1.0) throw std::invalid_argument("check_transport_bound: p must exceed 1");

  FlowCertificate cert;
  cert.p = p;
  const double q = p / (p - 1.0);
  const std::vector<double>& times = ensembles[0].save_times;
  const LpBound rhs = lp_bound_rhs(field, measure, q, times, grid_n, mode);
  cert.kp_finite = rhs.finite;
  cert.kp = rhs.finite ? std::pow(rhs.value, 1.0 - 1.0 / p)
                       : std::numeric_limits<double>::infinity();

  const ParticleGrid quad = measure.quadrature(grid_n);
  cert.all_pass = true;
  for (const TestFunction& phi : phis) {
    CertificateRow row;
    row.name = phi.name;
    // ||phi||_{L^p_mu}
    std::vector<double> terms(quad.points.size());
    for (size_t i = 0; i < quad.points.size(); ++i)
      terms[i] = quad.weights[i] * std::pow(phi.fn(quad.points[i]), p);
    const double norm_p = std::pow(tree_reduce(terms), 1.0 / p);
    row.right = cert.kp * norm_p;

    // replicate means of int phi(X_t) dmu
    std::vector<double> reps(ensembles.size());
    for (size_t r = 0; r < ensembles.size(); ++r) {
      const FlowEnsemble& ens = ensembles[r];
      const double val = tree_reduce_map(
          ens.start.size(),
          [&](size_t i) {
            return ens.diverged[i] ? 0.0
                                   : ens.weights[i] * phi.fn(ens.positions[save_index][i]);
          },
          mode);
      reps[r] = val;
    }
    double mean = 0;
    for (double v : reps) mean += v;
    mean /= static_cast<double>(reps.size());
    double var = 0;
    for (double v : reps) var += (v - mean) * (v - mean);
    row.se_left = reps.size() > 1
                      ? std::sqrt(var / (static_cast<double>(reps.size()) *
                                         (static_cast<double>(reps.size()) - 1.0)))
                      : 0.0;
    row.left = mean;
    row.pass = !std::isfinite(row.right) || row.left <= row.right + 3.0 * row.se_left;
    cert.all_pass = cert.all_pass && row.pass;
    cert.rows.push_back(row);
  }
  return cert;
}

}  // namespace sdeflow
