#include "sdeflow/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace sdeflow {

namespace {

constexpr double kPi = std::numbers::pi;

double get_param(const std::map<std::string, double>& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

void reject_unknown(const std::map<std::string, double>& p, const std::set<std::string>& allowed,
                    const std::string& field_name) {
  for (const auto& [k, v] : p) {
    (void)v;
    if (!allowed.count(k))
      throw std::invalid_argument("field '" + field_name + "': unknown parameter '" + k + "'");
  }
}

/// Nudge a point off an exactly-hit singular locus before differentiating.
Vec off_locus(const VectorFieldSpec& f, Vec x) {
  if (f.locus && f.locus->distance(x) == 0.0) x[0] += 1e-12;
  return x;
}

double fd_step(const Vec& x) { return 1e-4 * (1.0 + x.norm()); }

Mat fd_grad_drift(const VectorFieldSpec& f, const Vec& x0) {
  const Vec x = off_locus(f, x0);
  const double h = fd_step(x);
  Mat g(f.d, f.d);
  for (int j = 0; j < f.d; ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const Vec bp = f.drift(xp), bm = f.drift(xm);
    for (int i = 0; i < f.d; ++i) g(i, j) = (bp[i] - bm[i]) / (2.0 * h);
  }
  return g;
}

Rank3 fd_grad_diffusion(const VectorFieldSpec& f, const Vec& x0) {
  const Vec x = off_locus(f, x0);
  const double h = fd_step(x);
  Rank3 g(f.d, f.d, f.m);
  for (int k = 0; k < f.d; ++k) {
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const Mat sp = f.diffusion(xp), sm = f.diffusion(xm);
    for (int i = 0; i < f.d; ++i)
      for (int l = 0; l < f.m; ++l) g(k, i, l) = (sp(i, l) - sm(i, l)) / (2.0 * h);
  }
  return g;
}

}  // namespace

Mat grad_drift_of(const VectorFieldSpec& f, const Vec& x) {
  if (f.grad_drift) return f.grad_drift(off_locus(f, x));
  if (!f.allow_fd)
    throw std::runtime_error("field '" + f.name + "': no drift gradient and FD disabled");
  return fd_grad_drift(f, x);
}

Rank3 grad_diffusion_of(const VectorFieldSpec& f, const Vec& x) {
  if (f.grad_diffusion) return f.grad_diffusion(off_locus(f, x));
  if (!f.allow_fd)
    throw std::runtime_error("field '" + f.name + "': no diffusion gradient and FD disabled");
  return fd_grad_diffusion(f, x);
}

double div_drift_of(const VectorFieldSpec& f, const Vec& x) {
  const Mat g = grad_drift_of(f, x);
  double s = 0;
  for (int i = 0; i < f.d; ++i) s += g(i, i);
  return s;
}

Vec div_diffusion_of(const VectorFieldSpec& f, const Vec& x) {
  const Rank3 g = grad_diffusion_of(f, x);
  Vec r(f.m);
  for (int l = 0; l < f.m; ++l) {
    double s = 0;
    for (int i = 0; i < f.d; ++i) s += g(i, i, l);
    r[l] = s;
  }
  return r;
}

double grad_sigma_contraction(const VectorFieldSpec& f, const Vec& x) {
  const Rank3 g = grad_diffusion_of(f, x);
  double s = 0;
  for (int i = 0; i < f.d; ++i)
    for (int j = 0; j < f.d; ++j)
      for (int l = 0; l < f.m; ++l) s += g(i, j, l) * g(j, i, l);
  return s;
}

double sigma_hess_contraction(const VectorFieldSpec& f, const Vec& x0) {
  if (f.sigma_hess_contraction_fn) return f.sigma_hess_contraction_fn(off_locus(f, x0));
  if (!f.allow_fd)
    throw std::runtime_error("field '" + f.name + "': no diffusion Hessian and FD disabled");
  const Vec x = off_locus(f, x0);
  const double h = fd_step(x);
  const Mat s = f.diffusion(x);
  // d2_{ij} sigma^{jl} by central differences of the gradient tensor.
  double acc = 0;
  for (int i = 0; i < f.d; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const Rank3 gp = grad_diffusion_of(f, xp), gm = grad_diffusion_of(f, xm);
    for (int j = 0; j < f.d; ++j)
      for (int l = 0; l < f.m; ++l)
        acc += s(i, l) * (gp(j, j, l) - gm(j, j, l)) / (2.0 * h);
  }
  return acc;
}

// --- catalog -----------------------------------------------------------------

namespace {

VectorFieldSpec constant_like(const std::string& name, int d, int m, const Vec& b, const Mat& s) {
  VectorFieldSpec f;
  f.name = name;
  f.d = d;
  f.m = m;
  f.smoothness = Smoothness::smooth;
  f.drift = [b](const Vec&) { return b; };
  f.diffusion = [s](const Vec&) { return s; };
  f.grad_drift = [d](const Vec&) { return Mat(d, d); };
  f.grad_diffusion = [d, m](const Vec&) { return Rank3(d, d, m); };
  f.sigma_hess_contraction_fn = [](const Vec&) { return 0.0; };
  f.linear_growth_const = b.norm() + s.frobenius();
  if (f.linear_growth_const == 0.0) f.linear_growth_const = 1e-300;  // declared, trivially
  return f;
}

void check_dims(int d, int m, const std::string& name) {
  if (d < 1 || d > kMaxDim || m < 1 || m > kMaxDim)
    throw std::invalid_argument("field '" + name + "': dimensions out of range");
}

}  // namespace

VectorFieldSpec make_field(const std::string& name, const std::map<std::string, double>& params) {
  if (name == "constant" || name == "degenerate_xy") {
    int d, m;
    Vec b;
    Mat s;
    if (name == "degenerate_xy") {
      reject_unknown(params, {}, name);
      d = 2;
      m = 2;
      b = Vec(2);
      s = Mat(2, 2);
      s(0, 0) = 1.0;
    } else {
      d = static_cast<int>(get_param(params, "d", 1));
      m = static_cast<int>(get_param(params, "m", 1));
      check_dims(d, m, name);
      std::set<std::string> allowed{"d", "m"};
      for (int i = 0; i < d; ++i) allowed.insert("b" + std::to_string(i));
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j) allowed.insert("s" + std::to_string(i) + std::to_string(j));
      reject_unknown(params, allowed, name);
      b = Vec(d);
      s = Mat(d, m);
      for (int i = 0; i < d; ++i) b[i] = get_param(params, "b" + std::to_string(i), 0.0);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j)
          s(i, j) = get_param(params, "s" + std::to_string(i) + std::to_string(j), 0.0);
    }
    return constant_like(name, d, m, b, s);
  }

  if (name == "linear") {
    const int d = static_cast<int>(get_param(params, "d", 2));
    const int m = static_cast<int>(get_param(params, "m", d));
    check_dims(d, m, name);
    std::set<std::string> allowed{"d", "m"};
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) allowed.insert("a" + std::to_string(i) + std::to_string(j));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < m; ++j) allowed.insert("s" + std::to_string(i) + std::to_string(j));
    reject_unknown(params, allowed, name);
    Mat A(d, d), s(d, m);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        A(i, j) = get_param(params, "a" + std::to_string(i) + std::to_string(j), 0.0);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < m; ++j)
        s(i, j) = get_param(params, "s" + std::to_string(i) + std::to_string(j), 0.0);
    VectorFieldSpec f;
    f.name = name;
    f.d = d;
    f.m = m;
    f.drift = [A](const Vec& x) { return matvec(A, x); };
    f.diffusion = [s](const Vec&) { return s; };
    f.grad_drift = [A](const Vec&) { return A; };
    f.grad_diffusion = [d, m](const Vec&) { return Rank3(d, d, m); };
    f.sigma_hess_contraction_fn = [](const Vec&) { return 0.0; };
    f.linear_growth_const = A.frobenius() + s.frobenius() + 1e-300;
    return f;
  }

  if (name == "rotation") {
    reject_unknown(params, {"omega", "sigma"}, name);
    const double w = get_param(params, "omega", 1.0);
    const double s = get_param(params, "sigma", 0.0);
    VectorFieldSpec f;
    f.name = name;
    f.d = 2;
    f.m = 2;
    f.drift = [w](const Vec& x) { return Vec(-w * x[1], w * x[0]); };
    Mat sm(2, 2);
    sm(0, 0) = sm(1, 1) = s;
    f.diffusion = [sm](const Vec&) { return sm; };
    Mat gd(2, 2);
    gd(0, 1) = -w;
    gd(1, 0) = w;
    f.grad_drift = [gd](const Vec&) { return gd; };
    f.grad_diffusion = [](const Vec&) { return Rank3(2, 2, 2); };
    f.sigma_hess_contraction_fn = [](const Vec&) { return 0.0; };
    f.linear_growth_const = std::abs(w) + s * std::numbers::sqrt2 + 1e-300;
    return f;
  }

  if (name == "ou") {
    reject_unknown(params, {"kappa", "sigma", "d"}, name);
    const int d = static_cast<int>(get_param(params, "d", 1));
    check_dims(d, d, name);
    const double kappa = get_param(params, "kappa", 1.0);
    const double s = get_param(params, "sigma", 1.0);
    VectorFieldSpec f;
    f.name = name;
    f.d = d;
    f.m = d;
    f.drift = [kappa](const Vec& x) { return -kappa * x; };
    const Mat sm = s * Mat::identity(d);
    f.diffusion = [sm](const Vec&) { return sm; };
    const Mat gd = -kappa * Mat::identity(d);
    f.grad_drift = [gd](const Vec&) { return gd; };
    f.grad_diffusion = [d](const Vec&) { return Rank3(d, d, d); };
    f.sigma_hess_contraction_fn = [](const Vec&) { return 0.0; };
    f.linear_growth_const = std::abs(kappa) + std::abs(s) * std::sqrt(double(d)) + 1e-300;
    return f;
  }

  if (name == "geometric") {
    reject_unknown(params, {"a", "s"}, name);
    const double a = get_param(params, "a", 1.0);
    const double s = get_param(params, "s", 1.0);
    VectorFieldSpec f;
    f.name = name;
    f.d = 1;
    f.m = 1;
    f.drift = [a](const Vec& x) { return Vec(a * x[0]); };
    f.diffusion = [s](const Vec& x) {
      Mat r(1, 1);
      r(0, 0) = s * x[0];
      return r;
    };
    f.grad_drift = [a](const Vec&) {
      Mat r(1, 1);
      r(0, 0) = a;
      return r;
    };
    f.grad_diffusion = [s](const Vec&) {
      Rank3 r(1, 1, 1);
      r(0, 0, 0) = s;
      return r;
    };
    f.sigma_hess_contraction_fn = [](const Vec&) { return 0.0; };
    f.linear_growth_const = std::abs(a) + std::abs(s) + 1e-300;
    return f;
  }

  if (name == "singular_sqrt") {
    reject_unknown(params, {"scale", "sigma"}, name);
    const double c = get_param(params, "scale", 1.0);
    const double s = get_param(params, "sigma", 1.0);
    VectorFieldSpec f;
    f.name = name;
    f.d = 1;
    f.m = 1;
    f.smoothness = Smoothness::sobolev;
    f.drift = [c](const Vec& x) {
      const double v = x[0];
      return Vec(c * (v >= 0 ? 1.0 : -1.0) * std::sqrt(std::abs(v)));
    };
    Mat sm(1, 1);
    sm(0, 0) = s;
    f.diffusion = [sm](const Vec&) { return sm; };
    f.grad_drift = [c](const Vec& x) {
      Mat r(1, 1);
      r(0, 0) = c / (2.0 * std::sqrt(std::abs(x[0])));
      return r;
    };
    f.grad_diffusion = [](const Vec&) { return Rank3(1, 1, 1); };
    f.sigma_hess_contraction_fn = [](const Vec&) { return 0.0; };
    f.locus = SingularLocus{"origin", [](const Vec& x) { return std::abs(x[0]); }, 1e-6};
    f.linear_growth_const = std::abs(c) + std::abs(s) + 1e-300;
    return f;
  }

  if (name == "shear") {
    reject_unknown(params, {}, name);
    VectorFieldSpec f;
    f.name = name;
    f.d = 2;
    f.m = 1;
    f.drift = [](const Vec&) { return Vec(0.0, 0.0); };
    f.diffusion = [](const Vec& x) {
      Mat r(2, 1);
      r(0, 0) = x[1];
      return r;
    };
    f.grad_drift = [](const Vec&) { return Mat(2, 2); };
    f.grad_diffusion = [](const Vec&) {
      Rank3 r(2, 2, 1);
      r(1, 0, 0) = 1.0;
      return r;
    };
    f.sigma_hess_contraction_fn = [](const Vec&) { return 0.0; };
    f.linear_growth_const = 1.0;
    return f;
  }

  if (name == "sine_diffusion") {
    reject_unknown(params, {"amp"}, name);
    const double a = get_param(params, "amp", 0.5);
    if (std::abs(a) >= 1.0)
      throw std::invalid_argument("field 'sine_diffusion': amp must keep sigma positive");
    VectorFieldSpec f;
    f.name = name;
    f.d = 1;
    f.m = 1;
    f.drift = [](const Vec&) { return Vec(0.0); };
    f.diffusion = [a](const Vec& x) {
      Mat r(1, 1);
      r(0, 0) = 1.0 + a * std::sin(x[0]);
      return r;
    };
    f.grad_drift = [](const Vec&) { return Mat(1, 1); };
    f.grad_diffusion = [a](const Vec& x) {
      Rank3 r(1, 1, 1);
      r(0, 0, 0) = a * std::cos(x[0]);
      return r;
    };
    f.sigma_hess_contraction_fn = [a](const Vec& x) {
      return (1.0 + a * std::sin(x[0])) * (-a * std::sin(x[0]));
    };
    f.linear_growth_const = 1.0 + std::abs(a);
    return f;
  }

  throw std::invalid_argument("unknown field '" + name + "'");
}

// --- mollifier ---------------------------------------------------------------

namespace {

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(static_cast<size_t>(n), 0.0);
  w.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double xi = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = xi;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * xi * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (xi * p1 - p0) / (xi * xi - 1.0);
      const double dx = p1 / dp;
      xi -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    x[static_cast<size_t>(i)] = xi;
    w[static_cast<size_t>(i)] = 2.0 / ((1.0 - xi * xi) * dp * dp);
  }
}

double raw_bump(double r2) { return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0; }

}  // namespace

double MollifierKernel::integral_of_rho() const {
  std::vector<double> terms(nodes.size());
  for (size_t k = 0; k < nodes.size(); ++k) terms[k] = weights[k] * rho_vals[k];
  return tree_reduce(terms);
}

MollifierKernel MollifierKernel::standard_bump(int d, int node_budget) {
  if (d < 1 || d > kMaxDim) throw std::invalid_argument("mollifier: dimension out of range");
  if (node_budget <= 0) node_budget = d <= 2 ? 2048 : 8192;

  MollifierKernel kern;
  kern.d = d;

  if (d == 1) {
    std::vector<double> gx, gw;
    gauss_legendre(std::max(node_budget, 4), gx, gw);
    for (size_t i = 0; i < gx.size(); ++i) {
      kern.nodes.push_back(Vec(gx[i]));
      kern.weights.push_back(gw[i]);
    }
  } else if (d == 2) {
    const int nr = std::max(4, static_cast<int>(std::lround(std::sqrt(node_budget / 2.0))));
    const int nt = 2 * nr;
    std::vector<double> gx, gw;
    gauss_legendre(nr, gx, gw);
    for (int i = 0; i < nr; ++i) {
      const double r = 0.5 * (gx[static_cast<size_t>(i)] + 1.0);
      const double wr = 0.5 * gw[static_cast<size_t>(i)] * r;  // radial measure r dr
      for (int j = 0; j < nt; ++j) {
        const double th = 2.0 * kPi * (j + 0.5) / nt;
        kern.nodes.push_back(Vec(r * std::cos(th), r * std::sin(th)));
        kern.weights.push_back(wr * 2.0 * kPi / nt);
      }
    }
  } else {
    const int n = std::max(4, static_cast<int>(std::lround(std::cbrt(node_budget / 2.0))));
    const int nt = 2 * n;
    std::vector<double> gr, wr, gc, wc;
    gauss_legendre(n, gr, wr);
    gauss_legendre(n, gc, wc);
    for (int i = 0; i < n; ++i) {
      const double r = 0.5 * (gr[static_cast<size_t>(i)] + 1.0);
      const double wrad = 0.5 * wr[static_cast<size_t>(i)] * r * r;
      for (int q = 0; q < n; ++q) {
        const double c = gc[static_cast<size_t>(q)];
        const double sp = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int j = 0; j < nt; ++j) {
          const double th = 2.0 * kPi * (j + 0.5) / nt;
          kern.nodes.push_back(Vec(r * sp * std::cos(th), r * sp * std::sin(th), r * c));
          kern.weights.push_back(wrad * wc[static_cast<size_t>(q)] * 2.0 * kPi / nt);
        }
      }
    }
  }

  // Normalize so the node-set integral of rho is exactly 1.
  std::vector<double> terms(kern.nodes.size());
  for (size_t k = 0; k < kern.nodes.size(); ++k)
    terms[k] = kern.weights[k] * raw_bump(kern.nodes[k].norm2());
  const double cnorm = 1.0 / tree_reduce(terms);
  kern.sup_rho = cnorm * std::exp(-1.0);

  kern.rho_vals.resize(kern.nodes.size());
  kern.grad_vals.resize(kern.nodes.size());
  kern.hess_vals.resize(kern.nodes.size());
  for (size_t k = 0; k < kern.nodes.size(); ++k) {
    const Vec& z = kern.nodes[k];
    const double r2 = z.norm2();
    const double rho = cnorm * raw_bump(r2);
    kern.rho_vals[k] = rho;
    const double om = 1.0 - r2;
    // grad log rho = -2 z / (1-r^2)^2, hess log rho follows by one more derivative
    Vec g(d);
    Mat hl(d, d);
    for (int i = 0; i < d; ++i) {
      g[i] = -2.0 * z[i] / (om * om);
      for (int j = 0; j < d; ++j) {
        hl(i, j) = -8.0 * z[i] * z[j] / (om * om * om);
        if (i == j) hl(i, j) += -2.0 / (om * om);
      }
    }
    kern.grad_vals[k] = rho * g;
    Mat h(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) h(i, j) = rho * (g[i] * g[j] + hl(i, j));
    kern.hess_vals[k] = h;
  }
  return kern;
}

VectorFieldSpec mollify(const VectorFieldSpec& f, double eps,
                        std::shared_ptr<const MollifierKernel> kernel) {
  if (!(eps > 0.0)) throw std::invalid_argument("mollify: eps must be positive");
  if (!kernel) kernel = std::make_shared<MollifierKernel>(MollifierKernel::standard_bump(f.d));
  if (kernel->d != f.d) throw std::invalid_argument("mollify: kernel dimension mismatch");

  const auto base_drift = f.drift;
  const auto base_diff = f.diffusion;
  const int d = f.d, m = f.m;

  VectorFieldSpec g;
  g.name = f.name + "~mollified";
  g.d = d;
  g.m = m;
  g.smoothness = Smoothness::smooth;
  g.allow_fd = true;
  g.linear_growth_const =
      f.linear_growth_const > 0 ? f.linear_growth_const * (1.0 + eps) : 0.0;

  g.drift = [base_drift, kernel, eps, d](const Vec& x) {
    Vec acc(d);
    for (size_t k = 0; k < kernel->nodes.size(); ++k) {
      const Vec y = x - eps * kernel->nodes[k];
      acc = acc + (kernel->weights[k] * kernel->rho_vals[k]) * base_drift(y);
    }
    return acc;
  };
  g.diffusion = [base_diff, kernel, eps, d, m](const Vec& x) {
    Mat acc(d, m);
    for (size_t k = 0; k < kernel->nodes.size(); ++k) {
      const Vec y = x - eps * kernel->nodes[k];
      acc = acc + (kernel->weights[k] * kernel->rho_vals[k]) * base_diff(y);
    }
    return acc;
  };
  g.grad_drift = [base_drift, kernel, eps, d](const Vec& x) {
    Mat acc(d, d);
    for (size_t k = 0; k < kernel->nodes.size(); ++k) {
      const Vec y = x - eps * kernel->nodes[k];
      const Vec b = base_drift(y);
      const Vec& gr = kernel->grad_vals[k];
      const double w = kernel->weights[k] / eps;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) acc(i, j) += w * gr[j] * b[i];
    }
    return acc;
  };
  g.grad_diffusion = [base_diff, kernel, eps, d, m](const Vec& x) {
    Rank3 acc(d, d, m);
    for (size_t kk = 0; kk < kernel->nodes.size(); ++kk) {
      const Vec y = x - eps * kernel->nodes[kk];
      const Mat s = base_diff(y);
      const Vec& gr = kernel->grad_vals[kk];
      const double w = kernel->weights[kk] / eps;
      for (int k = 0; k < d; ++k)
        for (int i = 0; i < d; ++i)
          for (int l = 0; l < m; ++l) acc(k, i, l) += w * gr[k] * s(i, l);
    }
    return acc;
  };
  const auto diff_eps = g.diffusion;
  g.sigma_hess_contraction_fn = [base_diff, diff_eps, kernel, eps, d, m](const Vec& x) {
    const Mat se = diff_eps(x);
    double acc = 0;
    const double w2 = 1.0 / (eps * eps);
    for (size_t kk = 0; kk < kernel->nodes.size(); ++kk) {
      const Vec y = x - eps * kernel->nodes[kk];
      const Mat s = base_diff(y);
      const Mat& h = kernel->hess_vals[kk];
      const double w = kernel->weights[kk] * w2;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          for (int l = 0; l < m; ++l) acc += se(i, l) * w * h(i, j) * s(j, l);
    }
    return acc;
  };
  return g;
}

// --- cutoff ------------------------------------------------------------------

namespace {
double smoothstep5(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
double smoothstep5_deriv(double u) { return u * u * (30.0 + u * (-60.0 + 30.0 * u)); }
}  // namespace

double CutoffProfile::value(double r) const {
  if (r <= 1.0) return 1.0;
  if (r >= 2.0) return 0.0;
  return smoothstep5(2.0 - r);
}

double CutoffProfile::deriv(double r) const {
  if (r <= 1.0 || r >= 2.0) return 0.0;
  return -smoothstep5_deriv(2.0 - r);
}

VectorFieldSpec apply_cutoff(const VectorFieldSpec& f, double n, const CutoffProfile& profile) {
  if (!(n > 0.0)) throw std::invalid_argument("apply_cutoff: n must be positive");

  VectorFieldSpec g = f;
  g.name = f.name + "~chi";
  g.sigma_hess_contraction_fn = {};  // recover via FD on the product rule pieces

  const VectorFieldSpec base = f;
  const auto chi = [profile, n](const Vec& x) { return profile.value(x.norm() / n); };
  const auto grad_chi = [profile, n](const Vec& x) {
    const double r = x.norm();
    Vec gc(x.d);
    if (r > 0.0) {
      const double dv = profile.deriv(r / n) / n;
      for (int i = 0; i < x.d; ++i) gc[i] = dv * x[i] / r;
    }
    return gc;
  };

  g.drift = [base, chi](const Vec& x) { return chi(x) * base.drift(x); };
  g.diffusion = [base, chi](const Vec& x) { return chi(x) * base.diffusion(x); };
  g.grad_drift = [base, chi, grad_chi](const Vec& x) {
    const double c = chi(x);
    const Vec gc = grad_chi(x);
    const Vec b = base.drift(x);
    Mat r = c * grad_drift_of(base, x);
    for (int i = 0; i < base.d; ++i)
      for (int j = 0; j < base.d; ++j) r(i, j) += b[i] * gc[j];
    return r;
  };
  g.grad_diffusion = [base, chi, grad_chi](const Vec& x) {
    const double c = chi(x);
    const Vec gc = grad_chi(x);
    const Mat s = base.diffusion(x);
    const Rank3 gs = grad_diffusion_of(base, x);
    Rank3 r(base.d, base.d, base.m);
    for (int k = 0; k < base.d; ++k)
      for (int i = 0; i < base.d; ++i)
        for (int l = 0; l < base.m; ++l) r(k, i, l) = c * gs(k, i, l) + s(i, l) * gc[k];
    return r;
  };
  return g;
}

VectorFieldSpec mollified_cutoff_level(const VectorFieldSpec& f, int level,
                                       std::shared_ptr<const MollifierKernel> kernel) {
  if (level < 1) throw std::invalid_argument("mollified_cutoff_level: level must be >= 1");
  VectorFieldSpec g = apply_cutoff(mollify(f, 1.0 / level, std::move(kernel)), double(level));
  g.name = f.name + "~level" + std::to_string(level);
  return g;
}

VectorFieldSpec stratonovich_correction(const VectorFieldSpec& f) {
  const VectorFieldSpec base = f;
  VectorFieldSpec g = f;
  g.name = f.name + "~strat";
  g.drift = [base](const Vec& x) {
    Vec r = base.drift(x);
    const Mat s = base.diffusion(x);
    const Rank3 gd = grad_diffusion_of(base, x);
    for (int i = 0; i < base.d; ++i) {
      double acc = 0;
      for (int j = 0; j < base.d; ++j)
        for (int l = 0; l < base.m; ++l) acc += s(j, l) * gd(j, i, l);
      r[i] += 0.5 * acc;
    }
    return r;
  };
  g.grad_drift = {};            // correction term derivative recovered by FD
  g.linear_growth_const = 0.0;  // not declared for the corrected drift
  return g;
}

// --- scalar grids and maximal averages ---------------------------------------

ScalarGrid ScalarGrid::sample(const std::function<double(const Vec&)>& fn, const Box& box,
                              const std::array<int, kMaxDim>& n) {
  ScalarGrid g;
  g.box = box;
  g.n = n;
  size_t total = 1;
  for (int i = 0; i < box.d; ++i) {
    if (n[static_cast<size_t>(i)] < 2)
      throw std::invalid_argument("ScalarGrid: need >= 2 nodes per dimension");
    total *= static_cast<size_t>(n[static_cast<size_t>(i)]);
  }
  g.values.resize(total);
  std::array<int, kMaxDim> idx{0, 0, 0};
  for (size_t flat = 0; flat < total; ++flat) {
    size_t rem = flat;
    for (int i = box.d - 1; i >= 0; --i) {
      const size_t ni = static_cast<size_t>(n[static_cast<size_t>(i)]);
      idx[static_cast<size_t>(i)] = static_cast<int>(rem % ni);
      rem /= ni;
    }
    Vec x(box.d);
    for (int i = 0; i < box.d; ++i) {
      const int ni = n[static_cast<size_t>(i)];
      x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * idx[static_cast<size_t>(i)] / (ni - 1);
    }
    g.values[flat] = fn(x);
  }
  return g;
}

double ScalarGrid::interp(const Vec& x) const {
  const int d = box.d;
  std::array<int, kMaxDim> i0{0, 0, 0};
  std::array<double, kMaxDim> t{0, 0, 0};
  for (int i = 0; i < d; ++i) {
    const int ni = n[static_cast<size_t>(i)];
    const double u =
        (x[i] - box.lo[i]) / (box.hi[i] - box.lo[i]) * (ni - 1);
    const double uc = std::clamp(u, 0.0, double(ni - 1));
    int k = static_cast<int>(std::floor(uc));
    k = std::min(k, ni - 2);
    i0[static_cast<size_t>(i)] = k;
    t[static_cast<size_t>(i)] = uc - k;
  }
  double acc = 0;
  const int corners = 1 << d;
  for (int c = 0; c < corners; ++c) {
    double w = 1.0;
    size_t flat = 0;
    for (int i = 0; i < d; ++i) {
      const int bit = (c >> i) & 1;
      w *= bit ? t[static_cast<size_t>(i)] : 1.0 - t[static_cast<size_t>(i)];
      flat = flat * static_cast<size_t>(n[static_cast<size_t>(i)]) +
             static_cast<size_t>(i0[static_cast<size_t>(i)] + bit);
    }
    acc += w * values[flat];
  }
  return acc;
}

double ball_average_fn(const std::function<double(const Vec&)>& fn, int d, double s, const Vec& x,
                       const MaximalOptions& opts) {
  if (!(s > 0.0)) throw std::invalid_argument("ball_average: radius must be positive");
  double num = 0, den = 0;
  if (d == 1) {
    const int nn = 2 * opts.radial;
    for (int j = 0; j < nn; ++j) {
      const double t = -s + (j + 0.5) * (2.0 * s / nn);
      num += fn(Vec(x[0] + t));
      den += 1.0;
    }
  } else if (d == 2) {
    for (int i = 0; i < opts.radial; ++i) {
      const double r = (i + 0.5) * s / opts.radial;
      for (int j = 0; j < opts.angular; ++j) {
        const double th = 2.0 * kPi * (j + 0.5) / opts.angular;
        const double w = r;
        num += w * fn(Vec(x[0] + r * std::cos(th), x[1] + r * std::sin(th)));
        den += w;
      }
    }
  } else {
    const int nc = std::max(4, opts.radial / 2);
    for (int i = 0; i < opts.radial; ++i) {
      const double r = (i + 0.5) * s / opts.radial;
      for (int q = 0; q < nc; ++q) {
        const double c = -1.0 + (q + 0.5) * (2.0 / nc);
        const double sp = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int j = 0; j < opts.angular; ++j) {
          const double th = 2.0 * kPi * (j + 0.5) / opts.angular;
          const double w = r * r;
          num += w * fn(Vec(x[0] + r * sp * std::cos(th), x[1] + r * sp * std::sin(th),
                            x[2] + r * c));
          den += w;
        }
      }
    }
  }
  return num / den;
}

double maximal_function_fn(const std::function<double(const Vec&)>& fn, int d, double R,
                           const Vec& x, const MaximalOptions& opts) {
  if (!(R > 0.0)) throw std::invalid_argument("maximal_function: R must be positive");
  if (opts.ladder < 2) throw std::invalid_argument("maximal_function: ladder must be >= 2");
  double best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < opts.ladder; ++j) {
    const double frac = double(opts.ladder - 1 - j) / double(opts.ladder - 1);
    const double s = R * std::pow(opts.min_radius_factor, frac);
    best = std::max(best, ball_average_fn(fn, d, s, x, opts));
  }
  return best;
}

double maximal_function(const ScalarGrid& phi, double R, const Vec& x,
                        const MaximalOptions& opts) {
  for (int i = 0; i < phi.box.d; ++i) {
    if (x[i] - R < phi.box.lo[i] - 1e-12 || x[i] + R > phi.box.hi[i] + 1e-12)
      throw std::domain_error("maximal_function: ball exceeds the sampled box");
  }
  return maximal_function_fn([&phi](const Vec& y) { return phi.interp(y); }, phi.box.d, R, x,
                             opts);
}

GrowthCertificate growth_certificate(const VectorFieldSpec& f, double eps, const Box& box,
                                     int samples_per_dim) {
  if (samples_per_dim < 2) throw std::invalid_argument("growth_certificate: need >= 2 samples");
  GrowthCertificate cert;
  size_t total = 1;
  for (int i = 0; i < f.d; ++i) total *= static_cast<size_t>(samples_per_dim);
  for (size_t flat = 0; flat < total; ++flat) {
    size_t rem = flat;
    Vec x(f.d);
    for (int i = f.d - 1; i >= 0; --i) {
      const int k = static_cast<int>(rem % static_cast<size_t>(samples_per_dim));
      rem /= static_cast<size_t>(samples_per_dim);
      x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * k / (samples_per_dim - 1);
    }
    cert.sup_neg_div_drift = std::max(cert.sup_neg_div_drift, -div_drift_of(f, x));
    cert.sup_div_diffusion_sq = std::max(cert.sup_div_diffusion_sq, div_diffusion_of(f, x).norm2());

    // |grad div sigma| by central differences of the divergence vector.
    const double h = fd_step(x);
    double gds2 = 0;
    for (int i = 0; i < f.d; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const Vec dp = div_diffusion_of(f, xp), dm = div_diffusion_of(f, xm);
      for (int l = 0; l < f.m; ++l) {
        const double v = (dp[l] - dm[l]) / (2.0 * h);
        gds2 += v * v;
      }
    }
    double shifted_sup = f.diffusion(x).frobenius();
    for (int i = 0; i < f.d && eps > 0.0; ++i) {
      for (double sgn : {-1.0, 1.0}) {
        Vec y = x;
        y[i] += sgn * eps;
        shifted_sup = std::max(shifted_sup, f.diffusion(y).frobenius());
      }
    }
    cert.sup_shifted_product = std::max(cert.sup_shifted_product, shifted_sup * std::sqrt(gds2));
  }
  return cert;
}

}  // namespace sdeflow
