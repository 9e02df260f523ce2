#include "sdeflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdeflow {

Scheme scheme_from_tag(const std::string& tag) {
  if (tag == "ito-euler") return Scheme::ito_euler;
  if (tag == "stratonovich-heun") return Scheme::stratonovich;
  throw std::invalid_argument("unknown scheme tag '" + tag + "'");
}

std::string scheme_tag(Scheme s) {
  return s == Scheme::ito_euler ? "ito-euler" : "stratonovich-heun";
}

double ParticleGrid::total_weight() const {
  std::vector<double> buf = weights;
  return tree_reduce(buf);
}

ParticleGrid ParticleGrid::lattice(const Box& box, const std::array<int, kMaxDim>& n,
                                   const std::function<double(const Vec&)>& log_weight) {
  ParticleGrid g;
  g.d = box.d;
  size_t total = 1;
  double cellvol = 1.0;
  for (int i = 0; i < box.d; ++i) {
    const int ni = n[static_cast<size_t>(i)];
    if (ni < 1) throw std::invalid_argument("ParticleGrid: cell counts must be >= 1");
    total *= static_cast<size_t>(ni);
    cellvol *= (box.hi[i] - box.lo[i]) / ni;
  }
  g.points.resize(total);
  g.weights.resize(total);
  for (size_t flat = 0; flat < total; ++flat) {
    size_t rem = flat;
    Vec x(box.d);
    for (int i = box.d - 1; i >= 0; --i) {
      const int ni = n[static_cast<size_t>(i)];
      const int k = static_cast<int>(rem % static_cast<size_t>(ni));
      rem /= static_cast<size_t>(ni);
      x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * (k + 0.5) / ni;
    }
    g.points[flat] = x;
    g.weights[flat] = (log_weight ? std::exp(log_weight(x)) : 1.0) * cellvol;
  }
  return g;
}

namespace {

std::vector<int> saves_to_steps(const std::vector<double>& saves, int steps, double dt) {
  std::vector<int> out;
  out.reserve(saves.size());
  for (double t : saves) {
    if (t < -1e-12 || t > 1.0 + 1e-12)
      throw std::invalid_argument("save times must lie in [0,1]");
    const int k = static_cast<int>(std::lround(t / dt));
    out.push_back(std::clamp(k, 0, steps));
  }
  if (!std::is_sorted(out.begin(), out.end()))
    throw std::invalid_argument("save times must be sorted");
  return out;
}

const VectorFieldSpec& effective_field(const VectorFieldSpec& field, Scheme scheme,
                                       VectorFieldSpec& storage) {
  if (scheme == Scheme::ito_euler) return field;
  storage = stratonovich_correction(field);
  return storage;
}

}  // namespace

FlowEnsemble simulate_flow(const VectorFieldSpec& field, const ParticleGrid& grid,
                           const BrownianPath& path, const std::vector<double>& saves,
                           Scheme scheme, RunMode mode) {
  if (grid.d != field.d) throw std::invalid_argument("simulate_flow: grid/field dimension");
  if (path.m != field.m) throw std::invalid_argument("simulate_flow: path/field dimension");
  if (path.dt > 1e-2 + 1e-15) throw std::invalid_argument("simulate_flow: requires dt <= 1e-2");

  VectorFieldSpec storage;
  const VectorFieldSpec& f = effective_field(field, scheme, storage);

  FlowEnsemble ens;
  ens.d = field.d;
  ens.scheme = scheme_tag(scheme);
  ens.path = path;
  ens.start = grid.points;
  ens.weights = grid.weights;
  ens.save_times = saves;
  ens.save_steps = saves_to_steps(saves, path.steps, path.dt);

  const size_t np = grid.points.size();
  ens.positions.assign(saves.size(), std::vector<Vec>(np));
  ens.diverged.assign(np, 0);
  ens.sup_norm.assign(np, 0.0);
  ens.max_comp0.assign(np, 0.0);

  const double dt = path.dt;
  for_each_index(np, mode, [&](size_t i) {
    Vec x = grid.points[i];
    double supn = x.norm();
    double maxc = x[0];
    bool dead = false;
    size_t si = 0;
    for (; si < ens.save_steps.size() && ens.save_steps[si] == 0; ++si)
      ens.positions[si][i] = x;
    for (int k = 0; k < path.steps; ++k) {
      if (!dead) {
        const Vec b = f.drift(x);
        const Mat s = f.diffusion(x);
        Vec xn = x;
        for (int c = 0; c < f.d; ++c) {
          double acc = b[c] * dt;
          for (int l = 0; l < f.m; ++l) acc += s(c, l) * path.increment(k, l);
          xn[c] += acc;
        }
        x = xn;
        supn = std::max(supn, x.norm());
        maxc = std::max(maxc, x[0]);
        if (!(x.norm() <= kDivergenceThreshold)) dead = true;
      }
      for (; si < ens.save_steps.size() && ens.save_steps[si] == k + 1; ++si)
        ens.positions[si][i] = x;
    }
    ens.diverged[i] = dead ? 1 : 0;
    ens.sup_norm[i] = supn;
    ens.max_comp0[i] = maxc;
  });
  int dc = 0;
  for (unsigned char f8 : ens.diverged) dc += f8;
  ens.divergent_count = dc;
  return ens;
}

FlowEnsemble simulate_tangent(const VectorFieldSpec& field, const FlowEnsemble& ensemble,
                              RunMode mode) {
  const Scheme scheme = scheme_from_tag(ensemble.scheme);
  VectorFieldSpec storage;
  const VectorFieldSpec& f = effective_field(field, scheme, storage);
  if (!f.grad_drift && !f.allow_fd)
    throw std::runtime_error("simulate_tangent: derivative data unavailable");

  FlowEnsemble ens = ensemble;
  const size_t np = ens.start.size();
  ens.tangent.assign(ens.save_steps.size(), std::vector<Mat>(np));
  ens.has_tangent = true;

  const BrownianPath& path = ens.path;
  const double dt = path.dt;
  for_each_index(np, mode, [&](size_t i) {
    Vec x = ens.start[i];
    Mat J = Mat::identity(f.d);
    bool dead = false;
    size_t si = 0;
    for (; si < ens.save_steps.size() && ens.save_steps[si] == 0; ++si) ens.tangent[si][i] = J;
    for (int k = 0; k < path.steps; ++k) {
      if (!dead) {
        const Vec b = f.drift(x);
        const Mat s = f.diffusion(x);
        const Mat gb = grad_drift_of(f, x);
        const Rank3 gs = grad_diffusion_of(f, x);
        // dJ = grad b J dt + grad sigma^{.l} J dW^l  (entries: d_j of row i)
        Mat A(f.d, f.d);
        for (int r = 0; r < f.d; ++r)
          for (int c = 0; c < f.d; ++c) {
            double acc = gb(r, c) * dt;
            for (int l = 0; l < f.m; ++l) acc += gs(c, r, l) * path.increment(k, l);
            A(r, c) = acc;
          }
        J = J + matmul(A, J);
        Vec xn = x;
        for (int c = 0; c < f.d; ++c) {
          double acc = b[c] * dt;
          for (int l = 0; l < f.m; ++l) acc += s(c, l) * path.increment(k, l);
          xn[c] += acc;
        }
        x = xn;
        if (!(x.norm() <= kDivergenceThreshold)) dead = true;
      }
      for (; si < ens.save_steps.size() && ens.save_steps[si] == k + 1; ++si)
        ens.tangent[si][i] = J;
    }
  });
  return ens;
}

std::vector<Vec> integrate_path(const VectorFieldSpec& field, const Vec& x0,
                                const BrownianPath& path, Scheme scheme) {
  VectorFieldSpec storage;
  const VectorFieldSpec& f = effective_field(field, scheme, storage);
  std::vector<Vec> traj(static_cast<size_t>(path.steps) + 1);
  Vec x = x0;
  traj[0] = x;
  bool dead = false;
  for (int k = 0; k < path.steps; ++k) {
    if (!dead) {
      const Vec b = f.drift(x);
      const Mat s = f.diffusion(x);
      Vec xn = x;
      for (int c = 0; c < f.d; ++c) {
        double acc = b[c] * path.dt;
        for (int l = 0; l < f.m; ++l) acc += s(c, l) * path.increment(k, l);
        xn[c] += acc;
      }
      x = xn;
      if (!(x.norm() <= kDivergenceThreshold)) dead = true;
    }
    traj[static_cast<size_t>(k) + 1] = x;
  }
  return traj;
}

std::vector<double> jacobian_via_formula(const VectorFieldSpec& field,
                                         const std::vector<Vec>& trajectory,
                                         const BrownianPath& path,
                                         const std::vector<int>& save_steps) {
  if (trajectory.size() != static_cast<size_t>(path.steps) + 1)
    throw std::invalid_argument("jacobian_via_formula: trajectory/path length mismatch");
  std::vector<double> out(save_steps.size());
  double expo = 0.0;
  size_t si = 0;
  for (; si < save_steps.size() && save_steps[si] == 0; ++si) out[si] = 1.0;
  for (int k = 0; k < path.steps; ++k) {
    const Vec& x = trajectory[static_cast<size_t>(k)];  // left-point evaluation
    const Vec ds = div_diffusion_of(field, x);
    double inc = (div_drift_of(field, x) - 0.5 * grad_sigma_contraction(field, x)) * path.dt;
    for (int l = 0; l < field.m; ++l) inc += ds[l] * path.increment(k, l);
    expo += inc;
    for (; si < save_steps.size() && save_steps[si] == k + 1; ++si) out[si] = std::exp(expo);
  }
  return out;
}

MomentBound inverse_jacobian_moment(const VectorFieldSpec& field, double p, double t,
                                    const Box& sup_box, int sup_samples,
                                    const ParticleGrid& grid, int replicates, int steps,
                                    uint64_t seed, Scheme scheme, RunMode mode) {
  if (p < 1.0) throw std::invalid_argument("inverse_jacobian_moment: p must be >= 1");
  if (sup_samples < 2) throw std::invalid_argument("inverse_jacobian_moment: sup_samples >= 2");

  VectorFieldSpec storage;
  const VectorFieldSpec& ito = effective_field(field, scheme, storage);

  MomentBound mb;
  // sup over a lattice of the positive part of the bracket
  size_t total = 1;
  for (int i = 0; i < field.d; ++i) total *= static_cast<size_t>(sup_samples);
  double sup = 0.0;
  for (size_t flat = 0; flat < total; ++flat) {
    size_t rem = flat;
    Vec x(field.d);
    for (int i = field.d - 1; i >= 0; --i) {
      const int k = static_cast<int>(rem % static_cast<size_t>(sup_samples));
      rem /= static_cast<size_t>(sup_samples);
      x[i] = sup_box.lo[i] + (sup_box.hi[i] - sup_box.lo[i]) * k / (sup_samples - 1);
    }
    const double bracket = -div_drift_of(ito, x) + 0.5 * grad_sigma_contraction(ito, x) +
                           sigma_hess_contraction(ito, x) +
                           0.5 * p * div_diffusion_of(ito, x).norm2();
    sup = std::max(sup, std::max(0.0, bracket));
  }
  mb.sup_bracket = sup;
  const double expo = t * p * sup;
  mb.bound_finite = expo < 700.0;
  mb.bound = mb.bound_finite ? std::exp(expo) : std::numeric_limits<double>::infinity();

  // Monte Carlo moment of det(J_t)^{-p} over replicates x particles
  std::vector<double> vals(static_cast<size_t>(replicates) * grid.points.size());
  for (int r = 0; r < replicates; ++r) {
    const BrownianPath path =
        make_brownian_path(seed, static_cast<uint64_t>(r), field.m, steps);
    FlowEnsemble ens = simulate_flow(field, grid, path, {t}, scheme, mode);
    ens = simulate_tangent(field, ens, mode);
    for (size_t i = 0; i < grid.points.size(); ++i)
      vals[static_cast<size_t>(r) * grid.points.size() + i] =
          std::pow(std::abs(det(ens.tangent[0][i])), -p);
  }
  std::vector<double> sum = vals;
  const double n = static_cast<double>(vals.size());
  mb.mc_estimate = tree_reduce(sum) / n;
  std::vector<double> sq(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) {
    const double dv = vals[i] - mb.mc_estimate;
    sq[i] = dv * dv;
  }
  mb.mc_se = std::sqrt(tree_reduce(sq) / (n * std::max(1.0, n - 1.0)));
  return mb;
}

// --- controls, skeleton, controlled SDE --------------------------------------

double Control::energy() const {
  double acc = 0;
  for (const Vec& v : values) acc += v.norm2();
  return 0.5 * acc * seg_dt();
}

double Control::l2_norm() const { return std::sqrt(2.0 * energy()); }

const Vec& Control::at_time(double t) const {
  int k = static_cast<int>(std::floor(t * segments()));
  k = std::clamp(k, 0, segments() - 1);
  return values[static_cast<size_t>(k)];
}

Control Control::constant(int m, const Vec& v, int segments) {
  Control h;
  h.m = m;
  h.values.assign(static_cast<size_t>(segments), v);
  return h;
}

Control Control::zero(int m, int segments) {
  Vec v(m);
  return constant(m, v, segments);
}

namespace {

/// One deterministic Heun step of dx/dt = b(x) + sigma(x) h.
inline Vec heun_step(const VectorFieldSpec& f, const Vec& x, const Vec& h, double dt) {
  Vec u1 = f.drift(x);
  const Mat s1 = f.diffusion(x);
  for (int c = 0; c < f.d; ++c) {
    double acc = 0;
    for (int l = 0; l < f.m; ++l) acc += s1(c, l) * h[l];
    u1[c] += acc;
  }
  Vec xp = x + dt * u1;
  Vec u2 = f.drift(xp);
  const Mat s2 = f.diffusion(xp);
  for (int c = 0; c < f.d; ++c) {
    double acc = 0;
    for (int l = 0; l < f.m; ++l) acc += s2(c, l) * h[l];
    u2[c] += acc;
  }
  return x + (0.5 * dt) * (u1 + u2);
}

void check_partition(const Control& h, int steps) {
  if (steps < 1 || h.segments() < 1 || steps % h.segments() != 0)
    throw std::invalid_argument("control partition must divide the step count");
}

}  // namespace

SkeletonResult solve_skeleton(const VectorFieldSpec& field, const Control& h,
                              const ParticleGrid& grid, int steps, RunMode mode) {
  if (h.m != field.m) throw std::invalid_argument("solve_skeleton: control dimension");
  check_partition(h, steps);
  const double dt = 1.0 / steps;
  const int per_seg = steps / h.segments();

  SkeletonResult res;
  res.dt = dt;
  const size_t np = grid.points.size();
  res.traj.assign(np, {});
  res.diverged.assign(np, 0);
  for_each_index(np, mode, [&](size_t i) {
    std::vector<Vec>& tr = res.traj[i];
    tr.resize(static_cast<size_t>(steps) + 1);
    Vec x = grid.points[i];
    tr[0] = x;
    bool dead = false;
    for (int k = 0; k < steps; ++k) {
      if (!dead) {
        const Vec& hk = h.values[static_cast<size_t>(k / per_seg)];
        x = heun_step(field, x, hk, dt);
        if (!(x.norm() <= kDivergenceThreshold)) dead = true;
      }
      tr[static_cast<size_t>(k) + 1] = x;
    }
    res.diverged[i] = dead ? 1 : 0;
  });
  int dc = 0;
  for (unsigned char f8 : res.diverged) dc += f8;
  res.divergent_count = dc;
  return res;
}

FlowEnsemble simulate_controlled(const VectorFieldSpec& field, const Control& h, double eps,
                                 const ParticleGrid& grid, const BrownianPath& path,
                                 const std::vector<double>& saves, RunMode mode) {
  if (eps < 0.0 || eps >= 1.0)
    throw std::invalid_argument("simulate_controlled: eps must lie in [0,1)");
  if (h.m != field.m) throw std::invalid_argument("simulate_controlled: control dimension");
  check_partition(h, path.steps);
  const int per_seg = path.steps / h.segments();
  const double dt = path.dt;
  const double root_eps = std::sqrt(eps);

  FlowEnsemble ens;
  ens.d = field.d;
  ens.scheme = scheme_tag(Scheme::ito_euler);
  ens.path = path;
  ens.start = grid.points;
  ens.weights = grid.weights;
  ens.save_times = saves;
  ens.save_steps = saves_to_steps(saves, path.steps, dt);

  const size_t np = grid.points.size();
  ens.positions.assign(saves.size(), std::vector<Vec>(np));
  ens.diverged.assign(np, 0);
  ens.sup_norm.assign(np, 0.0);
  ens.max_comp0.assign(np, 0.0);

  for_each_index(np, mode, [&](size_t i) {
    Vec x = grid.points[i];
    double supn = x.norm();
    double maxc = x[0];
    bool dead = false;
    size_t si = 0;
    for (; si < ens.save_steps.size() && ens.save_steps[si] == 0; ++si)
      ens.positions[si][i] = x;
    for (int k = 0; k < path.steps; ++k) {
      if (!dead) {
        const Vec& hk = h.values[static_cast<size_t>(k / per_seg)];
        const Mat s = field.diffusion(x);
        Vec xn = heun_step(field, x, hk, dt);
        for (int c = 0; c < field.d; ++c) {
          double acc = 0;
          for (int l = 0; l < field.m; ++l) acc += s(c, l) * path.increment(k, l);
          xn[c] += root_eps * acc;
        }
        x = xn;
        supn = std::max(supn, x.norm());
        maxc = std::max(maxc, x[0]);
        if (!(x.norm() <= kDivergenceThreshold)) dead = true;
      }
      for (; si < ens.save_steps.size() && ens.save_steps[si] == k + 1; ++si)
        ens.positions[si][i] = x;
    }
    ens.diverged[i] = dead ? 1 : 0;
    ens.sup_norm[i] = supn;
    ens.max_comp0[i] = maxc;
  });
  int dc = 0;
  for (unsigned char f8 : ens.diverged) dc += f8;
  ens.divergent_count = dc;
  return ens;
}

}  // namespace sdeflow
