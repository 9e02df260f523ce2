/// @file ldp.cpp
/// @brief Rate minimization, small-noise Monte Carlo, Laplace estimation,
///        and weak-convergence tables.

#include "sdeflow/ldp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "sdeflow/rng.hpp"

namespace sdeflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string format_vec(const Vec& v) {
  std::string s = "(";
  char buf[32];
  for (int i = 0; i < v.d; ++i) {
    std::snprintf(buf, sizeof buf, "%.6g", v[i]);
    s += buf;
    if (i + 1 < v.d) s += ", ";
  }
  return s + ")";
}

/// Drift-plus-controlled-noise vector F(x, h) = b(x) + sigma(x) h.
Vec controlled_velocity(const VectorFieldSpec& f, const Vec& x, const Vec& h) {
  Vec u = f.drift(x);
  const Mat s = f.diffusion(x);
  for (int i = 0; i < f.d; ++i) {
    double acc = 0;
    for (int l = 0; l < f.m; ++l) acc += s(i, l) * h[l];
    u[i] += acc;
  }
  return u;
}

/// Jacobian of F in x: (i,j) = d_j b^i + sum_l h_l d_j sigma^{il}.
Mat controlled_jacobian(const VectorFieldSpec& f, const Vec& x, const Vec& h) {
  Mat jac = grad_drift_of(f, x);
  const Rank3 gs = grad_diffusion_of(f, x);
  for (int i = 0; i < f.d; ++i)
    for (int j = 0; j < f.d; ++j) {
      double acc = 0;
      for (int l = 0; l < f.m; ++l) acc += h[l] * gs(j, i, l);
      jac(i, j) += acc;
    }
  return jac;
}

Vec mat_t_vec(const Mat& a, const Vec& v) {
  Vec r(a.cols);
  for (int j = 0; j < a.cols; ++j) {
    double acc = 0;
    for (int i = 0; i < a.rows; ++i) acc += a(i, j) * v[i];
    r[j] = acc;
  }
  return r;
}

/// Forward Heun sweep storing states and predictors.
struct ForwardPass {
  std::vector<Vec> x;   // K+1 states
  std::vector<Vec> xp;  // K predictor states x + dt F(x, h)
};

ForwardPass forward_skeleton(const VectorFieldSpec& field, const Vec& x0,
                             const std::vector<Vec>& h, double dt) {
  ForwardPass fp;
  const size_t kk = h.size();
  fp.x.resize(kk + 1);
  fp.xp.resize(kk);
  fp.x[0] = x0;
  for (size_t k = 0; k < kk; ++k) {
    const Vec u1 = controlled_velocity(field, fp.x[k], h[k]);
    fp.xp[k] = fp.x[k] + dt * u1;
    const Vec u2 = controlled_velocity(field, fp.xp[k], h[k]);
    fp.x[k + 1] = fp.x[k] + (dt / 2.0) * (u1 + u2);
  }
  return fp;
}

/// Squared distance of the trajectory to the target, plus the index of the
/// state carrying the gradient seed (running-max argmax; K for endpoints).
struct PenaltyEval {
  double value = 0.0;
  double gap = 0.0;  // positive part of the violated margin
  size_t seed_index = 0;
};

PenaltyEval penalty_of(const EventTarget& target, const std::vector<Vec>& traj) {
  PenaltyEval pe;
  const size_t last = traj.size() - 1;
  switch (target.kind) {
    case EventTarget::Kind::whole_space:
      return pe;
    case EventTarget::Kind::endpoint_point: {
      pe.value = (traj[last] - target.point).norm2();
      pe.seed_index = last;
      return pe;
    }
    case EventTarget::Kind::endpoint_halfspace: {
      pe.gap = std::max(0.0, target.level - dot(traj[last], target.direction));
      pe.value = pe.gap * pe.gap;
      pe.seed_index = last;
      return pe;
    }
    case EventTarget::Kind::running_max: {
      // Ties resolve toward the latest index so the fixed start never absorbs
      // the gradient seed (a flat trajectory would otherwise be a spurious
      // stationary point of the penalty).
      double best = dot(traj[0], target.direction);
      size_t arg = 0;
      for (size_t k = 1; k < traj.size(); ++k) {
        const double v = dot(traj[k], target.direction);
        if (v >= best) {
          best = v;
          arg = k;
        }
      }
      pe.gap = std::max(0.0, target.level - best);
      pe.value = pe.gap * pe.gap;
      pe.seed_index = arg;
      return pe;
    }
  }
  return pe;
}

/// d(penalty)/dx at the seeded state.
Vec penalty_seed(const EventTarget& target, const std::vector<Vec>& traj, const PenaltyEval& pe) {
  const size_t last = traj.size() - 1;
  switch (target.kind) {
    case EventTarget::Kind::whole_space:
      return Vec(traj[0].d);
    case EventTarget::Kind::endpoint_point:
      return 2.0 * (traj[last] - target.point);
    case EventTarget::Kind::endpoint_halfspace:
    case EventTarget::Kind::running_max: {
      Vec s(traj[0].d);
      if (pe.gap > 0) s = (-2.0 * pe.gap) * target.direction;
      return s;
    }
  }
  return Vec(traj[0].d);
}

/// Objective J = energy + P * penalty and its gradient via the adjoint sweep
/// through the Heun steps.
struct ObjectiveEval {
  double value = 0.0;
  double penalty = 0.0;  // unweighted dist^2
  std::vector<Vec> grad;
};

ObjectiveEval objective(const VectorFieldSpec& field, const Vec& x0, const EventTarget& target,
                        const std::vector<Vec>& h, double dt, double pweight, bool want_grad) {
  ObjectiveEval ev;
  const ForwardPass fp = forward_skeleton(field, x0, h, dt);
  const size_t kk = h.size();
  double energy = 0;
  for (const Vec& hk : h) energy += hk.norm2();
  energy *= 0.5 * dt;
  const PenaltyEval pe = penalty_of(target, fp.x);
  ev.penalty = pe.value;
  ev.value = energy + pweight * pe.value;
  if (!want_grad) return ev;

  ev.grad.assign(kk, Vec(field.m));
  const Vec seed = penalty_seed(target, fp.x, pe);
  Vec lambda(field.d);
  for (size_t k = kk; k-- > 0;) {
    if (k + 1 == pe.seed_index) lambda = lambda + seed;
    // Control gradient: dt*h_k + P * B^T lambda with
    // B = (dt/2)[sigma(x_k) + sigma(xp_k) + dt F'(xp_k) sigma(x_k)].
    const Mat s1 = field.diffusion(fp.x[k]);
    const Mat s2 = field.diffusion(fp.xp[k]);
    const Mat j2 = controlled_jacobian(field, fp.xp[k], h[k]);
    const Vec j2t_lambda = mat_t_vec(j2, lambda);
    Vec gh(field.m);
    for (int l = 0; l < field.m; ++l) {
      double acc = 0;
      for (int i = 0; i < field.d; ++i)
        acc += (s1(i, l) + s2(i, l)) * lambda[i] + dt * s1(i, l) * j2t_lambda[i];
      gh[l] = dt * h[k][l] + pweight * (dt / 2.0) * acc;
    }
    ev.grad[k] = gh;
    // State adjoint: lambda <- A^T lambda with
    // A = I + (dt/2)[F'(x_k) + F'(xp_k)(I + dt F'(x_k))].
    const Mat j1 = controlled_jacobian(field, fp.x[k], h[k]);
    const Vec w1 = mat_t_vec(j1, lambda);
    const Vec w2 = j2t_lambda;
    const Vec w3 = mat_t_vec(j1, w2);
    lambda = lambda + (dt / 2.0) * (w1 + w2 + dt * w3);
  }
  return ev;
}

double grad_norm(const std::vector<Vec>& g) {
  double s = 0;
  for (const Vec& v : g) s += v.norm2();
  return std::sqrt(s);
}

/// 95% Wilson interval.
void wilson(uint64_t hits, uint64_t n, double& lo, double& hi) {
  const double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(hits) / nn;
  const double denom = 1.0 + z * z / nn;
  const double center = (p + z * z / (2 * nn)) / denom;
  const double half = (z / denom) * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn));
  lo = hits == 0 ? 0.0 : std::max(0.0, center - half);
  hi = hits == n ? 1.0 : std::min(1.0, center + half);
}

bool event_hit(const EventTarget& event, const Vec& x0, const Vec& endpoint, double running_best) {
  switch (event.kind) {
    case EventTarget::Kind::whole_space:
      return true;
    case EventTarget::Kind::endpoint_point:
      // Measure-zero for diffusions; kept for completeness (exact equality).
      return (endpoint - event.point).norm2() == 0.0;
    case EventTarget::Kind::endpoint_halfspace:
      return dot(endpoint, event.direction) >= event.level;
    case EventTarget::Kind::running_max:
      (void)x0;
      return running_best >= event.level;
  }
  return false;
}

}  // namespace

std::string EventTarget::describe() const {
  char buf[128];
  switch (kind) {
    case Kind::whole_space:
      return "whole space";
    case Kind::endpoint_point:
      return "endpoint == " + format_vec(point);
    case Kind::endpoint_halfspace:
      std::snprintf(buf, sizeof buf, "endpoint component >= %.6g along ", level);
      return buf + format_vec(direction);
    case Kind::running_max:
      std::snprintf(buf, sizeof buf, "running max >= %.6g along ", level);
      return buf + format_vec(direction);
  }
  return "";
}

EventTarget EventTarget::whole(int d) {
  EventTarget t;
  t.kind = Kind::whole_space;
  t.point = Vec(d);
  t.direction = Vec(d);
  return t;
}

EventTarget EventTarget::endpoint(const Vec& a) {
  EventTarget t;
  t.kind = Kind::endpoint_point;
  t.point = a;
  t.direction = Vec(a.d);
  return t;
}

EventTarget EventTarget::halfspace(const Vec& dir, double level) {
  EventTarget t;
  t.kind = Kind::endpoint_halfspace;
  t.point = Vec(dir.d);
  t.direction = dir;
  t.level = level;
  return t;
}

EventTarget EventTarget::threshold(const Vec& dir, double level) {
  EventTarget t;
  t.kind = Kind::running_max;
  t.point = Vec(dir.d);
  t.direction = dir;
  t.level = level;
  return t;
}

RateEstimate rate_minimize(const VectorFieldSpec& field, const Vec& x0, const EventTarget& target,
                           int segments, const RateOptions& opts) {
  if (x0.d != field.d) throw std::invalid_argument("rate_minimize: start dimension mismatch");
  if (segments < 16) throw std::invalid_argument("rate_minimize: need at least 16 segments");
  if (opts.stages < 1 || opts.max_iters < 1)
    throw std::invalid_argument("rate_minimize: bad optimizer config");
  const double dt = 1.0 / segments;
  const size_t kk = static_cast<size_t>(segments);

  std::vector<Vec> h(kk, Vec(field.m));
  RateEstimate best;
  best.description = target.describe();

  double pweight = opts.penalty0;
  int total_iters = 0;
  std::vector<double> stage_norms;
  for (int stage = 0; stage < opts.stages; ++stage) {
    ObjectiveEval cur = objective(field, x0, target, h, dt, pweight, true);
    std::vector<Vec> prev_h, prev_g;
    double alpha = std::min(0.1, 1.0 / (1.0 + pweight));
    int it = 0;
    for (; it < opts.max_iters; ++it) {
      const double gnorm = grad_norm(cur.grad);
      if (gnorm <= opts.grad_tol) break;
      // Barzilai-Borwein step from the previous pair, safeguarded.
      if (!prev_h.empty()) {
        double sts = 0, sty = 0;
        for (size_t k = 0; k < kk; ++k) {
          const Vec s = h[k] - prev_h[k];
          const Vec y = cur.grad[k] - prev_g[k];
          sts += s.norm2();
          sty += dot(s, y);
        }
        alpha = sty > 0 ? std::clamp(sts / sty, 1e-14, 1e8) : std::min(1.0, 4 * alpha);
      }
      prev_h = h;
      prev_g = cur.grad;
      // Backtracking line search on the merit value.
      bool accepted = false;
      for (int bt = 0; bt < 50; ++bt) {
        std::vector<Vec> cand(kk, Vec(field.m));
        for (size_t k = 0; k < kk; ++k) cand[k] = h[k] - alpha * cur.grad[k];
        ObjectiveEval trial = objective(field, x0, target, cand, dt, pweight, false);
        if (trial.value <= cur.value - 1e-4 * alpha * gnorm * gnorm) {
          h = std::move(cand);
          trial.grad.clear();
          cur = objective(field, x0, target, h, dt, pweight, true);
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) break;  // no descent at the smallest step: stage is done
    }
    total_iters += it;
    stage_norms.push_back(grad_norm(cur.grad));
    if (stage + 1 < opts.stages) pweight *= 10.0;
  }

  best.h_star.m = field.m;
  best.h_star.values = h;
  best.energy = best.h_star.energy();
  const ObjectiveEval fin = objective(field, x0, target, h, dt, pweight, false);
  best.residual = std::sqrt(fin.penalty);
  best.feasible = best.residual <= opts.feas_tol;
  best.value = best.feasible ? best.h_star.energy() : kInf;
  best.iterations = total_iters;
  best.grad_norms = std::move(stage_norms);
  best.penalty_final = pweight;
  return best;
}

SmallNoiseTable small_noise_mc(const VectorFieldSpec& field, const Vec& x0,
                               const std::vector<double>& eps_ladder, const EventTarget& event,
                               uint64_t particles, int steps, uint64_t seed, RunMode mode) {
  if (x0.d != field.d) throw std::invalid_argument("small_noise_mc: start dimension mismatch");
  if (particles == 0 || steps < 1) throw std::invalid_argument("small_noise_mc: empty run");
  for (double e : eps_ladder)
    if (!(e > 0) || !(e < 1)) throw std::invalid_argument("small_noise_mc: eps must lie in (0,1)");
  if (eps_ladder.empty()) throw std::invalid_argument("small_noise_mc: empty ladder");

  std::vector<double> ladder = eps_ladder;
  std::sort(ladder.begin(), ladder.end(), std::greater<>());

  SmallNoiseTable table;
  table.event = event.describe();
  const double dt = 1.0 / steps;
  const double sqdt = std::sqrt(dt);
  constexpr uint64_t kBlock = 4096;
  const uint64_t blocks = (particles + kBlock - 1) / kBlock;

  for (size_t r = 0; r < ladder.size(); ++r) {
    const double eps = ladder[r];
    const double noise_scale = std::sqrt(eps) * sqdt;
    const uint64_t row_seed = seed + r;
    std::vector<uint64_t> block_hits(static_cast<size_t>(blocks), 0);
    for_each_index(static_cast<size_t>(blocks), mode, [&](size_t bi) {
      const uint64_t begin = static_cast<uint64_t>(bi) * kBlock;
      const uint64_t end = std::min(particles, begin + kBlock);
      uint64_t hits = 0;
      for (uint64_t p = begin; p < end; ++p) {
        Vec x = x0;
        double running_best = dot(x, event.direction);
        bool alive = true;
        for (int k = 0; k < steps && alive; ++k) {
          const Vec b = field.drift(x);
          const Mat s = field.diffusion(x);
          Vec xn = x;
          for (int i = 0; i < field.d; ++i) xn[i] += b[i] * dt;
          for (int l = 0; l < field.m; ++l) {
            const double z = normal_draw(row_seed, p, static_cast<uint32_t>(k),
                                         static_cast<uint32_t>(l)) *
                             noise_scale;
            for (int i = 0; i < field.d; ++i) xn[i] += s(i, l) * z;
          }
          x = xn;
          for (int i = 0; i < field.d; ++i)
            if (!std::isfinite(x[i])) alive = false;
          if (alive) running_best = std::max(running_best, dot(x, event.direction));
        }
        if (alive && event_hit(event, x0, x, running_best)) hits++;
      }
      block_hits[bi] = hits;
    });
    SmallNoiseRow row;
    row.eps = eps;
    row.trials = particles;
    for (uint64_t bh : block_hits) row.hits += bh;
    row.p_hat = static_cast<double>(row.hits) / static_cast<double>(particles);
    wilson(row.hits, particles, row.ci_lo, row.ci_hi);
    row.usable = row.hits > 0;
    row.eps_log_p = row.usable ? eps * std::log(row.p_hat) : 0.0;
    table.rows.push_back(row);
  }

  // Extrapolate from the three smallest usable eps.
  std::vector<const SmallNoiseRow*> usable;
  for (const auto& row : table.rows)
    if (row.usable) usable.push_back(&row);
  if (usable.size() >= 3) {
    // rows are sorted by descending eps; take the last three.
    const SmallNoiseRow& r1 = *usable[usable.size() - 3];
    const SmallNoiseRow& r2 = *usable[usable.size() - 2];
    const SmallNoiseRow& r3 = *usable[usable.size() - 1];
    const auto pair_extrap = [](const SmallNoiseRow& a, const SmallNoiseRow& b) {
      return (a.eps * b.eps_log_p - b.eps * a.eps_log_p) / (a.eps - b.eps);
    };
    const bool ratio2 = std::abs(r1.eps / r2.eps - 2.0) < 1e-9 && std::abs(r2.eps / r3.eps - 2.0) < 1e-9;
    if (ratio2) {
      const double r23 = pair_extrap(r2, r3);
      const double r12 = pair_extrap(r1, r2);
      table.extrapolated = 2 * r23 - r12;
      table.two_stage = true;
    } else {
      table.extrapolated = pair_extrap(r2, r3);
      table.two_stage = false;
    }
    table.extrapolation_valid = true;
  }
  return table;
}

LaplaceEstimate laplace_estimate(const VectorFieldSpec& field, const Vec& x0,
                                 const std::function<double(const std::vector<Vec>&)>& g,
                                 double bound, double eps, uint64_t particles, int steps,
                                 uint64_t seed, RunMode mode) {
  if (x0.d != field.d) throw std::invalid_argument("laplace_estimate: start dimension mismatch");
  if (!(eps > 0) || particles == 0 || steps < 1 || !(bound >= 0) || !g)
    throw std::invalid_argument("laplace_estimate: bad arguments");

  std::vector<double> exponents(static_cast<size_t>(particles));
  constexpr uint64_t kBlock = 4096;
  const uint64_t blocks = (particles + kBlock - 1) / kBlock;
  std::vector<unsigned char> violated(static_cast<size_t>(blocks), 0);
  const double dt = 1.0 / steps;
  const double noise_scale = std::sqrt(eps) * std::sqrt(dt);

  for_each_index(static_cast<size_t>(blocks), mode, [&](size_t bi) {
    const uint64_t begin = static_cast<uint64_t>(bi) * kBlock;
    const uint64_t end = std::min(particles, begin + kBlock);
    std::vector<Vec> path(static_cast<size_t>(steps) + 1);
    for (uint64_t p = begin; p < end; ++p) {
      path[0] = x0;
      for (int k = 0; k < steps; ++k) {
        const Vec& x = path[static_cast<size_t>(k)];
        const Vec b = field.drift(x);
        const Mat s = field.diffusion(x);
        Vec xn = x;
        for (int i = 0; i < field.d; ++i) xn[i] += b[i] * dt;
        for (int l = 0; l < field.m; ++l) {
          const double z =
              normal_draw(seed, p, static_cast<uint32_t>(k), static_cast<uint32_t>(l)) *
              noise_scale;
          for (int i = 0; i < field.d; ++i) xn[i] += s(i, l) * z;
        }
        path[static_cast<size_t>(k) + 1] = xn;
      }
      const double v = g(path);
      if (!(std::abs(v) <= bound + 1e-12)) violated[bi] = 1;
      exponents[static_cast<size_t>(p)] = -v / eps;
    }
  });
  for (unsigned char f8 : violated)
    if (f8) throw std::domain_error("laplace_estimate: g exceeded its declared bound");

  double mx = exponents[0];
  for (double e : exponents) mx = std::max(mx, e);
  double sum = 0, sum_sq = 0;
  for (double e : exponents) {
    const double w = std::exp(e - mx);
    sum += w;
    sum_sq += w * w;
  }
  LaplaceEstimate est;
  est.particles = particles;
  est.value = eps * (mx + std::log(sum) - std::log(static_cast<double>(particles)));
  est.ess = sum * sum / sum_sq;
  est.reliable = est.ess >= 100.0;
  return est;
}

std::vector<WeakConvergenceRow> weak_convergence_check(const VectorFieldSpec& field, const Vec& x0,
                                                       const std::vector<Control>& family,
                                                       const std::vector<int>& indices,
                                                       const Control& h, double M, int steps,
                                                       RunMode mode) {
  if (x0.d != field.d) throw std::invalid_argument("weak_convergence_check: dimension mismatch");
  if (family.size() != indices.size())
    throw std::invalid_argument("weak_convergence_check: indices must label the family");
  if (h.m != field.m) throw std::invalid_argument("weak_convergence_check: control dimension");
  if (h.l2_norm() > M + 1e-12)
    throw std::invalid_argument("weak_convergence_check: limit control outside the L2 ball");
  for (const Control& hn : family) {
    if (hn.m != field.m) throw std::invalid_argument("weak_convergence_check: control dimension");
    if (hn.l2_norm() > M + 1e-12)
      throw std::invalid_argument("weak_convergence_check: family member outside the L2 ball");
  }
  if (steps < 1) throw std::invalid_argument("weak_convergence_check: steps must be positive");

  const double dt = 1.0 / steps;
  // Controls sampled mid-step so segment boundaries are unambiguous.
  const auto sampled = [&](const Control& c) {
    std::vector<Vec> v(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k) v[static_cast<size_t>(k)] = c.at_time((k + 0.5) * dt);
    return v;
  };
  const std::vector<Vec> h_steps = sampled(h);
  const ForwardPass base = forward_skeleton(field, x0, h_steps, dt);
  // sigma along the limit trajectory, frozen once.
  std::vector<Mat> sig(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) sig[static_cast<size_t>(k)] = field.diffusion(base.x[static_cast<size_t>(k)]);

  std::vector<WeakConvergenceRow> rows(family.size());
  for_each_index(family.size(), mode, [&](size_t fi) {
    const std::vector<Vec> hn_steps = sampled(family[fi]);
    WeakConvergenceRow row;
    row.index = indices[fi];
    double gap2 = 0;
    for (int k = 0; k < steps; ++k)
      gap2 += (hn_steps[static_cast<size_t>(k)] - h_steps[static_cast<size_t>(k)]).norm2() * dt;
    row.control_gap = std::sqrt(gap2);

    // w_t = int_0^t sigma(X^h_s)(h_n(s) - h(s)) ds on the step grid.
    Vec w(field.d);
    double sup_w = 0;
    for (int k = 0; k < steps; ++k) {
      const Vec diff = hn_steps[static_cast<size_t>(k)] - h_steps[static_cast<size_t>(k)];
      const Mat& s = sig[static_cast<size_t>(k)];
      for (int i = 0; i < field.d; ++i) {
        double acc = 0;
        for (int l = 0; l < field.m; ++l) acc += s(i, l) * diff[l];
        w[i] += acc * dt;
      }
      sup_w = std::max(sup_w, w.norm());
    }
    row.sup_w = sup_w;

    const ForwardPass fp = forward_skeleton(field, x0, hn_steps, dt);
    double gap = 0;
    for (size_t k = 0; k < fp.x.size(); ++k) gap = std::max(gap, (fp.x[k] - base.x[k]).norm());
    row.sup_path_gap = gap;
    rows[fi] = row;
  });
  return rows;
}

LdpReport ldp_report(const RateEstimate& rate, const SmallNoiseTable& table, double tol) {
  if (rate.description != table.event)
    throw std::invalid_argument("ldp_report: table event does not match the rate target");
  LdpReport rep;
  rep.tol = tol;
  rep.rate_value = rate.value;
  rep.extrapolated = table.extrapolation_valid
                         ? -table.extrapolated
                         : std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : table.rows)
    if (row.usable) rep.trend.push_back(-row.eps_log_p);

  const double i_val = rate.value;
  rep.trend_above_rate = true;
  for (double t : rep.trend)
    if (!(t >= i_val - tol * std::max(i_val, 1.0))) rep.trend_above_rate = false;

  if (!table.extrapolation_valid || !std::isfinite(i_val)) {
    rep.rel_discrepancy = std::numeric_limits<double>::quiet_NaN();
    rep.sandwich_consistent = false;
    return rep;
  }
  if (std::abs(i_val) < 1e-12 && std::abs(rep.extrapolated) < 1e-12) {
    rep.rel_discrepancy = 0.0;
    rep.sandwich_consistent = true;
    return rep;
  }
  rep.rel_discrepancy = std::abs(rep.extrapolated - i_val) / std::max(i_val, 1e-12);
  rep.sandwich_consistent = rep.rel_discrepancy <= tol;
  return rep;
}

}  // namespace sdeflow
