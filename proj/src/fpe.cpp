/// @file fpe.cpp
/// @brief Finite-volume forward solver, Monte Carlo histogram, and the
///        weighted-norm diagnostic.

#include "sdeflow/fpe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "sdeflow/rng.hpp"

namespace sdeflow {

namespace {

double minmod(double a, double b) {
  if (a > 0 && b > 0) return std::min(a, b);
  if (a < 0 && b < 0) return std::max(a, b);
  return 0.0;
}

/// Face-centered normal drift components and cell-centered diffusion matrix
/// A = sigma sigma^T / 2, both frozen once (the coefficients are autonomous).
struct FvCoefficients {
  // bface[axis][face-index]: normal drift b_axis at the face center.
  std::vector<double> bx;  // (nx+1) * ny faces, x fastest
  std::vector<double> by;  // nx * (ny+1) faces, x fastest (2D only)
  // Cell-centered A entries (only the ones a given dimension needs).
  std::vector<double> a00, a01, a11;
  double max_abs_b = 0.0;
  double max_row_sum_a2 = 0.0;  // max row sum of sigma sigma^T ( = 2A)
};

FvCoefficients freeze_coefficients(const VectorFieldSpec& field, const FVGrid& grid,
                                   RunMode mode) {
  const int d = grid.box.d;
  const int nx = grid.n[0];
  const int ny = d == 2 ? grid.n[1] : 1;
  const double dx = grid.dx(0);
  const double dy = d == 2 ? grid.dx(1) : 0.0;

  FvCoefficients co;
  co.a00.assign(static_cast<size_t>(grid.cells()), 0.0);
  if (d == 2) {
    co.a01.assign(static_cast<size_t>(grid.cells()), 0.0);
    co.a11.assign(static_cast<size_t>(grid.cells()), 0.0);
  }
  std::vector<double> row_sums(static_cast<size_t>(grid.cells()), 0.0);
  for_each_index(static_cast<size_t>(grid.cells()), mode, [&](size_t c) {
    const Mat s = field.diffusion(grid.center(static_cast<int>(c)));
    Mat a2(d, d);  // sigma sigma^T
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double v = 0;
        for (int l = 0; l < field.m; ++l) v += s(i, l) * s(j, l);
        a2(i, j) = v;
      }
    co.a00[c] = 0.5 * a2(0, 0);
    if (d == 2) {
      co.a01[c] = 0.5 * a2(0, 1);
      co.a11[c] = 0.5 * a2(1, 1);
    }
    double rs = 0;
    for (int i = 0; i < d; ++i) {
      double r = 0;
      for (int j = 0; j < d; ++j) r += std::abs(a2(i, j));
      rs = std::max(rs, r);
    }
    row_sums[c] = rs;
  });
  for (double r : row_sums) co.max_row_sum_a2 = std::max(co.max_row_sum_a2, r);

  co.bx.assign(static_cast<size_t>((nx + 1) * ny), 0.0);
  std::vector<double> bmax_x(co.bx.size(), 0.0);
  for_each_index(co.bx.size(), mode, [&](size_t f) {
    const int i = static_cast<int>(f) % (nx + 1);
    const int j = static_cast<int>(f) / (nx + 1);
    Vec x(d);
    x[0] = grid.box.lo[0] + i * dx;
    if (d == 2) x[1] = grid.box.lo[1] + (j + 0.5) * dy;
    const Vec b = field.drift(x);
    co.bx[f] = b[0];
    bmax_x[f] = std::abs(b[0]);
  });
  for (double v : bmax_x) co.max_abs_b = std::max(co.max_abs_b, v);

  if (d == 2) {
    co.by.assign(static_cast<size_t>(nx * (ny + 1)), 0.0);
    std::vector<double> bmax_y(co.by.size(), 0.0);
    for_each_index(co.by.size(), mode, [&](size_t f) {
      const int i = static_cast<int>(f) % nx;
      const int j = static_cast<int>(f) / nx;
      Vec x(d);
      x[0] = grid.box.lo[0] + (i + 0.5) * dx;
      x[1] = grid.box.lo[1] + j * dy;
      const Vec b = field.drift(x);
      co.by[f] = b[1];
      bmax_y[f] = std::abs(b[1]);
    });
    for (double v : bmax_y) co.max_abs_b = std::max(co.max_abs_b, v);
  }
  return co;
}

/// One conservative stage: out = u - dt * div(flux(u)). Returns the advective
/// |flux| suppressed at the walls during this stage (times face area).
double fv_stage(const FVGrid& grid, const FvCoefficients& co, const std::vector<double>& u,
                double dt, int advection_order, RunMode mode, std::vector<double>& au,
                std::vector<double>& gx, std::vector<double>& gy, std::vector<double>& out) {
  const int d = grid.box.d;
  const int nx = grid.n[0];
  const int ny = d == 2 ? grid.n[1] : 1;
  const double dx = grid.dx(0);
  const double dy = d == 2 ? grid.dx(1) : 1.0;

  const auto idx = [nx](int i, int j) { return static_cast<size_t>(i + nx * j); };

  // Suppressed wall outflux accumulates serially after the parallel phases.
  double suppressed = 0.0;

  if (d == 1) {
    for_each_index(static_cast<size_t>(nx), mode, [&](size_t c) { au[c] = co.a00[c] * u[c]; });
    // Total face flux G = b * u_upwind - d_x(A u); interior faces only.
    for_each_index(static_cast<size_t>(nx + 1), mode, [&](size_t f) {
      const int i = static_cast<int>(f);
      if (i == 0 || i == nx) {
        gx[f] = 0.0;
        return;
      }
      const double b = co.bx[f];
      double uface;
      if (advection_order == 2) {
        if (b >= 0) {
          const double sl = i >= 2 ? minmod(u[static_cast<size_t>(i - 1)] - u[static_cast<size_t>(i - 2)],
                                            u[static_cast<size_t>(i)] - u[static_cast<size_t>(i - 1)])
                                   : 0.0;
          uface = u[static_cast<size_t>(i - 1)] + 0.5 * sl;
        } else {
          const double sl = i + 1 < nx ? minmod(u[static_cast<size_t>(i)] - u[static_cast<size_t>(i - 1)],
                                                u[static_cast<size_t>(i + 1)] - u[static_cast<size_t>(i)])
                                       : 0.0;
          uface = u[static_cast<size_t>(i)] - 0.5 * sl;
        }
      } else {
        uface = b >= 0 ? u[static_cast<size_t>(i - 1)] : u[static_cast<size_t>(i)];
      }
      gx[f] = b * uface - (au[static_cast<size_t>(i)] - au[static_cast<size_t>(i - 1)]) / dx;
    });
    for_each_index(static_cast<size_t>(nx), mode, [&](size_t c) {
      out[c] = u[c] - dt / dx * (gx[c + 1] - gx[c]);
    });
    // Wall diagnostic: advective flux that zero-flux suppressed (outgoing only).
    const double bl = co.bx[0], br = co.bx[static_cast<size_t>(nx)];
    if (bl < 0) suppressed += -bl * u[0] * dt;
    if (br > 0) suppressed += br * u[static_cast<size_t>(nx - 1)] * dt;
    return suppressed;
  }

  // d == 2. au caches A entries times u for the centered diffusive fluxes.
  const size_t cells = static_cast<size_t>(nx) * static_cast<size_t>(ny);
  for_each_index(cells, mode, [&](size_t c) {
    au[c] = co.a00[c] * u[c];
    au[cells + c] = co.a01[c] * u[c];
    au[2 * cells + c] = co.a11[c] * u[c];
  });
  const double* a00u = au.data();
  const double* a01u = au.data() + cells;
  const double* a11u = au.data() + 2 * cells;
  const auto clampj = [ny](int j) { return std::clamp(j, 0, ny - 1); };
  const auto clampi = [nx](int i) { return std::clamp(i, 0, nx - 1); };

  // x faces: G = b_x u_up - d_x(A00 u) - d_y(A01 u).
  for_each_index(static_cast<size_t>((nx + 1) * ny), mode, [&](size_t f) {
    const int i = static_cast<int>(f) % (nx + 1);
    const int j = static_cast<int>(f) / (nx + 1);
    if (i == 0 || i == nx) {
      gx[f] = 0.0;
      return;
    }
    const double b = co.bx[f];
    double uface;
    if (advection_order == 2) {
      if (b >= 0) {
        const double sl = i >= 2 ? minmod(u[idx(i - 1, j)] - u[idx(i - 2, j)],
                                          u[idx(i, j)] - u[idx(i - 1, j)])
                                 : 0.0;
        uface = u[idx(i - 1, j)] + 0.5 * sl;
      } else {
        const double sl = i + 1 < nx ? minmod(u[idx(i, j)] - u[idx(i - 1, j)],
                                              u[idx(i + 1, j)] - u[idx(i, j)])
                                     : 0.0;
        uface = u[idx(i, j)] - 0.5 * sl;
      }
    } else {
      uface = b >= 0 ? u[idx(i - 1, j)] : u[idx(i, j)];
    }
    const double diff_xx = (a00u[idx(i, j)] - a00u[idx(i - 1, j)]) / dx;
    // Cross term d_y(A01 u) centered at the face; rows are Neumann-extended.
    const int jp = clampj(j + 1), jm = clampj(j - 1);
    const double diff_xy = (a01u[idx(i - 1, jp)] + a01u[idx(i, jp)] - a01u[idx(i - 1, jm)] -
                            a01u[idx(i, jm)]) /
                           (2.0 * (jp - jm) * dy);
    gx[f] = b * uface - diff_xx - (jp > jm ? diff_xy : 0.0);
  });

  // y faces: G = b_y u_up - d_y(A11 u) - d_x(A01 u).
  for_each_index(static_cast<size_t>(nx * (ny + 1)), mode, [&](size_t f) {
    const int i = static_cast<int>(f) % nx;
    const int j = static_cast<int>(f) / nx;
    if (j == 0 || j == ny) {
      gy[f] = 0.0;
      return;
    }
    const double b = co.by[f];
    double uface;
    if (advection_order == 2) {
      if (b >= 0) {
        const double sl = j >= 2 ? minmod(u[idx(i, j - 1)] - u[idx(i, j - 2)],
                                          u[idx(i, j)] - u[idx(i, j - 1)])
                                 : 0.0;
        uface = u[idx(i, j - 1)] + 0.5 * sl;
      } else {
        const double sl = j + 1 < ny ? minmod(u[idx(i, j)] - u[idx(i, j - 1)],
                                              u[idx(i, j + 1)] - u[idx(i, j)])
                                     : 0.0;
        uface = u[idx(i, j)] - 0.5 * sl;
      }
    } else {
      uface = b >= 0 ? u[idx(i, j - 1)] : u[idx(i, j)];
    }
    const double diff_yy = (a11u[idx(i, j)] - a11u[idx(i, j - 1)]) / dy;
    const int ip = clampi(i + 1), im = clampi(i - 1);
    const double diff_yx = (a01u[idx(ip, j - 1)] + a01u[idx(ip, j)] - a01u[idx(im, j - 1)] -
                            a01u[idx(im, j)]) /
                           (2.0 * (ip - im) * dx);
    gy[f] = b * uface - diff_yy - (ip > im ? diff_yx : 0.0);
  });

  for_each_index(cells, mode, [&](size_t c) {
    const int i = static_cast<int>(c) % nx;
    const int j = static_cast<int>(c) / nx;
    const double div = (gx[static_cast<size_t>(i + 1 + (nx + 1) * j)] -
                        gx[static_cast<size_t>(i + (nx + 1) * j)]) /
                           dx +
                       (gy[static_cast<size_t>(i + nx * (j + 1))] - gy[static_cast<size_t>(i + nx * j)]) / dy;
    out[c] = u[c] - dt * div;
  });

  for (int j = 0; j < ny; ++j) {
    const double bl = co.bx[static_cast<size_t>((nx + 1) * j)];
    const double br = co.bx[static_cast<size_t>(nx + (nx + 1) * j)];
    if (bl < 0) suppressed += -bl * u[idx(0, j)] * dt * dy;
    if (br > 0) suppressed += br * u[idx(nx - 1, j)] * dt * dy;
  }
  for (int i = 0; i < nx; ++i) {
    const double bb = co.by[static_cast<size_t>(i)];
    const double bt = co.by[static_cast<size_t>(i + nx * ny)];
    if (bb < 0) suppressed += -bb * u[idx(i, 0)] * dt * dx;
    if (bt > 0) suppressed += bt * u[idx(i, ny - 1)] * dt * dx;
  }
  return suppressed;
}

}  // namespace

Vec FVGrid::center(int flat) const {
  Vec x(box.d);
  int rem = flat;
  for (int k = 0; k < box.d; ++k) {
    const int i = rem % n[static_cast<size_t>(k)];
    rem /= n[static_cast<size_t>(k)];
    x[k] = box.lo[k] + (i + 0.5) * dx(k);
  }
  return x;
}

double FVGrid::total_mass() const {
  double s = 0;
  for (double v : u) s += v;
  return s * cellvol();
}

FVGrid FVGrid::from_function(const Box& box, const std::array<int, kMaxDim>& n,
                             const std::function<double(const Vec&)>& fn) {
  if (box.d < 1 || box.d > 2) throw std::invalid_argument("FVGrid: d must be 1 or 2");
  FVGrid g;
  g.box = box;
  g.n = n;
  for (int k = 0; k < box.d; ++k)
    if (n[static_cast<size_t>(k)] < 3) throw std::invalid_argument("FVGrid: need at least 3 cells per axis");
  g.u.assign(static_cast<size_t>(g.cells()), 0.0);
  for (int c = 0; c < g.cells(); ++c) g.u[static_cast<size_t>(c)] = std::max(0.0, fn(g.center(c)));
  const double mass = g.total_mass();
  if (!(mass > 0)) throw std::invalid_argument("FVGrid: initial density has nonpositive mass");
  for (double& v : g.u) v /= mass;
  return g;
}

FpeResult solve_fpe(const VectorFieldSpec& field, const FVGrid& phi0, double t_end, double dt,
                    const std::vector<double>& save_times, const FpeOptions& opts) {
  const int d = phi0.box.d;
  if (d < 1 || d > 2) throw std::invalid_argument("solve_fpe: d must be 1 or 2");
  if (field.d != d) throw std::invalid_argument("solve_fpe: field dimension mismatch");
  if (!(dt > 0) || !(t_end >= 0)) throw std::invalid_argument("solve_fpe: need dt > 0, t_end >= 0");
  if (opts.advection_order != 1 && opts.advection_order != 2)
    throw std::invalid_argument("solve_fpe: advection_order must be 1 or 2");
  if (opts.time_order != 1 && opts.time_order != 2)
    throw std::invalid_argument("solve_fpe: time_order must be 1 or 2");
  const double steps_real = t_end / dt;
  const long long steps = std::llround(steps_real);
  if (std::abs(steps_real - static_cast<double>(steps)) > 1e-9 * std::max(1.0, steps_real))
    throw std::invalid_argument("solve_fpe: t_end must be an integer multiple of dt");
  const double mass0 = phi0.total_mass();
  if (std::abs(mass0 - 1.0) > 1e-8)
    throw std::invalid_argument("solve_fpe: initial density must have unit mass");
  for (double v : phi0.u)
    if (v < 0) throw std::invalid_argument("solve_fpe: initial density must be nonnegative");

  // Sobolev-class coefficients are replaced by their mollification before any
  // face evaluation; pointwise traces of the raw field are not well defined.
  VectorFieldSpec working = field;
  double min_dx = phi0.dx(0);
  for (int k = 1; k < d; ++k) min_dx = std::min(min_dx, phi0.dx(k));
  if (field.smoothness == Smoothness::sobolev && opts.eps_pde != 0.0) {
    const double eps = opts.eps_pde > 0 ? opts.eps_pde : min_dx;
    auto kernel = std::make_shared<const MollifierKernel>(MollifierKernel::standard_bump(d));
    working = mollify(field, eps, kernel);
  }

  const FvCoefficients co = freeze_coefficients(working, phi0, opts.mode);
  double cfl = 1e300;
  if (co.max_abs_b > 0) cfl = std::min(cfl, 0.4 * min_dx / co.max_abs_b);
  if (co.max_row_sum_a2 > 0) cfl = std::min(cfl, 0.4 * min_dx * min_dx / co.max_row_sum_a2);
  if (dt > cfl * (1 + 1e-12)) {
    char msg[160];
    std::snprintf(msg, sizeof msg, "solve_fpe: CFL violation, dt=%.3g exceeds bound %.3g", dt,
                  cfl);
    throw std::invalid_argument(msg);
  }

  // Snap requested save times to step indices (deduplicated, ordered).
  std::vector<long long> save_steps;
  std::vector<double> actual_times;
  {
    std::vector<long long> snapped;
    for (double t : save_times) {
      long long s = std::llround(t / dt);
      snapped.push_back(std::clamp<long long>(s, 0, steps));
    }
    std::sort(snapped.begin(), snapped.end());
    snapped.erase(std::unique(snapped.begin(), snapped.end()), snapped.end());
    save_steps = snapped;
    for (long long s : save_steps) actual_times.push_back(static_cast<double>(s) * dt);
  }

  FpeResult res;
  res.grid = phi0;
  res.save_times = actual_times;
  res.steps = static_cast<int>(steps);

  const size_t cells = static_cast<size_t>(phi0.cells());
  const int nx = phi0.n[0];
  const int ny = d == 2 ? phi0.n[1] : 1;
  std::vector<double> u = phi0.u, stage1(cells), stage2(cells);
  std::vector<double> au(d == 2 ? 3 * cells : cells);
  std::vector<double> gx(static_cast<size_t>((nx + 1) * ny));
  std::vector<double> gy(d == 2 ? static_cast<size_t>(nx * (ny + 1)) : 0);
  const double vol = phi0.cellvol();

  size_t save_cursor = 0;
  const auto maybe_save = [&](long long step) {
    while (save_cursor < save_steps.size() && save_steps[save_cursor] == step) {
      res.snapshots.push_back(u);
      ++save_cursor;
    }
  };
  maybe_save(0);

  for (long long k = 0; k < steps; ++k) {
    double leaked = fv_stage(res.grid, co, u, dt, opts.advection_order, opts.mode, au, gx, gy,
                             stage1);
    if (opts.time_order == 2) {
      leaked += fv_stage(res.grid, co, stage1, dt, opts.advection_order, opts.mode, au, gx, gy,
                         stage2);
      leaked *= 0.5;
      for_each_index(cells, opts.mode,
                     [&](size_t c) { stage1[c] = 0.5 * u[c] + 0.5 * stage2[c]; });
    }
    res.boundary_leak += leaked;
    // Clip rounding-level negatives (explicit cross-diffusion undershoots).
    double clipped = 0.0;
    for (size_t c = 0; c < cells; ++c) {
      if (stage1[c] < 0) {
        clipped -= stage1[c];
        stage1[c] = 0.0;
      }
    }
    res.clipped_mass += clipped * vol;
    u.swap(stage1);
    double mass = 0;
    for (double v : u) mass += v;
    res.mass_drift_max = std::max(res.mass_drift_max, std::abs(mass * vol - 1.0));
    maybe_save(k + 1);
  }

  if (res.clipped_mass > 1e-6) {
    res.clip_warning = true;
    std::fprintf(stderr, "solve_fpe: warning, clipped %.3g of negative mass\n", res.clipped_mass);
  }
  res.grid.u = std::move(u);
  return res;
}

InitialSampler gaussian_sampler(int d, const Vec& mean, const Vec& var) {
  InitialSampler s;
  s.description = "componentwise Box-Muller normals: mean[k] + sqrt(var[k]) * Z_k, lane k, step 0";
  s.draw = [d, mean, var](uint64_t seed, uint64_t index) {
    Vec x(d);
    for (int k = 0; k < d; ++k)
      x[k] = mean[k] + std::sqrt(var[k]) * normal_draw(seed, index, 0, static_cast<uint32_t>(k));
    return x;
  };
  return s;
}

InitialSampler uniform_box_sampler(const Box& box) {
  InitialSampler s;
  s.description = "componentwise inverse transform lo[k] + (hi[k]-lo[k]) * U_k, lane k, step 0";
  s.draw = [box](uint64_t seed, uint64_t index) {
    Vec x(box.d);
    for (int k = 0; k < box.d; ++k)
      x[k] = box.lo[k] +
             (box.hi[k] - box.lo[k]) * uniform_draw(seed, index, 0, static_cast<uint32_t>(k));
    return x;
  };
  return s;
}

McHistogram mc_histogram(const VectorFieldSpec& field, const InitialSampler& sampler,
                         uint64_t particles, double t_end, double dt, const FVGrid& bins,
                         uint64_t seed, RunMode mode) {
  const int d = bins.box.d;
  if (field.d != d) throw std::invalid_argument("mc_histogram: field dimension mismatch");
  if (particles == 0) throw std::invalid_argument("mc_histogram: need particles > 0");
  if (!(dt > 0) || !(t_end >= 0))
    throw std::invalid_argument("mc_histogram: need dt > 0, t_end >= 0");
  const double steps_real = t_end / dt;
  const long long steps = std::llround(steps_real);
  if (std::abs(steps_real - static_cast<double>(steps)) > 1e-9 * std::max(1.0, steps_real))
    throw std::invalid_argument("mc_histogram: t_end must be an integer multiple of dt");
  if (!sampler.draw) throw std::invalid_argument("mc_histogram: sampler has no draw function");

  const int m = field.m;
  const size_t cells = static_cast<size_t>(bins.cells());

  // Blocked particle loop; per-block counts merged in fixed order so the
  // result is identical for any thread count.
  constexpr uint64_t kBlock = 2048;
  const uint64_t blocks = (particles + kBlock - 1) / kBlock;
  std::vector<std::vector<uint64_t>> block_counts(static_cast<size_t>(blocks));
  std::vector<uint64_t> block_escaped(static_cast<size_t>(blocks), 0);

  for_each_index(static_cast<size_t>(blocks), mode, [&](size_t bi) {
    auto& counts = block_counts[bi];
    counts.assign(cells, 0);
    const uint64_t begin = static_cast<uint64_t>(bi) * kBlock;
    const uint64_t end = std::min(particles, begin + kBlock);
    for (uint64_t p = begin; p < end; ++p) {
      Vec x = sampler.draw(seed, p);
      const double sqdt = std::sqrt(dt);
      bool finite = true;
      for (long long k = 0; k < steps && finite; ++k) {
        const Vec b = field.drift(x);
        const Mat s = field.diffusion(x);
        Vec xn = x;
        for (int i = 0; i < d; ++i) xn[i] += b[i] * dt;
        for (int l = 0; l < m; ++l) {
          const double z =
              normal_draw(seed, p, static_cast<uint32_t>(k + 1), static_cast<uint32_t>(l)) * sqdt;
          for (int i = 0; i < d; ++i) xn[i] += s(i, l) * z;
        }
        x = xn;
        for (int i = 0; i < d; ++i)
          if (!std::isfinite(x[i])) finite = false;
      }
      int flat = -1;
      if (finite && bins.box.contains(x)) {
        int stride = 1, acc = 0;
        bool inside = true;
        for (int k = 0; k < d; ++k) {
          const double t = (x[k] - bins.box.lo[k]) / bins.dx(k);
          const int i = std::min(static_cast<int>(t), bins.n[static_cast<size_t>(k)] - 1);
          if (i < 0 || t < 0) {
            inside = false;
            break;
          }
          acc += i * stride;
          stride *= bins.n[static_cast<size_t>(k)];
        }
        if (inside) flat = acc;
      }
      if (flat >= 0)
        counts[static_cast<size_t>(flat)]++;
      else
        block_escaped[bi]++;
    }
  });

  std::vector<uint64_t> counts(cells, 0);
  uint64_t escaped = 0;
  for (uint64_t bi = 0; bi < blocks; ++bi) {
    for (size_t c = 0; c < cells; ++c) counts[c] += block_counts[static_cast<size_t>(bi)][c];
    escaped += block_escaped[static_cast<size_t>(bi)];
  }

  McHistogram h;
  h.box = bins.box;
  h.n = bins.n;
  h.particles = particles;
  h.retained = particles - escaped;
  h.escaped_fraction = static_cast<double>(escaped) / static_cast<double>(particles);
  h.cellvol = bins.cellvol();
  h.u.assign(cells, 0.0);
  h.se.assign(cells, 0.0);
  if (h.retained == 0) return h;
  const double nr = static_cast<double>(h.retained);
  for (size_t c = 0; c < cells; ++c) {
    const double cnt = static_cast<double>(counts[c]);
    h.u[c] = cnt / (nr * h.cellvol);
    // Binomial standard error of the cell count over retained endpoints.
    h.se[c] = std::sqrt(cnt * (1.0 - cnt / nr)) / (nr * h.cellvol);
  }
  return h;
}

L1Report l1_compare(const FVGrid& fv, const McHistogram& mc) {
  if (fv.box.d != mc.box.d || fv.n != mc.n)
    throw std::invalid_argument("l1_compare: grids must match");
  for (int k = 0; k < fv.box.d; ++k)
    if (std::abs(fv.box.lo[k] - mc.box.lo[k]) > 1e-12 || std::abs(fv.box.hi[k] - mc.box.hi[k]) > 1e-12)
      throw std::invalid_argument("l1_compare: boxes must match");
  const double vol = fv.cellvol();
  L1Report rep;
  rep.z.assign(fv.u.size(), 0.0);
  int above = 0;
  for (size_t c = 0; c < fv.u.size(); ++c) {
    const double diff = fv.u[c] - mc.u[c];
    rep.l1 += std::abs(diff) * vol;
    if (mc.se[c] > 0) {
      const double z = diff / mc.se[c];
      rep.z[c] = z;
      rep.max_abs_z = std::max(rep.max_abs_z, std::abs(z));
      rep.cells_with_se++;
      if (std::abs(z) > 3.0) above++;
    }
  }
  if (rep.cells_with_se > 0)
    rep.frac_z_above_3 = static_cast<double>(above) / static_cast<double>(rep.cells_with_se);
  return rep;
}

double l1_to_function(const FVGrid& grid, const std::function<double(const Vec&)>& fn) {
  const double vol = grid.cellvol();
  double s = 0;
  for (int c = 0; c < grid.cells(); ++c)
    s += std::abs(grid.u[static_cast<size_t>(c)] - fn(grid.center(c))) * vol;
  return s;
}

double class_mp_diagnostic(const FVGrid& grid, const std::vector<std::vector<double>>& snapshots,
                           double p, const WeightedMeasure& measure) {
  if (!(p > 1)) throw std::invalid_argument("class_mp_diagnostic: p must exceed 1");
  if (measure.d != grid.box.d)
    throw std::invalid_argument("class_mp_diagnostic: measure dimension mismatch");
  if (snapshots.empty()) throw std::invalid_argument("class_mp_diagnostic: no snapshots");
  const double vol = grid.cellvol();
  const size_t cells = static_cast<size_t>(grid.cells());
  std::vector<double> weight(cells);
  for (size_t c = 0; c < cells; ++c)
    weight[c] = std::exp((1.0 - p) * measure.lambda(grid.center(static_cast<int>(c))));
  double sup = 0;
  for (const auto& snap : snapshots) {
    if (snap.size() != cells)
      throw std::invalid_argument("class_mp_diagnostic: snapshot size mismatch");
    double s = 0;
    for (size_t c = 0; c < cells; ++c) s += std::pow(snap[c], p) * weight[c];
    sup = std::max(sup, s * vol);
  }
  return sup;
}

}  // namespace sdeflow
