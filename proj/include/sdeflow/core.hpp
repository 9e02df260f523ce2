/// @file core.hpp
/// @brief Small dense vector/matrix types (dimension <= 3), deterministic
///        reductions, and the serial/OpenMP execution switch shared by all
///        simulation kernels.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sdeflow {

inline constexpr int kMaxDim = 3;

/// Execution mode for data-parallel kernels. Serial is the reference
/// implementation; parallel must produce bit-identical results (disjoint
/// writes, fixed-shape reductions).
enum class RunMode { serial, parallel };

struct Vec {
  std::array<double, kMaxDim> c{};
  int d = 1;

  Vec() = default;
  explicit Vec(int dim) : d(dim) {}
  Vec(double x) : d(1) { c[0] = x; }
  Vec(double x, double y) : d(2) { c[0] = x; c[1] = y; }
  Vec(double x, double y, double z) : d(3) { c[0] = x; c[1] = y; c[2] = z; }

  double& operator[](int i) { return c[static_cast<size_t>(i)]; }
  double operator[](int i) const { return c[static_cast<size_t>(i)]; }

  double norm2() const {
    double s = 0;
    for (int i = 0; i < d; ++i) s += c[static_cast<size_t>(i)] * c[static_cast<size_t>(i)];
    return s;
  }
  double norm() const { return std::sqrt(norm2()); }
};

inline Vec operator+(Vec a, const Vec& b) {
  for (int i = 0; i < a.d; ++i) a[i] += b[i];
  return a;
}
inline Vec operator-(Vec a, const Vec& b) {
  for (int i = 0; i < a.d; ++i) a[i] -= b[i];
  return a;
}
inline Vec operator*(double s, Vec a) {
  for (int i = 0; i < a.d; ++i) a[i] *= s;
  return a;
}
inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (int i = 0; i < a.d; ++i) s += a[i] * b[i];
  return s;
}

/// Row-major rows x cols matrix, capacity 3x3. For diffusion fields rows = d
/// (state dimension), cols = m (driving dimension).
struct Mat {
  std::array<double, kMaxDim * kMaxDim> a{};
  int rows = 1, cols = 1;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i * cols + j)]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i * cols + j)]; }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  double frobenius() const {
    double s = 0;
    for (int i = 0; i < rows * cols; ++i) s += a[static_cast<size_t>(i)] * a[static_cast<size_t>(i)];
    return std::sqrt(s);
  }
};

inline Mat operator+(Mat x, const Mat& y) {
  for (int i = 0; i < x.rows * x.cols; ++i) x.a[static_cast<size_t>(i)] += y.a[static_cast<size_t>(i)];
  return x;
}
inline Mat operator*(double s, Mat x) {
  for (int i = 0; i < x.rows * x.cols; ++i) x.a[static_cast<size_t>(i)] *= s;
  return x;
}
inline Mat matmul(const Mat& x, const Mat& y) {
  Mat r(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < x.cols; ++k) {
      double v = x(i, k);
      for (int j = 0; j < y.cols; ++j) r(i, j) += v * y(k, j);
    }
  return r;
}
inline Vec matvec(const Mat& x, const Vec& v) {
  Vec r(x.rows);
  for (int i = 0; i < x.rows; ++i) {
    double s = 0;
    for (int j = 0; j < x.cols; ++j) s += x(i, j) * v[j];
    r[i] = s;
  }
  return r;
}

inline double det(const Mat& m) {
  if (m.rows != m.cols) throw std::invalid_argument("det: matrix not square");
  switch (m.rows) {
    case 1: return m(0, 0);
    case 2: return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    case 3:
      return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
             m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
             m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    default: throw std::invalid_argument("det: dimension > 3");
  }
}

/// Third-order tensor g[k][i][l] = d_k sigma^{il}; capacity 3x3x3.
struct Rank3 {
  std::array<double, kMaxDim * kMaxDim * kMaxDim> g{};
  int d = 1, rows = 1, cols = 1;  // k in [0,d), i in [0,rows), l in [0,cols)

  Rank3() = default;
  Rank3(int dd, int r, int c) : d(dd), rows(r), cols(c) {}
  double& operator()(int k, int i, int l) {
    return g[static_cast<size_t>((k * rows + i) * cols + l)];
  }
  double operator()(int k, int i, int l) const {
    return g[static_cast<size_t>((k * rows + i) * cols + l)];
  }
};

/// Fixed-shape pairwise tree reduction. The association order depends only on
/// the input length, never on thread count, so parallel and serial runs of the
/// callers produce identical sums.
inline double tree_reduce(std::vector<double>& buf) {
  size_t n = buf.size();
  if (n == 0) return 0.0;
  while (n > 1) {
    const size_t half = n / 2;
    for (size_t i = 0; i < half; ++i) buf[i] = buf[2 * i] + buf[2 * i + 1];
    if (n % 2 == 1) {
      buf[half] = buf[n - 1];
      n = half + 1;
    } else {
      n = half;
    }
  }
  return buf[0];
}

/// Map fn over [0, n) and tree-reduce the results deterministically.
inline double tree_reduce_map(size_t n, const std::function<double(size_t)>& fn,
                              RunMode mode = RunMode::parallel) {
  std::vector<double> buf(n);
  if (mode == RunMode::parallel) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      buf[static_cast<size_t>(i)] = fn(static_cast<size_t>(i));
  } else {
    for (size_t i = 0; i < n; ++i) buf[i] = fn(i);
  }
  return tree_reduce(buf);
}

/// Parallel-for helper; body(i) must write only to slot i of its outputs.
template <typename Body>
inline void for_each_index(size_t n, RunMode mode, Body&& body) {
  if (mode == RunMode::parallel) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) body(static_cast<size_t>(i));
  } else {
    for (size_t i = 0; i < n; ++i) body(i);
  }
}

inline void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int hardware_thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

struct Box {
  Vec lo, hi;
  int d = 1;
  double volume() const {
    double v = 1;
    for (int i = 0; i < d; ++i) v *= hi[i] - lo[i];
    return v;
  }
  bool contains(const Vec& x) const {
    for (int i = 0; i < d; ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    return true;
  }
};

}  // namespace sdeflow
