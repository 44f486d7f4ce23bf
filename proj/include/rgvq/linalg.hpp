#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rgvq/errors.hpp"
#include "rgvq/random.hpp"
#include "rgvq/tensor.hpp"

namespace rgvq {

// Eigenvalues of a symmetric n x n matrix (row-major) by cyclic Jacobi
// rotations, sorted in descending order.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n, int max_sweeps = 100) {
  if (a.size() != n * n) throw DimensionError("symmetric_eigenvalues: expected " + std::to_string(n * n) + " entries");
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  double total = 0.0;
  for (double v : a) total += v * v;
  const double tol = 1e-22 * std::max(total, std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

// Sample covariance (divisor n - 1) of the columns of x.
inline std::vector<double> covariance(const Tensor& x) {
  const std::size_t n = x.rows(), f = x.cols();
  if (n < 2) throw ContractError("covariance: need at least 2 rows");
  std::vector<double> mu(f, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) mu[j] += x(i, j);
  for (double& m : mu) m /= static_cast<double>(n);
  std::vector<double> cov(f * f, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < f; ++a) {
      const double da = x(i, a) - mu[a];
      for (std::size_t b = a; b < f; ++b) cov[a * f + b] += da * (x(i, b) - mu[b]);
    }
  for (std::size_t a = 0; a < f; ++a)
    for (std::size_t b = a; b < f; ++b) {
      cov[a * f + b] /= static_cast<double>(n - 1);
      cov[b * f + a] = cov[a * f + b];
    }
  return cov;
}

// Largest singular value by power iteration on W^T W.
inline double spectral_norm(const Tensor& w, int iters = 200) {
  const std::size_t r = w.rows(), c = w.cols();
  if (r == 0 || c == 0) return 0.0;
  std::vector<double> v(c, 1.0 / std::sqrt(static_cast<double>(c))), u(r), next(c);
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += w(i, j) * v[j];
      u[i] = s;
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) next[j] += w(i, j) * u[i];
    double norm = 0.0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    const double estimate = std::sqrt(norm);
    for (std::size_t j = 0; j < c; ++j) v[j] = next[j] / norm;
    if (std::abs(estimate - sigma) <= 1e-13 * estimate) return estimate;
    sigma = estimate;
  }
  return sigma;
}

// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

// Spearman rank correlation (Pearson on average ranks). NaN when undefined
// (fewer than two points or a constant series).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("spearman: series lengths differ");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty series");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace rgvq
