#include "ssat/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssat/error.hpp"

namespace ssat {

SymmetricEigen symmetric_eigen(const Tensor& a) {
  if (a.rows != a.cols) throw Error("symmetric_eigen: matrix must be square");
  const std::size_t m = a.rows;
  Tensor d = a;
  Tensor v(m, m);
  for (std::size_t i = 0; i < m; ++i) v.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) off += d.at(p, q) * d.at(p, q);
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        const double apq = d.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (d.at(q, q) - d.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < m; ++i) {
          const double dip = d.at(i, p);
          const double diq = d.at(i, q);
          d.at(i, p) = c * dip - s * diq;
          d.at(i, q) = s * dip + c * diq;
        }
        for (std::size_t i = 0; i < m; ++i) {
          const double dpi = d.at(p, i);
          const double dqi = d.at(q, i);
          d.at(p, i) = c * dpi - s * dqi;
          d.at(q, i) = s * dpi + c * dqi;
        }
        for (std::size_t i = 0; i < m; ++i) {
          const double vip = v.at(i, p);
          const double viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  SymmetricEigen out;
  out.values.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.values[i] = d.at(i, i);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return out.values[x] > out.values[y];
  });
  SymmetricEigen sorted;
  sorted.values.resize(m);
  sorted.vectors = Tensor(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    sorted.values[j] = out.values[order[j]];
    for (std::size_t i = 0; i < m; ++i) {
      sorted.vectors.at(i, j) = v.at(i, order[j]);
    }
  }
  return sorted;
}

PcaResult pca_project(const Tensor& z, std::size_t dims) {
  if (z.rows < dims) {
    throw Error("pca_project: need at least " + std::to_string(dims) +
                " rows");
  }
  const std::size_t n = z.rows;
  const std::size_t m = z.cols;

  std::vector<double> mean(m, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) mean[c] += z.at(r, c);
  }
  for (double& v : mean) v /= static_cast<double>(n);

  Tensor centered(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      centered.at(r, c) = z.at(r, c) - mean[c];
    }
  }
  Tensor cov(m, m);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < m; ++i) {
      const double zi = centered.at(r, i);
      for (std::size_t j = i; j < m; ++j) {
        cov.at(i, j) += zi * centered.at(r, j);
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      cov.at(i, j) /= denom;
      cov.at(j, i) = cov.at(i, j);
    }
  }

  const SymmetricEigen eig = symmetric_eigen(cov);
  double max_eig = 0.0;
  for (double v : eig.values) max_eig = std::max(max_eig, std::abs(v));
  const double rank_tol = std::max(max_eig * 1e-12, 1e-300);

  PcaResult out;
  out.coords = Tensor(n, dims);
  out.variances.assign(dims, 0.0);
  const std::size_t usable = std::min(dims, m);
  for (std::size_t j = 0; j < usable; ++j) {
    if (eig.values[j] <= rank_tol) {
      out.rank_deficient = true;
      continue;  // leave a zero component
    }
    // Flip so the largest-magnitude loading is positive.
    std::size_t big = 0;
    for (std::size_t i = 1; i < m; ++i) {
      if (std::abs(eig.vectors.at(i, j)) > std::abs(eig.vectors.at(big, j))) {
        big = i;
      }
    }
    const double sign = eig.vectors.at(big, j) >= 0.0 ? 1.0 : -1.0;
    out.variances[j] = eig.values[j];
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        acc += centered.at(r, c) * eig.vectors.at(c, j);
      }
      out.coords.at(r, j) = sign * acc;
    }
  }
  if (usable < dims) out.rank_deficient = true;
  return out;
}

}  // namespace ssat
