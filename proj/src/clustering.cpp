#include "ssat/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssat/error.hpp"
#include "ssat/parallel.hpp"
#include "ssat/rng.hpp"

namespace ssat {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sq_dist(const Tensor& a, std::size_t ra, const Tensor& b,
               std::size_t rb) {
  const double* x = a.data.data() + ra * a.cols;
  const double* y = b.data.data() + rb * b.cols;
  double acc = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) {
    const double d = x[c] - y[c];
    acc += d * d;
  }
  return acc;
}

Tensor kmeans_pp_seed(const Tensor& z, std::size_t k, Rng& rng) {
  Tensor centroids(k, z.cols);
  std::vector<double> dist2(z.rows, std::numeric_limits<double>::infinity());
  std::size_t first = rng.below(z.rows);
  for (std::size_t c = 0; c < z.cols; ++c) {
    centroids.at(0, c) = z.at(first, c);
  }
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows; ++i) {
      dist2[i] = std::min(dist2[i], sq_dist(z, i, centroids, j - 1));
      total += dist2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double acc = 0.0;
      pick = z.rows - 1;
      for (std::size_t i = 0; i < z.rows; ++i) {
        acc += dist2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(z.rows);
    }
    for (std::size_t c = 0; c < z.cols; ++c) {
      centroids.at(j, c) = z.at(pick, c);
    }
  }
  return centroids;
}

struct LloydResult {
  Tensor centroids;
  std::vector<std::size_t> assign;
  double wcss = 0.0;
};

LloydResult lloyd(const Tensor& z, std::size_t k, Rng& rng,
                  const KMeansOptions& opts) {
  LloydResult res;
  res.centroids = kmeans_pp_seed(z, k, rng);
  res.assign.assign(z.rows, 0);
  std::vector<double> best_d2(z.rows, 0.0);
  for (std::size_t iter = 0; iter < opts.max_iter; ++iter) {
    // Assignment step.
    parallel_for(z.rows, [&](std::size_t i) {
      std::size_t best = 0;
      double bd = sq_dist(z, i, res.centroids, 0);
      for (std::size_t j = 1; j < k; ++j) {
        const double d = sq_dist(z, i, res.centroids, j);
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      res.assign[i] = best;
      best_d2[i] = bd;
    });
    // Re-seed empty clusters to the farthest point from its centroid.
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t a : res.assign) counts[a]++;
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < z.rows; ++i) {
        if (best_d2[i] > best_d2[far]) far = i;
      }
      counts[res.assign[far]]--;
      res.assign[far] = j;
      counts[j] = 1;
      best_d2[far] = 0.0;
      for (std::size_t c = 0; c < z.cols; ++c) {
        res.centroids.at(j, c) = z.at(far, c);
      }
    }
    // Update step.
    Tensor next(k, z.cols);
    for (std::size_t i = 0; i < z.rows; ++i) {
      for (std::size_t c = 0; c < z.cols; ++c) {
        next.at(res.assign[i], c) += z.at(i, c);
      }
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < z.cols; ++c) {
        if (counts[j] > 0) {
          next.at(j, c) /= static_cast<double>(counts[j]);
        } else {
          next.at(j, c) = res.centroids.at(j, c);
        }
        const double d = next.at(j, c) - res.centroids.at(j, c);
        shift += d * d;
      }
    }
    res.centroids = std::move(next);
    if (std::sqrt(shift) < opts.tol) break;
  }
  // Final assignment and WCSS under the converged centroids.
  res.wcss = 0.0;
  for (std::size_t i = 0; i < z.rows; ++i) {
    std::size_t best = 0;
    double bd = sq_dist(z, i, res.centroids, 0);
    for (std::size_t j = 1; j < k; ++j) {
      const double d = sq_dist(z, i, res.centroids, j);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    res.assign[i] = best;
    res.wcss += bd;
  }
  return res;
}

}  // namespace

KMeansModel kmeans_fit(const Tensor& z, std::size_t k, std::uint64_t seed,
                       const KMeansOptions& opts) {
  if (k == 0) throw Error("kmeans_fit: k must be >= 1");
  if (z.rows < k) {
    throw Error("kmeans_fit: need at least k points, got " +
                std::to_string(z.rows) + " for k=" + std::to_string(k));
  }
  if (!z.all_finite()) throw Error("kmeans_fit: non-finite input");
  LloydResult best;
  best.wcss = std::numeric_limits<double>::infinity();
  const std::size_t restarts = std::max<std::size_t>(1, opts.restarts);
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(splitmix64(seed) + r);
    LloydResult res = lloyd(z, k, rng, opts);
    if (res.wcss < best.wcss) best = std::move(res);
  }
  return {std::move(best.centroids), best.wcss};
}

double kmeans_boundary_score(const Tensor& z_row, const KMeansModel& model) {
  if (model.k() < 2) {
    throw Error("kmeans_boundary_score: need at least 2 centroids");
  }
  double d1 = std::numeric_limits<double>::infinity();
  double d2 = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < model.k(); ++j) {
    const double d = std::sqrt(sq_dist(z_row, 0, model.centroids, j));
    if (d < d1) {
      d2 = d1;
      d1 = d;
    } else if (d < d2) {
      d2 = d;
    }
  }
  return d2 - d1;
}

namespace {

// log N(z | mu_j, diag(var_j)) for every component.
void log_densities(const Tensor& z, std::size_t row, const GmmModel& m,
                   std::vector<double>& out) {
  const std::size_t k = m.k();
  const std::size_t dim = m.means.cols;
  out.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double var = m.variances.at(j, c);
      const double d = z.at(row, c) - m.means.at(j, c);
      acc += std::log(2.0 * kPi * var) + d * d / var;
    }
    out[j] = -0.5 * acc;
  }
}

double log_sum_exp(const std::vector<double>& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

GmmModel gmm_fit(const Tensor& z, std::size_t k, std::uint64_t seed,
                 const GmmOptions& opts) {
  if (k == 0) throw Error("gmm_fit: k must be >= 1");
  if (z.rows < k) {
    throw Error("gmm_fit: need at least k points, got " +
                std::to_string(z.rows) + " for k=" + std::to_string(k));
  }
  const std::size_t n = z.rows;
  const std::size_t dim = z.cols;

  // Initialize from k-means: means, cluster shares, within-cluster variances.
  const KMeansModel km = kmeans_fit(z, k, seed, opts.kmeans);
  GmmModel m;
  m.means = km.centroids;
  m.variances = Tensor(k, dim);
  m.weights.assign(k, 0.0);
  std::vector<std::size_t> assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bd = sq_dist(z, i, m.means, 0);
    for (std::size_t j = 1; j < k; ++j) {
      const double d = sq_dist(z, i, m.means, j);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    assign[i] = best;
    m.weights[best] += 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = z.at(i, c) - m.means.at(assign[i], c);
      m.variances.at(assign[i], c) += d * d;
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    const double cnt = std::max(m.weights[j], 1.0);
    for (std::size_t c = 0; c < dim; ++c) {
      m.variances.at(j, c) =
          std::max(m.variances.at(j, c) / cnt, opts.variance_floor);
    }
    m.weights[j] = std::max(m.weights[j] / static_cast<double>(n), 1e-12);
  }

  // EM iterations in log space.
  Tensor resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < opts.max_iter; ++iter) {
    double ll = 0.0;
    std::vector<double> logw(k);
    for (std::size_t j = 0; j < k; ++j) logw[j] = std::log(m.weights[j]);
    std::vector<double> row_ll(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
      std::vector<double> logp(k);
      log_densities(z, i, m, logp);
      for (std::size_t j = 0; j < k; ++j) logp[j] += logw[j];
      const double lse = log_sum_exp(logp);
      row_ll[i] = lse;
      for (std::size_t j = 0; j < k; ++j) {
        resp.at(i, j) = std::exp(logp[j] - lse);
      }
    });
    for (double v : row_ll) ll += v;
    m.log_likelihood = ll;

    // M step.
    std::vector<double> nk(k, 0.0);
    Tensor mu(k, dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double r = resp.at(i, j);
        nk[j] += r;
        for (std::size_t c = 0; c < dim; ++c) {
          mu.at(j, c) += r * z.at(i, c);
        }
      }
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double denom = std::max(nk[j], 1e-12);
      for (std::size_t c = 0; c < dim; ++c) mu.at(j, c) /= denom;
    }
    Tensor var(k, dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double r = resp.at(i, j);
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = z.at(i, c) - mu.at(j, c);
          var.at(j, c) += r * d * d;
        }
      }
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double denom = std::max(nk[j], 1e-12);
      for (std::size_t c = 0; c < dim; ++c) {
        var.at(j, c) = std::max(var.at(j, c) / denom, opts.variance_floor);
      }
      m.weights[j] = std::max(nk[j] / static_cast<double>(n), 1e-12);
    }
    m.means = std::move(mu);
    m.variances = std::move(var);

    if (iter > 0 && ll - prev_ll < opts.tol && ll - prev_ll > -1e-9) break;
    prev_ll = ll;
  }

  // Final log-likelihood for the returned parameters.
  double ll = 0.0;
  std::vector<double> logp(k);
  for (std::size_t i = 0; i < n; ++i) {
    log_densities(z, i, m, logp);
    for (std::size_t j = 0; j < k; ++j) logp[j] += std::log(m.weights[j]);
    ll += log_sum_exp(logp);
  }
  m.log_likelihood = ll;
  return m;
}

std::vector<double> gmm_posteriors(const Tensor& z_row, const GmmModel& m) {
  std::vector<double> logp(m.k());
  log_densities(z_row, 0, m, logp);
  for (std::size_t j = 0; j < m.k(); ++j) logp[j] += std::log(m.weights[j]);
  const double lse = log_sum_exp(logp);
  std::vector<double> p(m.k());
  for (std::size_t j = 0; j < m.k(); ++j) p[j] = std::exp(logp[j] - lse);
  return p;
}

GmmScore gmm_boundary_score(const Tensor& z_row, const GmmModel& model) {
  if (model.k() < 2) {
    throw Error("gmm_boundary_score: need at least 2 components");
  }
  GmmScore out;
  out.posteriors = gmm_posteriors(z_row, model);
  double p1 = -1.0, p2 = -1.0;
  for (double p : out.posteriors) {
    if (p > p1) {
      p2 = p1;
      p1 = p;
    } else if (p > p2) {
      p2 = p;
    }
  }
  out.delta = p1 - p2;
  return out;
}

}  // namespace ssat
