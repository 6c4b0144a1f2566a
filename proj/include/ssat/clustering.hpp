#pragma once

#include <cstdint>
#include <vector>

#include "ssat/tensor.hpp"

namespace ssat {

struct KMeansModel {
  Tensor centroids;  // k x m
  double wcss = 0.0;

  std::size_t k() const { return centroids.rows; }
};

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iter = 300;
  double tol = 1e-6;
};

// Lloyd iterations with k-means++ seeding; best WCSS over seeded restarts.
// Empty clusters are re-seeded to the point farthest from its centroid.
KMeansModel kmeans_fit(const Tensor& z, std::size_t k, std::uint64_t seed,
                       const KMeansOptions& opts = {});

// Distance gap to the two nearest centroids: second smallest minus smallest.
double kmeans_boundary_score(const Tensor& z_row, const KMeansModel& model);

struct GmmModel {
  std::vector<double> weights;  // k mixing coefficients, sum to 1
  Tensor means;                 // k x m
  Tensor variances;             // k x m diagonal covariances, floored
  double log_likelihood = 0.0;

  std::size_t k() const { return means.rows; }
};

struct GmmOptions {
  std::size_t max_iter = 300;
  double tol = 1e-6;
  double variance_floor = 1e-6;
  KMeansOptions kmeans;
};

// Diagonal-covariance EM initialized from kmeans_fit; responsibilities are
// evaluated in log space with log-sum-exp.
GmmModel gmm_fit(const Tensor& z, std::size_t k, std::uint64_t seed,
                 const GmmOptions& opts = {});

// Per-component posterior probabilities for one point.
std::vector<double> gmm_posteriors(const Tensor& z_row, const GmmModel& model);

struct GmmScore {
  std::vector<double> posteriors;
  double delta = 0.0;  // gap between the two largest posteriors, in [0, 1]
};
GmmScore gmm_boundary_score(const Tensor& z_row, const GmmModel& model);

}  // namespace ssat
