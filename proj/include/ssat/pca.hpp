#pragma once

#include <vector>

#include "ssat/tensor.hpp"

namespace ssat {

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues are returned in descending order with matching eigenvectors
// as columns.
struct SymmetricEigen {
  std::vector<double> values;
  Tensor vectors;  // m x m, column j is the j-th eigenvector
};
SymmetricEigen symmetric_eigen(const Tensor& a);

struct PcaResult {
  Tensor coords;                   // n x dims, mean-centered projection
  std::vector<double> variances;   // per retained component, non-increasing
  bool rank_deficient = false;     // true if zero components were padded
};

// Projection onto the top-variance eigenvectors of the sample covariance.
// Sign convention: the largest-magnitude loading of each component is
// positive. Components beyond the data rank are padded with zeros.
PcaResult pca_project(const Tensor& z, std::size_t dims = 2);

}  // namespace ssat
