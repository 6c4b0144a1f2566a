#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ssat/error.hpp"

namespace ssat {

// Dense row-major matrix of doubles. Vectors are 1xN, scalars 1x1.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }
  static Tensor row(std::vector<double> v) {
    Tensor t;
    t.rows = 1;
    t.cols = v.size();
    t.data = std::move(v);
    return t;
  }

  std::size_t numel() const { return rows * cols; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double item() const {
    if (numel() != 1) throw Error("Tensor::item: tensor is not scalar");
    return data[0];
  }
  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }
  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

  Tensor extract_row(std::size_t r) const {
    Tensor out(1, cols);
    for (std::size_t c = 0; c < cols; ++c) out.data[c] = at(r, c);
    return out;
  }
};

namespace kernels {

// Serial reference kernel. The parallel kernel partitions work by output
// row with the same per-element accumulation order, so both produce
// bitwise-identical results.
void matmul_serial(const Tensor& a, const Tensor& b, Tensor& out);
void matmul(const Tensor& a, const Tensor& b, Tensor& out);

// out += a^T * b (used by backward passes).
void matmul_at_b_serial(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_at_b(const Tensor& a, const Tensor& b, Tensor& out);

// out += a * b^T.
void matmul_a_bt_serial(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_a_bt(const Tensor& a, const Tensor& b, Tensor& out);

}  // namespace kernels

}  // namespace ssat
