#include "ssat/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ssat::kernels {

namespace {

void check_mm(const Tensor& a, const Tensor& b, std::size_t ak,
              std::size_t bk, const char* name) {
  if (ak != bk) {
    throw Error(std::string(name) + ": inner dimension mismatch " +
                a.shape_str() + " vs " + b.shape_str());
  }
}

inline void mm_row(const Tensor& a, const Tensor& b, Tensor& out,
                   std::size_t i) {
  double* o = out.data.data() + i * b.cols;
  for (std::size_t c = 0; c < b.cols; ++c) o[c] = 0.0;
  const double* arow = a.data.data() + i * a.cols;
  for (std::size_t k = 0; k < a.cols; ++k) {
    const double av = arow[k];
    const double* brow = b.data.data() + k * b.cols;
    for (std::size_t c = 0; c < b.cols; ++c) o[c] += av * brow[c];
  }
}

inline void mm_abt_row(const Tensor& a, const Tensor& b, Tensor& out,
                       std::size_t i) {
  double* o = out.data.data() + i * b.rows;
  const double* arow = a.data.data() + i * a.cols;
  for (std::size_t r = 0; r < b.rows; ++r) {
    const double* brow = b.data.data() + r * b.cols;
    double acc = 0.0;
    for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
    o[r] += acc;
  }
}

inline void mm_atb_row(const Tensor& a, const Tensor& b, Tensor& out,
                       std::size_t k) {
  // out(k, :) += sum_r a(r, k) * b(r, :)
  double* o = out.data.data() + k * b.cols;
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double av = a.at(r, k);
    const double* brow = b.data.data() + r * b.cols;
    for (std::size_t c = 0; c < b.cols; ++c) o[c] += av * brow[c];
  }
}

constexpr std::size_t kParallelFlops = 1u << 16;

}  // namespace

void matmul_serial(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.rows, "matmul");
  out.rows = a.rows;
  out.cols = b.cols;
  out.data.assign(a.rows * b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) mm_row(a, b, out, i);
}

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.rows, "matmul");
  out.rows = a.rows;
  out.cols = b.cols;
  out.data.assign(a.rows * b.cols, 0.0);
#ifdef _OPENMP
  if (a.rows * a.cols * b.cols >= kParallelFlops && a.rows > 1) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(a.rows); ++i) {
      mm_row(a, b, out, static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < a.rows; ++i) mm_row(a, b, out, i);
}

void matmul_at_b_serial(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.rows, b.rows, "matmul_at_b");
  if (out.rows != a.cols || out.cols != b.cols) {
    throw Error("matmul_at_b: output shape mismatch");
  }
  for (std::size_t k = 0; k < a.cols; ++k) mm_atb_row(a, b, out, k);
}

void matmul_at_b(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.rows, b.rows, "matmul_at_b");
  if (out.rows != a.cols || out.cols != b.cols) {
    throw Error("matmul_at_b: output shape mismatch");
  }
#ifdef _OPENMP
  if (a.rows * a.cols * b.cols >= kParallelFlops && a.cols > 1) {
#pragma omp parallel for schedule(static)
    for (long long k = 0; k < static_cast<long long>(a.cols); ++k) {
      mm_atb_row(a, b, out, static_cast<std::size_t>(k));
    }
    return;
  }
#endif
  for (std::size_t k = 0; k < a.cols; ++k) mm_atb_row(a, b, out, k);
}

void matmul_a_bt_serial(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.cols, "matmul_a_bt");
  if (out.rows != a.rows || out.cols != b.rows) {
    throw Error("matmul_a_bt: output shape mismatch");
  }
  for (std::size_t i = 0; i < a.rows; ++i) mm_abt_row(a, b, out, i);
}

void matmul_a_bt(const Tensor& a, const Tensor& b, Tensor& out) {
  check_mm(a, b, a.cols, b.cols, "matmul_a_bt");
  if (out.rows != a.rows || out.cols != b.rows) {
    throw Error("matmul_a_bt: output shape mismatch");
  }
#ifdef _OPENMP
  if (a.rows * a.cols * b.rows >= kParallelFlops && a.rows > 1) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(a.rows); ++i) {
      mm_abt_row(a, b, out, static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < a.rows; ++i) mm_abt_row(a, b, out, i);
}

}  // namespace ssat::kernels
