#pragma once

#include <cstdint>
#include <vector>

#include "ssat/tensor.hpp"

namespace ssat {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kMatMul,
  kAffine,
  kRelu,
  kTanh,
  kExp,
  kLog,
  kSqrt,
  kSum,
  kMean,
  kRowSum,
  kSoftmax,
  kLogSoftmax,
  kSqNorm,
  kKlCategorical,
  kConcatCols,
  kSin,
  kCos,
  kRowMax,
  kRowMin,
};

const char* op_name(Op op);

// Reverse-mode autodiff over a define-by-run tape. Values are computed
// eagerly as nodes are appended, so callers may branch on intermediate
// results (e.g. pick the nearest centroid) while building the graph.
// Node inputs always reference earlier nodes, so the tape is topologically
// ordered by construction.
class Tape {
 public:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double payload = 0.0;
    Tensor value;
    Tensor adjoint;                // allocated by backward()
    std::vector<std::size_t> sel;  // per-row arg indices for RowMax/RowMin
  };

  int leaf(Tensor v);
  int constant(Tensor v) { return leaf(std::move(v)); }
  int scalar(double v) { return leaf(Tensor::scalar(v)); }

  // Elementwise; b may also be a 1xC row broadcast across a's rows.
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);

  int scale(int a, double s);
  int add_scalar(int a, double s);
  int matmul(int a, int b);
  // x*(k x c weight) + (1 x c bias) broadcast over rows.
  int affine(int x, int w, int b);
  int relu(int a);
  int tanh_(int a);
  int exp_(int a);
  int log_(int a);
  int sqrt_(int a);
  int sum(int a);
  int mean(int a);
  int row_sum(int a);
  int softmax(int a);
  int log_softmax(int a);
  int sqnorm(int a);
  // Per-row KL(softmax(a) || softmax(b)); result is rows x 1.
  int kl_categorical(int a, int b);
  int concat_cols(int a, int b);
  int sin_(int a);
  int cos_(int a);
  int row_max(int a);
  int row_min(int a);

  const Tensor& value(int id) const { return nodes_[check(id)].value; }
  const Tensor& adjoint(int id) const { return nodes_[check(id)].adjoint; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds the scalar output's adjoint with 1 and accumulates adjoints of
  // every node it reaches; unreached nodes keep a zero adjoint.
  void backward(int output);

 private:
  int check(int id) const;
  int push(Node n);
  [[noreturn]] void fail(const Node& n, int id, const std::string& msg) const;
  void verify_finite_value(int id);
  std::vector<Node> nodes_;
};

struct ValueGrad {
  double value = 0.0;
  std::vector<Tensor> grads;
};

// Runs backward from a scalar output and gathers gradients for the
// requested leaves (parameters, inputs, or both).
ValueGrad value_and_grad(Tape& tape, int output, const std::vector<int>& wrt);

}  // namespace ssat
