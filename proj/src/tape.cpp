#include "ssat/tape.hpp"

#include <cmath>

namespace ssat {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMatMul: return "matmul";
    case Op::kAffine: return "affine";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kRowSum: return "row_sum";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kSqNorm: return "sqnorm";
    case Op::kKlCategorical: return "kl_categorical";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kRowMax: return "row_max";
    case Op::kRowMin: return "row_min";
  }
  return "?";
}

namespace {

std::string node_tag(Op op, int id) {
  return "tape node " + std::to_string(id) + " (" + std::string(op_name(op)) +
         ")";
}

// Row-wise softmax with max subtraction.
void softmax_rows(const Tensor& x, Tensor& out) {
  out = Tensor(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* in = x.data.data() + r * x.cols;
    double* o = out.data.data() + r * x.cols;
    double m = in[0];
    for (std::size_t c = 1; c < x.cols; ++c) m = std::max(m, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) {
      o[c] = std::exp(in[c] - m);
      z += o[c];
    }
    for (std::size_t c = 0; c < x.cols; ++c) o[c] /= z;
  }
}

void log_softmax_rows(const Tensor& x, Tensor& out) {
  out = Tensor(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* in = x.data.data() + r * x.cols;
    double* o = out.data.data() + r * x.cols;
    double m = in[0];
    for (std::size_t c = 1; c < x.cols; ++c) m = std::max(m, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) z += std::exp(in[c] - m);
    const double lz = m + std::log(z);
    for (std::size_t c = 0; c < x.cols; ++c) o[c] = in[c] - lz;
  }
}

bool broadcastable(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) || (b.rows == 1 && b.cols == a.cols);
}

}  // namespace

int Tape::check(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw Error("tape: node id " + std::to_string(id) + " out of range");
  }
  return id;
}

void Tape::fail(const Node& n, int id, const std::string& msg) const {
  throw Error(node_tag(n.op, id) + ": " + msg);
}

int Tape::push(Node n) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  verify_finite_value(id);
  return id;
}

void Tape::verify_finite_value(int id) {
  const Node& n = nodes_[id];
  if (!n.value.all_finite()) {
    throw Error(node_tag(n.op, id) + ": non-finite value in forward pass");
  }
}

int Tape::leaf(Tensor v) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(v);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  if (!broadcastable(va, vb)) {
    fail(n, static_cast<int>(nodes_.size()),
         "shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  n.value = va;
  if (va.same_shape(vb)) {
    for (std::size_t i = 0; i < n.value.data.size(); ++i) {
      n.value.data[i] += vb.data[i];
    }
  } else {
    for (std::size_t r = 0; r < va.rows; ++r) {
      for (std::size_t c = 0; c < va.cols; ++c) {
        n.value.at(r, c) += vb.data[c];
      }
    }
  }
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  if (!broadcastable(va, vb)) {
    fail(n, static_cast<int>(nodes_.size()),
         "shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  n.value = va;
  if (va.same_shape(vb)) {
    for (std::size_t i = 0; i < n.value.data.size(); ++i) {
      n.value.data[i] -= vb.data[i];
    }
  } else {
    for (std::size_t r = 0; r < va.rows; ++r) {
      for (std::size_t c = 0; c < va.cols; ++c) {
        n.value.at(r, c) -= vb.data[c];
      }
    }
  }
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  if (!broadcastable(va, vb)) {
    fail(n, static_cast<int>(nodes_.size()),
         "shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  n.value = va;
  if (va.same_shape(vb)) {
    for (std::size_t i = 0; i < n.value.data.size(); ++i) {
      n.value.data[i] *= vb.data[i];
    }
  } else {
    for (std::size_t r = 0; r < va.rows; ++r) {
      for (std::size_t c = 0; c < va.cols; ++c) {
        n.value.at(r, c) *= vb.data[c];
      }
    }
  }
  return push(std::move(n));
}

int Tape::scale(int a, double s) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.payload = s;
  n.value = value(a);
  for (double& v : n.value.data) v *= s;
  return push(std::move(n));
}

int Tape::add_scalar(int a, double s) {
  Node n;
  n.op = Op::kAddScalar;
  n.a = a;
  n.payload = s;
  n.value = value(a);
  for (double& v : n.value.data) v += s;
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  if (va.cols != vb.rows) {
    fail(n, static_cast<int>(nodes_.size()),
         "shape mismatch " + va.shape_str() + " * " + vb.shape_str());
  }
  kernels::matmul(va, vb, n.value);
  return push(std::move(n));
}

int Tape::affine(int x, int w, int b) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  const Tensor& vb = value(b);
  Node n;
  n.op = Op::kAffine;
  n.a = x;
  n.b = w;
  n.payload = static_cast<double>(b);  // third input id
  if (vx.cols != vw.rows || vb.rows != 1 || vb.cols != vw.cols) {
    fail(n, static_cast<int>(nodes_.size()),
         "shape mismatch " + vx.shape_str() + " * " + vw.shape_str() + " + " +
             vb.shape_str());
  }
  kernels::matmul(vx, vw, n.value);
  for (std::size_t r = 0; r < n.value.rows; ++r) {
    for (std::size_t c = 0; c < n.value.cols; ++c) {
      n.value.at(r, c) += vb.data[c];
    }
  }
  return push(std::move(n));
}

int Tape::relu(int a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.value = value(a);
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

int Tape::tanh_(int a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.value = value(a);
  for (double& v : n.value.data) v = std::tanh(v);
  return push(std::move(n));
}

int Tape::exp_(int a) {
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.value = value(a);
  for (double& v : n.value.data) v = std::exp(v);
  return push(std::move(n));
}

int Tape::log_(int a) {
  Node n;
  n.op = Op::kLog;
  n.a = a;
  n.value = value(a);
  for (double& v : n.value.data) v = std::log(v);
  return push(std::move(n));
}

int Tape::sqrt_(int a) {
  Node n;
  n.op = Op::kSqrt;
  n.a = a;
  n.value = value(a);
  for (double& v : n.value.data) v = std::sqrt(v);
  return push(std::move(n));
}

int Tape::sum(int a) {
  Node n;
  n.op = Op::kSum;
  n.a = a;
  double acc = 0.0;
  for (double v : value(a).data) acc += v;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

int Tape::mean(int a) {
  Node n;
  n.op = Op::kMean;
  n.a = a;
  const Tensor& va = value(a);
  if (va.numel() == 0) {
    fail(n, static_cast<int>(nodes_.size()), "mean of empty tensor");
  }
  double acc = 0.0;
  for (double v : va.data) acc += v;
  n.value = Tensor::scalar(acc / static_cast<double>(va.numel()));
  return push(std::move(n));
}

int Tape::row_sum(int a) {
  Node n;
  n.op = Op::kRowSum;
  n.a = a;
  const Tensor& va = value(a);
  n.value = Tensor(va.rows, 1);
  for (std::size_t r = 0; r < va.rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < va.cols; ++c) acc += va.at(r, c);
    n.value.data[r] = acc;
  }
  return push(std::move(n));
}

int Tape::softmax(int a) {
  Node n;
  n.op = Op::kSoftmax;
  n.a = a;
  softmax_rows(value(a), n.value);
  return push(std::move(n));
}

int Tape::log_softmax(int a) {
  Node n;
  n.op = Op::kLogSoftmax;
  n.a = a;
  log_softmax_rows(value(a), n.value);
  return push(std::move(n));
}

int Tape::sqnorm(int a) {
  Node n;
  n.op = Op::kSqNorm;
  n.a = a;
  double acc = 0.0;
  for (double v : value(a).data) acc += v * v;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

int Tape::kl_categorical(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Node n;
  n.op = Op::kKlCategorical;
  n.a = a;
  n.b = b;
  if (!va.same_shape(vb)) {
    fail(n, static_cast<int>(nodes_.size()),
         "shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  Tensor lp, lq;
  log_softmax_rows(va, lp);
  log_softmax_rows(vb, lq);
  n.value = Tensor(va.rows, 1);
  for (std::size_t r = 0; r < va.rows; ++r) {
    double kl = 0.0;
    for (std::size_t c = 0; c < va.cols; ++c) {
      kl += std::exp(lp.at(r, c)) * (lp.at(r, c) - lq.at(r, c));
    }
    n.value.data[r] = kl;
  }
  return push(std::move(n));
}

int Tape::concat_cols(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Node n;
  n.op = Op::kConcatCols;
  n.a = a;
  n.b = b;
  if (va.rows != vb.rows) {
    fail(n, static_cast<int>(nodes_.size()),
         "row mismatch " + va.shape_str() + " vs " + vb.shape_str());
  }
  n.value = Tensor(va.rows, va.cols + vb.cols);
  for (std::size_t r = 0; r < va.rows; ++r) {
    for (std::size_t c = 0; c < va.cols; ++c) n.value.at(r, c) = va.at(r, c);
    for (std::size_t c = 0; c < vb.cols; ++c) {
      n.value.at(r, va.cols + c) = vb.at(r, c);
    }
  }
  return push(std::move(n));
}

int Tape::sin_(int a) {
  Node n;
  n.op = Op::kSin;
  n.a = a;
  n.value = value(a);
  for (double& v : n.value.data) v = std::sin(v);
  return push(std::move(n));
}

int Tape::cos_(int a) {
  Node n;
  n.op = Op::kCos;
  n.a = a;
  n.value = value(a);
  for (double& v : n.value.data) v = std::cos(v);
  return push(std::move(n));
}

int Tape::row_max(int a) {
  Node n;
  n.op = Op::kRowMax;
  n.a = a;
  const Tensor& va = value(a);
  n.value = Tensor(va.rows, 1);
  n.sel.resize(va.rows);
  for (std::size_t r = 0; r < va.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < va.cols; ++c) {
      if (va.at(r, c) > va.at(r, best)) best = c;
    }
    n.sel[r] = best;
    n.value.data[r] = va.at(r, best);
  }
  return push(std::move(n));
}

int Tape::row_min(int a) {
  Node n;
  n.op = Op::kRowMin;
  n.a = a;
  const Tensor& va = value(a);
  n.value = Tensor(va.rows, 1);
  n.sel.resize(va.rows);
  for (std::size_t r = 0; r < va.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < va.cols; ++c) {
      if (va.at(r, c) < va.at(r, best)) best = c;
    }
    n.sel[r] = best;
    n.value.data[r] = va.at(r, best);
  }
  return push(std::move(n));
}

void Tape::backward(int output) {
  check(output);
  Node& out = nodes_[output];
  if (out.value.numel() != 1) {
    throw Error(node_tag(out.op, output) +
                ": backward requires a scalar output, got " +
                out.value.shape_str());
  }
  for (Node& n : nodes_) {
    n.adjoint = Tensor(n.value.rows, n.value.cols);
  }
  out.adjoint.data[0] = 1.0;

  for (int id = output; id >= 0; --id) {
    Node& n = nodes_[id];
    bool touched = false;
    for (double v : n.adjoint.data) {
      if (v != 0.0) {
        touched = true;
        break;
      }
    }
    if (!touched || n.op == Op::kLeaf) continue;
    if (!n.adjoint.all_finite()) {
      throw Error(node_tag(n.op, id) + ": non-finite adjoint in backward pass");
    }
    const Tensor& g = n.adjoint;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        Tensor& da = nodes_[n.a].adjoint;
        Tensor& db = nodes_[n.b].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
        if (db.same_shape(g)) {
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            db.data[i] += g.data[i];
          }
        } else {
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) {
              db.data[c] += g.at(r, c);
            }
          }
        }
        break;
      }
      case Op::kSub: {
        Tensor& da = nodes_[n.a].adjoint;
        Tensor& db = nodes_[n.b].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
        if (db.same_shape(g)) {
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            db.data[i] -= g.data[i];
          }
        } else {
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) {
              db.data[c] -= g.at(r, c);
            }
          }
        }
        break;
      }
      case Op::kMul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].adjoint;
        Tensor& db = nodes_[n.b].adjoint;
        if (vb.same_shape(va)) {
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            da.data[i] += g.data[i] * vb.data[i];
            db.data[i] += g.data[i] * va.data[i];
          }
        } else {
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) {
              da.at(r, c) += g.at(r, c) * vb.data[c];
              db.data[c] += g.at(r, c) * va.at(r, c);
            }
          }
        }
        break;
      }
      case Op::kScale: {
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          da.data[i] += n.payload * g.data[i];
        }
        break;
      }
      case Op::kAddScalar: {
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
        break;
      }
      case Op::kMatMul: {
        kernels::matmul_a_bt(g, nodes_[n.b].value, nodes_[n.a].adjoint);
        kernels::matmul_at_b(nodes_[n.a].value, g, nodes_[n.b].adjoint);
        break;
      }
      case Op::kAffine: {
        const int bid = static_cast<int>(n.payload);
        kernels::matmul_a_bt(g, nodes_[n.b].value, nodes_[n.a].adjoint);
        kernels::matmul_at_b(nodes_[n.a].value, g, nodes_[n.b].adjoint);
        Tensor& db = nodes_[bid].adjoint;
        for (std::size_t r = 0; r < g.rows; ++r) {
          for (std::size_t c = 0; c < g.cols; ++c) db.data[c] += g.at(r, c);
        }
        break;
      }
      case Op::kRelu: {
        const Tensor& va = nodes_[n.a].value;
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          if (va.data[i] > 0.0) da.data[i] += g.data[i];
        }
        break;
      }
      case Op::kTanh: {
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          da.data[i] += g.data[i] * (1.0 - n.value.data[i] * n.value.data[i]);
        }
        break;
      }
      case Op::kExp: {
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          da.data[i] += g.data[i] * n.value.data[i];
        }
        break;
      }
      case Op::kLog: {
        const Tensor& va = nodes_[n.a].value;
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          da.data[i] += g.data[i] / va.data[i];
        }
        break;
      }
      case Op::kSqrt: {
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          da.data[i] += g.data[i] * 0.5 / n.value.data[i];
        }
        break;
      }
      case Op::kSum: {
        Tensor& da = nodes_[n.a].adjoint;
        const double gv = g.data[0];
        for (double& v : da.data) v += gv;
        break;
      }
      case Op::kMean: {
        Tensor& da = nodes_[n.a].adjoint;
        const double gv = g.data[0] / static_cast<double>(da.numel());
        for (double& v : da.data) v += gv;
        break;
      }
      case Op::kRowSum: {
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t r = 0; r < da.rows; ++r) {
          const double gv = g.data[r];
          for (std::size_t c = 0; c < da.cols; ++c) da.at(r, c) += gv;
        }
        break;
      }
      case Op::kSoftmax: {
        Tensor& da = nodes_[n.a].adjoint;
        const Tensor& y = n.value;
        for (std::size_t r = 0; r < y.rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols; ++c) {
            dot += g.at(r, c) * y.at(r, c);
          }
          for (std::size_t c = 0; c < y.cols; ++c) {
            da.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
          }
        }
        break;
      }
      case Op::kLogSoftmax: {
        Tensor& da = nodes_[n.a].adjoint;
        const Tensor& y = n.value;
        for (std::size_t r = 0; r < y.rows; ++r) {
          double gsum = 0.0;
          for (std::size_t c = 0; c < y.cols; ++c) gsum += g.at(r, c);
          for (std::size_t c = 0; c < y.cols; ++c) {
            da.at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gsum;
          }
        }
        break;
      }
      case Op::kSqNorm: {
        const Tensor& va = nodes_[n.a].value;
        Tensor& da = nodes_[n.a].adjoint;
        const double gv = g.data[0];
        for (std::size_t i = 0; i < va.data.size(); ++i) {
          da.data[i] += 2.0 * va.data[i] * gv;
        }
        break;
      }
      case Op::kKlCategorical: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].adjoint;
        Tensor& db = nodes_[n.b].adjoint;
        Tensor lp, lq;
        log_softmax_rows(va, lp);
        log_softmax_rows(vb, lq);
        for (std::size_t r = 0; r < va.rows; ++r) {
          const double gv = g.data[r];
          const double kl = n.value.data[r];
          for (std::size_t c = 0; c < va.cols; ++c) {
            const double p = std::exp(lp.at(r, c));
            const double q = std::exp(lq.at(r, c));
            da.at(r, c) += gv * p * (lp.at(r, c) - lq.at(r, c) - kl);
            db.at(r, c) += gv * (q - p);
          }
        }
        break;
      }
      case Op::kConcatCols: {
        Tensor& da = nodes_[n.a].adjoint;
        Tensor& db = nodes_[n.b].adjoint;
        for (std::size_t r = 0; r < g.rows; ++r) {
          for (std::size_t c = 0; c < da.cols; ++c) {
            da.at(r, c) += g.at(r, c);
          }
          for (std::size_t c = 0; c < db.cols; ++c) {
            db.at(r, c) += g.at(r, da.cols + c);
          }
        }
        break;
      }
      case Op::kSin: {
        const Tensor& va = nodes_[n.a].value;
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          da.data[i] += g.data[i] * std::cos(va.data[i]);
        }
        break;
      }
      case Op::kCos: {
        const Tensor& va = nodes_[n.a].value;
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          da.data[i] -= g.data[i] * std::sin(va.data[i]);
        }
        break;
      }
      case Op::kRowMax:
      case Op::kRowMin: {
        Tensor& da = nodes_[n.a].adjoint;
        for (std::size_t r = 0; r < g.rows; ++r) {
          da.at(r, n.sel[r]) += g.data[r];
        }
        break;
      }
    }
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].adjoint.all_finite()) {
      throw Error(node_tag(nodes_[id].op, static_cast<int>(id)) +
                  ": non-finite adjoint in backward pass");
    }
  }
}

ValueGrad value_and_grad(Tape& tape, int output, const std::vector<int>& wrt) {
  tape.backward(output);
  ValueGrad out;
  out.value = tape.value(output).item();
  out.grads.reserve(wrt.size());
  for (int id : wrt) out.grads.push_back(tape.adjoint(id));
  return out;
}

}  // namespace ssat
