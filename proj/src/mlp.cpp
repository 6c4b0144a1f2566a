#include "ssat/mlp.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "ssat/error.hpp"
#include "ssat/optim.hpp"

namespace ssat {

namespace {

constexpr char kMagic[7] = {'S', 'S', 'A', 'T', 'M', 'L', 'P'};
constexpr std::uint8_t kVersion = 1;
constexpr double kPi = 3.14159265358979323846;

void apply_activation(Tensor& t, Activation act) {
  if (act == Activation::kRelu) {
    for (double& v : t.data) v = v > 0.0 ? v : 0.0;
  } else {
    for (double& v : t.data) v = std::tanh(v);
  }
}

}  // namespace

std::vector<Tensor> MlpParams::flatten() const {
  std::vector<Tensor> out;
  out.reserve(weights.size() * 2);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

void MlpParams::unflatten(const std::vector<Tensor>& tensors) {
  if (tensors.size() != weights.size() * 2) {
    throw Error("MlpParams::unflatten: tensor count mismatch");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = tensors[2 * i];
    biases[i] = tensors[2 * i + 1];
  }
}

MlpParams make_mlp(const std::vector<std::size_t>& dims, Activation act,
                   std::uint64_t seed) {
  if (dims.size() < 2) throw Error("make_mlp: need at least input and output");
  MlpParams p;
  p.hidden_act = act;
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i];
    const std::size_t fan_out = dims[i + 1];
    const double bound =
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w(fan_in, fan_out);
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(1, fan_out);
  }
  return p;
}

ClassifierOutput classifier_forward(const MlpParams& params, const Tensor& x) {
  if (x.cols != params.input_dim()) {
    throw Error("classifier_forward: input dim " + std::to_string(x.cols) +
                " does not match model dim " +
                std::to_string(params.input_dim()));
  }
  Tensor h = x;
  Tensor latent;
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    Tensor next;
    kernels::matmul(h, params.weights[i], next);
    for (std::size_t r = 0; r < next.rows; ++r) {
      for (std::size_t c = 0; c < next.cols; ++c) {
        next.at(r, c) += params.biases[i].data[c];
      }
    }
    if (i + 1 < params.layer_count()) {
      apply_activation(next, params.hidden_act);
      latent = next;
    }
    h = std::move(next);
  }
  if (params.layer_count() == 1) latent = x;
  if (!h.all_finite()) throw Error("classifier_forward: non-finite logits");
  return {std::move(h), std::move(latent)};
}

MlpNodes push_params(Tape& tape, const MlpParams& params) {
  MlpNodes nodes;
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    nodes.weights.push_back(tape.leaf(params.weights[i]));
    nodes.biases.push_back(tape.leaf(params.biases[i]));
    nodes.all.push_back(nodes.weights.back());
    nodes.all.push_back(nodes.biases.back());
  }
  return nodes;
}

namespace {

int mlp_graph(Tape& tape, const MlpNodes& nodes, int x, Activation act,
              int* latent_out) {
  int h = x;
  int latent = x;
  const std::size_t layers = nodes.weights.size();
  for (std::size_t i = 0; i < layers; ++i) {
    h = tape.affine(h, nodes.weights[i], nodes.biases[i]);
    if (i + 1 < layers) {
      h = act == Activation::kRelu ? tape.relu(h) : tape.tanh_(h);
      latent = h;
    }
  }
  if (latent_out != nullptr) *latent_out = latent;
  return h;
}

}  // namespace

ClassifierNodes classifier_graph(Tape& tape, const MlpNodes& nodes, int x) {
  ClassifierNodes out{};
  out.logits = mlp_graph(tape, nodes, x, Activation::kRelu, &out.latent);
  return out;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols; ++c) {
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  }
  return best;
}

int pseudo_label(const MlpParams& params, const Tensor& x_row) {
  const ClassifierOutput out = classifier_forward(params, x_row);
  return static_cast<int>(argmax_row(out.logits, 0));
}

std::vector<int> predict_labels(const MlpParams& params, const Tensor& x) {
  const ClassifierOutput out = classifier_forward(params, x);
  std::vector<int> labels(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    labels[i] = static_cast<int>(argmax_row(out.logits, i));
  }
  return labels;
}

Tensor softmax_row(const Tensor& logits_row) {
  Tensor p(1, logits_row.cols);
  double m = logits_row.data[0];
  for (double v : logits_row.data) m = std::max(m, v);
  double z = 0.0;
  for (std::size_t c = 0; c < logits_row.cols; ++c) {
    p.data[c] = std::exp(logits_row.data[c] - m);
    z += p.data[c];
  }
  for (double& v : p.data) v /= z;
  return p;
}

double confidence(const Tensor& logits_row) {
  const Tensor p = softmax_row(logits_row);
  double best = p.data[0];
  for (double v : p.data) best = std::max(best, v);
  return best;
}

Tensor time_embedding(const std::vector<int>& ts, int total_steps) {
  Tensor e(ts.size(), kTimeEmbedDim);
  for (std::size_t r = 0; r < ts.size(); ++r) {
    const double u =
        static_cast<double>(ts[r]) / static_cast<double>(total_steps);
    e.at(r, 0) = u;
    for (std::size_t j = 0; j < 4; ++j) {
      const double w = kPi * static_cast<double>(1u << j) * u;
      e.at(r, 1 + 2 * j) = std::sin(w);
      e.at(r, 2 + 2 * j) = std::cos(w);
    }
  }
  return e;
}

Tensor noise_forward(const MlpParams& params, const Tensor& x,
                     const std::vector<int>& ts, int total_steps) {
  if (ts.size() != x.rows) {
    throw Error("noise_forward: timestep count does not match batch rows");
  }
  for (int t : ts) {
    if (t < 1 || t > total_steps) {
      throw Error("noise_forward: timestep " + std::to_string(t) +
                  " out of range [1, " + std::to_string(total_steps) + "]");
    }
  }
  const Tensor emb = time_embedding(ts, total_steps);
  Tensor in(x.rows, x.cols + emb.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) in.at(r, c) = x.at(r, c);
    for (std::size_t c = 0; c < emb.cols; ++c) {
      in.at(r, x.cols + c) = emb.at(r, c);
    }
  }
  Tensor h = in;
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    Tensor next;
    kernels::matmul(h, params.weights[i], next);
    for (std::size_t r = 0; r < next.rows; ++r) {
      for (std::size_t c = 0; c < next.cols; ++c) {
        next.at(r, c) += params.biases[i].data[c];
      }
    }
    if (i + 1 < params.layer_count()) {
      apply_activation(next, params.hidden_act);
    }
    h = std::move(next);
  }
  if (!h.all_finite()) throw Error("noise_forward: non-finite output");
  return h;
}

int noise_graph(Tape& tape, const MlpNodes& nodes, int x, int time_embed) {
  const int in = tape.concat_cols(x, time_embed);
  return mlp_graph(tape, nodes, in, Activation::kTanh, nullptr);
}

FitResult train_intermediate(const Tensor& x, const std::vector<int>& labels,
                             std::size_t class_count,
                             const FitConfig& config) {
  if (x.rows == 0) throw Error("train_intermediate: empty dataset");
  if (labels.size() != x.rows) {
    throw Error("train_intermediate: label count mismatch");
  }
  std::vector<std::size_t> dims;
  dims.push_back(x.cols);
  for (std::size_t h : config.hidden) dims.push_back(h);
  dims.push_back(class_count);
  FitResult result;
  result.params = make_mlp(dims, Activation::kRelu, splitmix64(config.seed));
  Rng rng(splitmix64(config.seed + 1));

  std::vector<std::size_t> order(x.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t b = std::max<std::size_t>(1, config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = cosine_lr(epoch, std::max(config.epochs, 1), config.lr);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < x.rows; start += b) {
      const std::size_t count = std::min(b, x.rows - start);
      Tensor bx(count, x.cols);
      Tensor onehot(count, class_count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[start + i];
        for (std::size_t c = 0; c < x.cols; ++c) {
          bx.at(i, c) = x.at(src, c);
        }
        onehot.at(i, static_cast<std::size_t>(labels[src])) = 1.0;
      }
      Tape tape;
      const MlpNodes nodes = push_params(tape, result.params);
      const int bx_node = tape.constant(std::move(bx));
      const ClassifierNodes cls = classifier_graph(tape, nodes, bx_node);
      const int lsm = tape.log_softmax(cls.logits);
      const int picked = tape.mul(lsm, tape.constant(std::move(onehot)));
      const int loss = tape.scale(tape.sum(picked),
                                  -1.0 / static_cast<double>(count));
      const ValueGrad vg = value_and_grad(tape, loss, nodes.all);
      loss_sum += vg.value;
      ++batches;
      result.params.unflatten(sgd_step(result.params.flatten(), vg.grads, lr,
                                       config.weight_decay));
    }
    result.epoch_losses.push_back(batches > 0 ? loss_sum / batches : 0.0);
    if (!std::isfinite(result.epoch_losses.back())) {
      throw Error("train_intermediate: non-finite loss at epoch " +
                  std::to_string(epoch));
    }
  }
  return result;
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ofstream& f, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
      b[i] = static_cast<unsigned char>(bits >> (8 * i));
    }
    f.write(reinterpret_cast<const char*>(b), 8);
  }
}

void read_f64(std::ifstream& f, std::vector<double>& v) {
  for (double& d : v) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    std::memcpy(&d, &bits, 8);
  }
}

}  // namespace

void save_mlp(const MlpParams& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("save_mlp: cannot open '" + path + "' for writing");
  f.write(kMagic, sizeof(kMagic));
  f.put(static_cast<char>(kVersion));
  write_u32(f, static_cast<std::uint32_t>(params.layer_count()));
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    write_u32(f, static_cast<std::uint32_t>(params.weights[i].rows));
    write_u32(f, static_cast<std::uint32_t>(params.weights[i].cols));
  }
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    write_f64(f, params.weights[i].data);
    write_f64(f, params.biases[i].data);
  }
  if (!f) throw Error("save_mlp: write failed for '" + path + "'");
}

MlpParams load_mlp(const std::string& path, Activation act) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("load_mlp: cannot open '" + path + "'");
  char magic[sizeof(kMagic)];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("load_mlp: bad magic in '" + path + "'");
  }
  const int version = f.get();
  if (version != kVersion) {
    throw Error("load_mlp: unsupported version " + std::to_string(version));
  }
  const std::uint32_t layers = read_u32(f);
  if (layers == 0 || layers > 64) {
    throw Error("load_mlp: implausible layer count");
  }
  MlpParams p;
  p.hidden_act = act;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(layers);
  for (auto& d : dims) {
    d.first = read_u32(f);
    d.second = read_u32(f);
  }
  for (auto& d : dims) {
    Tensor w(d.first, d.second);
    Tensor b(1, d.second);
    read_f64(f, w.data);
    read_f64(f, b.data);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  if (!f) throw Error("load_mlp: truncated file '" + path + "'");
  return p;
}

}  // namespace ssat
