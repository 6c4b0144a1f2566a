#pragma once

#include <string>
#include <vector>

#include "ssat/rng.hpp"
#include "ssat/tape.hpp"
#include "ssat/tensor.hpp"

namespace ssat {

enum class Activation { kRelu, kTanh };

// Fully connected network. Layer i maps dims[i] -> dims[i+1]; the hidden
// activation is applied after every layer except the last.
struct MlpParams {
  std::vector<Tensor> weights;  // in x out
  std::vector<Tensor> biases;   // 1 x out
  Activation hidden_act = Activation::kRelu;

  std::size_t layer_count() const { return weights.size(); }
  std::size_t input_dim() const { return weights.front().rows; }
  std::size_t output_dim() const { return weights.back().cols; }
  // Width of the penultimate layer (the latent embedding).
  std::size_t latent_dim() const { return weights.back().rows; }

  std::vector<Tensor> flatten() const;
  void unflatten(const std::vector<Tensor>& tensors);
};

// Glorot-uniform initialization, deterministic given the seed.
MlpParams make_mlp(const std::vector<std::size_t>& dims, Activation act,
                   std::uint64_t seed);

struct ClassifierOutput {
  Tensor logits;  // n x C
  Tensor latent;  // n x m, activations feeding the final affine layer
};

// Plain (non-tape) forward pass over a batch of rows.
ClassifierOutput classifier_forward(const MlpParams& params, const Tensor& x);

// Tape forward; returns {logits node, latent node}. param_nodes must come
// from push_params on the same tape.
struct MlpNodes {
  std::vector<int> weights;
  std::vector<int> biases;
  std::vector<int> all;  // weights and biases interleaved per layer
};
MlpNodes push_params(Tape& tape, const MlpParams& params);
struct ClassifierNodes {
  int logits;
  int latent;
};
ClassifierNodes classifier_graph(Tape& tape, const MlpNodes& nodes, int x);

// argmax with lowest-index tie breaking.
std::size_t argmax_row(const Tensor& logits, std::size_t row);
int pseudo_label(const MlpParams& params, const Tensor& x_row);
std::vector<int> predict_labels(const MlpParams& params, const Tensor& x);
// Max softmax probability, in (0, 1].
double confidence(const Tensor& logits_row);
Tensor softmax_row(const Tensor& logits_row);

// Sinusoidal embedding of t/T; kTimeEmbedDim columns.
constexpr std::size_t kTimeEmbedDim = 9;
Tensor time_embedding(const std::vector<int>& ts, int total_steps);

// Noise prediction for a batch: rows of x paired with per-row timesteps.
Tensor noise_forward(const MlpParams& params, const Tensor& x,
                     const std::vector<int>& ts, int total_steps);
int noise_graph(Tape& tape, const MlpNodes& nodes, int x, int time_embed);

struct FitConfig {
  int epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {64, 64};
};

struct FitResult {
  MlpParams params;
  std::vector<double> epoch_losses;
};

// Minimizes mean cross-entropy with SGD + cosine annealing over shuffled
// minibatches. Deterministic given the seed.
FitResult train_intermediate(const Tensor& x, const std::vector<int>& labels,
                             std::size_t class_count, const FitConfig& config);

// Binary weight file: magic, version byte, layer count, per-layer dims,
// then row-major float64 little-endian weights and biases.
void save_mlp(const MlpParams& params, const std::string& path);
MlpParams load_mlp(const std::string& path, Activation act);

}  // namespace ssat
