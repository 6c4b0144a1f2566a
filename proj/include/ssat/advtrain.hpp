#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssat/data.hpp"
#include "ssat/mlp.hpp"
#include "ssat/rng.hpp"

namespace ssat {

enum class AttackNorm { kLinf, kL2 };

AttackNorm parse_attack_norm(const std::string& name);
const char* attack_norm_name(AttackNorm n);

struct AttackConfig {
  AttackNorm norm = AttackNorm::kLinf;
  double epsilon = 0.05;
  double step_size = 0.0125;
  int steps = 10;
  bool random_start = true;
  bool clip01 = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Called with the projected perturbation after the random start and after
// every PGD iteration (used by tests to check the norm bound throughout).
using AttackObserver = std::function<void(const Tensor& delta)>;

// Multi-step PGD maximizing cross-entropy at the given labels. Rows are
// attacked independently: sign steps for l-inf, normalized-gradient steps
// for l2, each followed by projection into the epsilon ball and optional
// clipping of x+delta into [0,1]^d. Random starts are drawn from rng in row
// order before the iterations, which keeps results independent of thread
// count.
Tensor pgd_attack_batch(const MlpParams& params, const Tensor& x,
                        const std::vector<int>& labels,
                        const AttackConfig& cfg, Rng& rng,
                        const AttackObserver& observer = nullptr);

// Single-example variant seeded from cfg.seed; returns a 1 x d perturbation.
Tensor pgd_attack(const MlpParams& params, const Tensor& x_row, int label,
                  const AttackConfig& cfg,
                  const AttackObserver& observer = nullptr);

enum class LossMode { kAt, kTrades };

LossMode parse_loss_mode(const std::string& name);
const char* loss_mode_name(LossMode m);

// Mean adversarial loss of a batch: cross-entropy at x+delta for kAt, or
// clean cross-entropy plus w * KL(f(x) || f(x+delta)) for kTrades. The
// perturbation comes from pgd_attack_batch seeded with cfg.seed.
double adversarial_loss(const MlpParams& params, const Tensor& x,
                        const std::vector<int>& labels,
                        const AttackConfig& cfg, LossMode mode, double w);

// Tape version used by the training loop; delta enters as a constant.
int adversarial_loss_graph(Tape& tape, const MlpNodes& nodes, const Tensor& x,
                           const Tensor& delta, const std::vector<int>& labels,
                           std::size_t class_count, LossMode mode, double w);

struct Batch {
  Tensor x;
  std::vector<int> labels;
  std::size_t labeled_count = 0;
};

// round(gamma * b) labeled rows then b - that unlabeled rows, each drawn
// uniformly with replacement from its pool.
Batch make_batch(const Tensor& labeled_x, const std::vector<int>& labeled_y,
                 const Tensor& unlabeled_x,
                 const std::vector<int>& pseudo_labels, double gamma,
                 std::size_t batch_size, Rng& rng);

struct TrainConfig {
  double gamma = 0.5;
  std::size_t batch_size = 128;
  int epochs = 40;
  std::size_t epoch_length = 0;  // examples per epoch; 0 means |labeled|
  int checkpoint_interval = 1;
  LossMode mode = LossMode::kTrades;
  double trades_weight = 6.0;
  double lr = 0.1;
  double weight_decay = 5e-4;
  std::vector<std::size_t> hidden = {64, 64};
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double elapsed_seconds = 0.0;
};

struct TrainResult {
  MlpParams params;  // checkpoint with the highest robust accuracy
  int best_epoch = 0;
  double best_robust_acc = 0.0;
  std::vector<EpochRecord> curve;
};

// SSAT: every batch mixes labeled and pseudo-labeled rows by gamma, the
// inner maximization runs train_attack, and the model is fit with SGD +
// cosine annealing. Per-epoch clean/robust accuracy is measured on the
// validation set with eval_attack; the best-robust checkpoint is returned
// (earliest epoch on ties, sampled every checkpoint_interval epochs).
TrainResult ssat_train(const Dataset& labeled, const Tensor& unlabeled_x,
                       const std::vector<int>& pseudo_labels,
                       const TrainConfig& cfg, const AttackConfig& train_attack,
                       const AttackConfig& eval_attack,
                       const Dataset& validation);

struct EvalResult {
  double clean_acc = 0.0;
  double robust_acc = 0.0;
};

// Clean accuracy, and accuracy under a PGD perturbation of each test row.
EvalResult evaluate(const MlpParams& params, const Dataset& test,
                    const AttackConfig& attack);

void write_curve_csv(const std::vector<EpochRecord>& curve,
                     const std::string& path);

}  // namespace ssat
