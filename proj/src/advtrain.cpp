#include "ssat/advtrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "ssat/error.hpp"
#include "ssat/optim.hpp"

namespace ssat {

AttackNorm parse_attack_norm(const std::string& name) {
  if (name == "l-inf" || name == "linf") return AttackNorm::kLinf;
  if (name == "l2") return AttackNorm::kL2;
  throw Error("unknown attack norm '" + name + "' (expected l-inf or l2)");
}

const char* attack_norm_name(AttackNorm n) {
  return n == AttackNorm::kLinf ? "l-inf" : "l2";
}

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw ConfigError("attack epsilon must be >= 0");
  if (steps < 0) throw ConfigError("attack steps must be >= 0");
  if (steps > 0 && step_size <= 0.0) {
    throw ConfigError("attack step size must be > 0 when steps > 0");
  }
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "at") return LossMode::kAt;
  if (name == "trades") return LossMode::kTrades;
  throw Error("unknown loss mode '" + name + "' (expected at or trades)");
}

const char* loss_mode_name(LossMode m) {
  return m == LossMode::kAt ? "at" : "trades";
}

namespace {

Tensor one_hot(const std::vector<int>& labels, std::size_t class_count) {
  Tensor t(labels.size(), class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

// Gradient of the summed cross-entropy w.r.t. the perturbed input rows.
Tensor input_gradient(const MlpParams& params, const Tensor& xp,
                      const std::vector<int>& labels,
                      std::size_t class_count) {
  Tape tape;
  const MlpNodes nodes = push_params(tape, params);
  const int x_node = tape.leaf(xp);
  const ClassifierNodes cls = classifier_graph(tape, nodes, x_node);
  const int lsm = tape.log_softmax(cls.logits);
  const int picked = tape.mul(lsm, tape.constant(one_hot(labels, class_count)));
  const int loss = tape.scale(tape.sum(picked), -1.0);
  tape.backward(loss);
  return tape.adjoint(x_node);
}

void project_and_clip(const Tensor& x, Tensor& delta, const AttackConfig& cfg) {
  const std::size_t d = x.cols;
  for (std::size_t r = 0; r < x.rows; ++r) {
    double* dr = delta.data.data() + r * d;
    if (cfg.norm == AttackNorm::kLinf) {
      for (std::size_t c = 0; c < d; ++c) {
        dr[c] = std::clamp(dr[c], -cfg.epsilon, cfg.epsilon);
      }
    } else {
      double norm = 0.0;
      for (std::size_t c = 0; c < d; ++c) norm += dr[c] * dr[c];
      norm = std::sqrt(norm);
      if (norm > cfg.epsilon && norm > 0.0) {
        const double s = cfg.epsilon / norm;
        for (std::size_t c = 0; c < d; ++c) dr[c] *= s;
      }
    }
    if (cfg.clip01) {
      const double* xr = x.data.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) {
        dr[c] = std::clamp(xr[c] + dr[c], 0.0, 1.0) - xr[c];
      }
    }
  }
}

}  // namespace

Tensor pgd_attack_batch(const MlpParams& params, const Tensor& x,
                        const std::vector<int>& labels,
                        const AttackConfig& cfg, Rng& rng,
                        const AttackObserver& observer) {
  cfg.validate();
  if (labels.size() != x.rows) {
    throw Error("pgd_attack_batch: label count mismatch");
  }
  const std::size_t class_count = params.output_dim();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw Error("pgd_attack_batch: label out of range");
    }
  }
  Tensor delta(x.rows, x.cols);
  if (cfg.epsilon == 0.0) return delta;

  if (cfg.random_start) {
    for (std::size_t r = 0; r < x.rows; ++r) {
      double* dr = delta.data.data() + r * x.cols;
      if (cfg.norm == AttackNorm::kLinf) {
        for (std::size_t c = 0; c < x.cols; ++c) {
          dr[c] = rng.uniform(-cfg.epsilon, cfg.epsilon);
        }
      } else {
        double norm = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) {
          dr[c] = rng.normal();
          norm += dr[c] * dr[c];
        }
        norm = std::sqrt(norm);
        const double radius =
            cfg.epsilon *
            std::pow(rng.uniform01(), 1.0 / static_cast<double>(x.cols));
        if (norm > 0.0) {
          for (std::size_t c = 0; c < x.cols; ++c) dr[c] *= radius / norm;
        }
      }
    }
    project_and_clip(x, delta, cfg);
  }
  if (observer) observer(delta);

  Tensor xp(x.rows, x.cols);
  for (int iter = 0; iter < cfg.steps; ++iter) {
    for (std::size_t i = 0; i < xp.data.size(); ++i) {
      xp.data[i] = x.data[i] + delta.data[i];
    }
    const Tensor grad = input_gradient(params, xp, labels, class_count);
    if (!grad.all_finite()) {
      throw Error("pgd_attack_batch: non-finite input gradient");
    }
    for (std::size_t r = 0; r < x.rows; ++r) {
      double* dr = delta.data.data() + r * x.cols;
      const double* gr = grad.data.data() + r * x.cols;
      if (cfg.norm == AttackNorm::kLinf) {
        for (std::size_t c = 0; c < x.cols; ++c) {
          const double s = gr[c] > 0.0 ? 1.0 : (gr[c] < 0.0 ? -1.0 : 0.0);
          dr[c] += cfg.step_size * s;
        }
      } else {
        double norm = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) norm += gr[c] * gr[c];
        norm = std::sqrt(norm);
        if (norm > 0.0) {
          for (std::size_t c = 0; c < x.cols; ++c) {
            dr[c] += cfg.step_size * gr[c] / norm;
          }
        }
      }
    }
    project_and_clip(x, delta, cfg);
    if (observer) observer(delta);
  }
  return delta;
}

Tensor pgd_attack(const MlpParams& params, const Tensor& x_row, int label,
                  const AttackConfig& cfg, const AttackObserver& observer) {
  Rng rng(cfg.seed);
  return pgd_attack_batch(params, x_row, {label}, cfg, rng, observer);
}

int adversarial_loss_graph(Tape& tape, const MlpNodes& nodes, const Tensor& x,
                           const Tensor& delta, const std::vector<int>& labels,
                           std::size_t class_count, LossMode mode, double w) {
  Tensor xp = x;
  for (std::size_t i = 0; i < xp.data.size(); ++i) {
    xp.data[i] += delta.data[i];
  }
  const double inv_n = 1.0 / static_cast<double>(x.rows);
  const int onehot = tape.constant(one_hot(labels, class_count));
  if (mode == LossMode::kAt) {
    const int adv_logits =
        classifier_graph(tape, nodes, tape.constant(std::move(xp))).logits;
    const int picked = tape.mul(tape.log_softmax(adv_logits), onehot);
    return tape.scale(tape.sum(picked), -inv_n);
  }
  const int clean_logits =
      classifier_graph(tape, nodes, tape.constant(x)).logits;
  const int adv_logits =
      classifier_graph(tape, nodes, tape.constant(std::move(xp))).logits;
  const int picked = tape.mul(tape.log_softmax(clean_logits), onehot);
  const int ce = tape.scale(tape.sum(picked), -inv_n);
  const int kl = tape.mean(tape.kl_categorical(clean_logits, adv_logits));
  return tape.add(ce, tape.scale(kl, w));
}

double adversarial_loss(const MlpParams& params, const Tensor& x,
                        const std::vector<int>& labels,
                        const AttackConfig& cfg, LossMode mode, double w) {
  Rng rng(cfg.seed);
  const Tensor delta = pgd_attack_batch(params, x, labels, cfg, rng);
  Tape tape;
  const MlpNodes nodes = push_params(tape, params);
  const int loss = adversarial_loss_graph(tape, nodes, x, delta, labels,
                                          params.output_dim(), mode, w);
  return tape.value(loss).item();
}

Batch make_batch(const Tensor& labeled_x, const std::vector<int>& labeled_y,
                 const Tensor& unlabeled_x,
                 const std::vector<int>& pseudo_labels, double gamma,
                 std::size_t batch_size, Rng& rng) {
  if (gamma < 0.0 || gamma > 1.0) {
    throw Error("make_batch: gamma must be in [0, 1]");
  }
  const std::size_t n_labeled = static_cast<std::size_t>(
      std::lround(gamma * static_cast<double>(batch_size)));
  const std::size_t n_unlabeled = batch_size - n_labeled;
  if (n_labeled > 0 && labeled_x.rows == 0) {
    throw Error("make_batch: labeled pool is empty");
  }
  if (n_unlabeled > 0 && unlabeled_x.rows == 0) {
    throw Error("make_batch: unlabeled pool is empty");
  }
  const std::size_t d = n_labeled > 0 ? labeled_x.cols : unlabeled_x.cols;
  Batch batch;
  batch.x = Tensor(batch_size, d);
  batch.labels.resize(batch_size);
  batch.labeled_count = n_labeled;
  for (std::size_t i = 0; i < n_labeled; ++i) {
    const std::size_t src = rng.below(labeled_x.rows);
    for (std::size_t c = 0; c < d; ++c) {
      batch.x.at(i, c) = labeled_x.at(src, c);
    }
    batch.labels[i] = labeled_y[src];
  }
  for (std::size_t i = 0; i < n_unlabeled; ++i) {
    const std::size_t src = rng.below(unlabeled_x.rows);
    for (std::size_t c = 0; c < d; ++c) {
      batch.x.at(n_labeled + i, c) = unlabeled_x.at(src, c);
    }
    batch.labels[n_labeled + i] = pseudo_labels[src];
  }
  return batch;
}

void TrainConfig::validate() const {
  if (gamma < 0.0 || gamma > 1.0) {
    throw ConfigError("train gamma must be in [0, 1]");
  }
  if (batch_size < 2 && gamma > 0.0 && gamma < 1.0) {
    throw ConfigError("train batch size must be >= 2 when 0 < gamma < 1");
  }
  if (batch_size == 0) throw ConfigError("train batch size must be >= 1");
  if (epochs < 0) throw ConfigError("train epochs must be >= 0");
  if (checkpoint_interval < 1) {
    throw ConfigError("checkpoint interval must be >= 1");
  }
}

EvalResult evaluate(const MlpParams& params, const Dataset& test,
                    const AttackConfig& attack) {
  attack.validate();
  if (test.size() == 0) throw Error("evaluate: empty test set");
  const std::vector<int>& labels = test.labels();
  const Tensor& x = test.features();

  const ClassifierOutput clean = classifier_forward(params, x);
  std::size_t clean_ok = 0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (static_cast<int>(argmax_row(clean.logits, i)) == labels[i]) {
      ++clean_ok;
    }
  }

  Rng rng(attack.seed);
  const Tensor delta = pgd_attack_batch(params, x, labels, attack, rng);
  Tensor xp = x;
  for (std::size_t i = 0; i < xp.data.size(); ++i) {
    xp.data[i] += delta.data[i];
  }
  const ClassifierOutput adv = classifier_forward(params, xp);
  std::size_t robust_ok = 0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (static_cast<int>(argmax_row(adv.logits, i)) == labels[i]) {
      ++robust_ok;
    }
  }
  const double n = static_cast<double>(x.rows);
  return {static_cast<double>(clean_ok) / n,
          static_cast<double>(robust_ok) / n};
}

TrainResult ssat_train(const Dataset& labeled, const Tensor& unlabeled_x,
                       const std::vector<int>& pseudo_labels,
                       const TrainConfig& cfg, const AttackConfig& train_attack,
                       const AttackConfig& eval_attack,
                       const Dataset& validation) {
  cfg.validate();
  train_attack.validate();
  eval_attack.validate();
  if (labeled.size() == 0) throw Error("ssat_train: empty labeled set");
  if (unlabeled_x.rows != pseudo_labels.size()) {
    throw Error("ssat_train: pseudo-label count mismatch");
  }
  if (cfg.gamma < 1.0 && unlabeled_x.rows == 0) {
    throw Error("ssat_train: gamma < 1 requires unlabeled data");
  }

  const std::size_t class_count = labeled.class_count();
  std::vector<std::size_t> dims;
  dims.push_back(labeled.dim());
  for (std::size_t h : cfg.hidden) dims.push_back(h);
  dims.push_back(class_count);

  TrainResult result;
  MlpParams params =
      make_mlp(dims, Activation::kRelu, splitmix64(cfg.seed + 0x7a1));
  Rng train_rng(splitmix64(cfg.seed + 0x7a2));

  const std::size_t epoch_len =
      cfg.epoch_length > 0 ? cfg.epoch_length : labeled.size();
  const std::size_t steps_per_epoch =
      (epoch_len + cfg.batch_size - 1) / cfg.batch_size;

  result.best_robust_acc = -1.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      Batch batch = make_batch(labeled.features(), labeled.labels(),
                               unlabeled_x, pseudo_labels, cfg.gamma,
                               cfg.batch_size, train_rng);
      const Tensor delta = pgd_attack_batch(params, batch.x, batch.labels,
                                            train_attack, train_rng);
      Tape tape;
      const MlpNodes nodes = push_params(tape, params);
      const int loss =
          adversarial_loss_graph(tape, nodes, batch.x, delta, batch.labels,
                                 class_count, cfg.mode, cfg.trades_weight);
      const ValueGrad vg = value_and_grad(tape, loss, nodes.all);
      loss_sum += vg.value;
      params.unflatten(
          sgd_step(params.flatten(), vg.grads, lr, cfg.weight_decay));
    }

    const EvalResult ev = evaluate(params, validation, eval_attack);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss =
        steps_per_epoch > 0 ? loss_sum / static_cast<double>(steps_per_epoch)
                            : 0.0;
    rec.clean_acc = ev.clean_acc;
    rec.robust_acc = ev.robust_acc;
    rec.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.curve.push_back(rec);

    const bool checkpoint = ((epoch + 1) % cfg.checkpoint_interval == 0) ||
                            (epoch + 1 == cfg.epochs);
    if (checkpoint && ev.robust_acc > result.best_robust_acc) {
      result.best_robust_acc = ev.robust_acc;
      result.best_epoch = epoch + 1;
      result.params = params;
    }
  }
  if (cfg.epochs == 0) {
    result.params = params;
    result.best_epoch = 0;
    result.best_robust_acc = 0.0;
  }
  return result;
}

void write_curve_csv(const std::vector<EpochRecord>& curve,
                     const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("write_curve_csv: cannot open '" + path + "'");
  f.precision(17);
  f << "epoch,lr,train_loss,clean_acc,robust_acc,elapsed_seconds\n";
  for (const EpochRecord& r : curve) {
    f << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.clean_acc
      << ',' << r.robust_acc << ',' << r.elapsed_seconds << '\n';
  }
  if (!f) throw Error("write_curve_csv: write failed for '" + path + "'");
}

}  // namespace ssat
