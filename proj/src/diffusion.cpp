#include "ssat/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "ssat/error.hpp"
#include "ssat/optim.hpp"

namespace ssat {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void DiffusionSchedule::check_t(int t) const {
  if (t < 1 || t > total_steps) {
    throw Error("diffusion: timestep " + std::to_string(t) +
                " out of range [1, " + std::to_string(total_steps) + "]");
  }
}

DiffusionSchedule make_schedule(int total_steps, double beta_first,
                                double beta_last) {
  if (total_steps < 1) throw Error("make_schedule: T must be >= 1");
  if (!(beta_first > 0.0 && beta_first <= beta_last && beta_last < 1.0)) {
    throw Error("make_schedule: need 0 < beta_first <= beta_last < 1");
  }
  DiffusionSchedule s;
  s.total_steps = total_steps;
  s.beta.resize(total_steps);
  s.alpha.resize(total_steps);
  s.alpha_bar.resize(total_steps);
  double running = 1.0;
  for (int t = 0; t < total_steps; ++t) {
    const double frac =
        total_steps == 1
            ? 0.0
            : static_cast<double>(t) / static_cast<double>(total_steps - 1);
    s.beta[t] = beta_first + (beta_last - beta_first) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    running *= s.alpha[t];
    s.alpha_bar[t] = running;
  }
  return s;
}

Tensor forward_sample(const Tensor& x0, const std::vector<int>& ts,
                      const Tensor& eps, const DiffusionSchedule& schedule) {
  if (ts.size() != x0.rows || !x0.same_shape(eps)) {
    throw Error("forward_sample: shape mismatch");
  }
  Tensor out(x0.rows, x0.cols);
  for (std::size_t r = 0; r < x0.rows; ++r) {
    schedule.check_t(ts[r]);
    const double ab = schedule.alpha_bar_at(ts[r]);
    const double ca = std::sqrt(ab);
    const double cb = std::sqrt(1.0 - ab);
    for (std::size_t c = 0; c < x0.cols; ++c) {
      out.at(r, c) = ca * x0.at(r, c) + cb * eps.at(r, c);
    }
  }
  return out;
}

Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps,
                      const DiffusionSchedule& schedule) {
  return forward_sample(x0, std::vector<int>(x0.rows, t), eps, schedule);
}

double ddpm_loss_core(const Tensor& eps, const Tensor& eps_hat) {
  if (!eps.same_shape(eps_hat)) throw Error("ddpm_loss_core: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.data.size(); ++i) {
    const double d = eps.data[i] - eps_hat.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.rows);
}

double ddpm_loss(const MlpParams& params, const Tensor& x0,
                 const DiffusionSchedule& schedule, Rng& rng) {
  if (x0.rows == 0) throw Error("ddpm_loss: empty batch");
  std::vector<int> ts(x0.rows);
  for (std::size_t r = 0; r < x0.rows; ++r) {
    ts[r] = 1 + static_cast<int>(rng.below(schedule.total_steps));
  }
  Tensor eps(x0.rows, x0.cols);
  for (double& v : eps.data) v = rng.normal();
  const Tensor x_t = forward_sample(x0, ts, eps, schedule);
  const Tensor eps_hat =
      noise_forward(params, x_t, ts, schedule.total_steps);
  return ddpm_loss_core(eps, eps_hat);
}

Tensor reverse_step(const MlpParams& params, const Tensor& x_t, int t,
                    const Tensor& noise, const DiffusionSchedule& schedule) {
  schedule.check_t(t);
  const Tensor eps_hat =
      noise_forward(params, x_t, std::vector<int>(x_t.rows, t),
                    schedule.total_steps);
  const double a = schedule.alpha_at(t);
  const double ab = schedule.alpha_bar_at(t);
  const double c1 = (1.0 - a) / std::sqrt(1.0 - ab);
  const double c2 = 1.0 / std::sqrt(a);
  const double sigma = t > 1 ? std::sqrt(schedule.beta_at(t)) : 0.0;
  Tensor out(x_t.rows, x_t.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = c2 * (x_t.data[i] - c1 * eps_hat.data[i]);
    if (sigma > 0.0) out.data[i] += sigma * noise.data[i];
  }
  return out;
}

Tensor sample(const MlpParams& params, std::size_t n, std::size_t dim,
              const DiffusionSchedule& schedule, std::uint64_t seed) {
  Tensor x(n, dim);
  if (n == 0) return x;
  Rng rng(seed);
  for (double& v : x.data) v = rng.normal();
  Tensor noise(n, dim);
  for (int t = schedule.total_steps; t >= 1; --t) {
    if (t > 1) {
      for (double& v : noise.data) v = rng.normal();
    }
    x = reverse_step(params, x, t, noise, schedule);
  }
  return x;
}

GuidanceMode parse_guidance_mode(const std::string& name) {
  if (name == "pcg") return GuidanceMode::kPcg;
  if (name == "lcg-km") return GuidanceMode::kLcgKm;
  if (name == "lcg-gmm") return GuidanceMode::kLcgGmm;
  throw Error("unknown guidance mode '" + name +
              "' (expected pcg, lcg-km, or lcg-gmm)");
}

const char* guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::kPcg: return "pcg";
    case GuidanceMode::kLcgKm: return "lcg-km";
    case GuidanceMode::kLcgGmm: return "lcg-gmm";
  }
  return "?";
}

namespace {

void require_context(GuidanceMode mode, const GuidanceContext& ctx) {
  if (ctx.classifier == nullptr) {
    throw Error("guidance: missing intermediate classifier");
  }
  if (mode == GuidanceMode::kLcgKm && ctx.kmeans == nullptr) {
    throw Error("guidance: lcg-km requires a fitted k-means model");
  }
  if (mode == GuidanceMode::kLcgGmm && ctx.gmm == nullptr) {
    throw Error("guidance: lcg-gmm requires a fitted GMM");
  }
}

}  // namespace

double guidance_loss(GuidanceMode mode, const Tensor& x_row,
                     const GuidanceContext& ctx) {
  require_context(mode, ctx);
  const ClassifierOutput fwd = classifier_forward(*ctx.classifier, x_row);
  switch (mode) {
    case GuidanceMode::kPcg:
      return confidence(fwd.logits);
    case GuidanceMode::kLcgKm:
      return kmeans_boundary_score(fwd.latent, *ctx.kmeans);
    case GuidanceMode::kLcgGmm:
      return gmm_boundary_score(fwd.latent, *ctx.gmm).delta;
  }
  return 0.0;
}

double guidance_loss_mean(GuidanceMode mode, const Tensor& x,
                          const GuidanceContext& ctx) {
  if (x.rows == 0) throw Error("guidance_loss_mean: empty batch");
  double acc = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    acc += guidance_loss(mode, x.extract_row(r), ctx);
  }
  return acc / static_cast<double>(x.rows);
}

namespace {

constexpr double kMaskBig = 1e30;

// Mean guidance loss of the rows of x_node, differentiable through the
// classifier. Argmin/argmax picks are frozen from the current forward
// values, which is exact away from ties.
int guidance_graph(Tape& tape, GuidanceMode mode, int x_node,
                   const GuidanceContext& ctx) {
  const MlpNodes cls_nodes = push_params(tape, *ctx.classifier);
  const ClassifierNodes cls = classifier_graph(tape, cls_nodes, x_node);
  switch (mode) {
    case GuidanceMode::kPcg: {
      const int conf = tape.row_max(tape.softmax(cls.logits));
      return tape.mean(conf);
    }
    case GuidanceMode::kLcgKm: {
      const KMeansModel& km = *ctx.kmeans;
      int dists = -1;
      for (std::size_t j = 0; j < km.k(); ++j) {
        const int mu = tape.constant(km.centroids.extract_row(j));
        const int diff = tape.sub(cls.latent, mu);
        const int d = tape.sqrt_(tape.row_sum(tape.mul(diff, diff)));
        dists = j == 0 ? d : tape.concat_cols(dists, d);
      }
      const int d1 = tape.row_min(dists);
      const Tensor& dv = tape.value(dists);
      Tensor mask(dv.rows, dv.cols);
      for (std::size_t r = 0; r < dv.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < dv.cols; ++c) {
          if (dv.at(r, c) < dv.at(r, best)) best = c;
        }
        mask.at(r, best) = kMaskBig;
      }
      const int d2 = tape.row_min(tape.add(dists, tape.constant(mask)));
      return tape.mean(tape.sub(d2, d1));
    }
    case GuidanceMode::kLcgGmm: {
      const GmmModel& gm = *ctx.gmm;
      const std::size_t dim = gm.means.cols;
      int logw = -1;
      for (std::size_t j = 0; j < gm.k(); ++j) {
        const int mu = tape.constant(gm.means.extract_row(j));
        Tensor inv_var(1, dim);
        double log_norm = std::log(gm.weights[j]);
        for (std::size_t c = 0; c < dim; ++c) {
          const double var = gm.variances.at(j, c);
          inv_var.data[c] = 1.0 / var;
          log_norm -= 0.5 * std::log(2.0 * kPi * var);
        }
        const int diff = tape.sub(cls.latent, mu);
        const int quad = tape.row_sum(
            tape.mul(tape.mul(diff, diff), tape.constant(std::move(inv_var))));
        const int lw = tape.add_scalar(tape.scale(quad, -0.5), log_norm);
        logw = j == 0 ? lw : tape.concat_cols(logw, lw);
      }
      const int post = tape.softmax(logw);
      const int p1 = tape.row_max(post);
      const Tensor& pv = tape.value(post);
      Tensor mask(pv.rows, pv.cols);
      for (std::size_t r = 0; r < pv.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < pv.cols; ++c) {
          if (pv.at(r, c) > pv.at(r, best)) best = c;
        }
        mask.at(r, best) = -kMaskBig;
      }
      const int p2 = tape.row_max(tape.add(post, tape.constant(mask)));
      return tape.mean(tape.sub(p1, p2));
    }
  }
  return -1;
}

Tensor per_row_expand(const std::vector<double>& coef, std::size_t cols) {
  Tensor t(coef.size(), cols);
  for (std::size_t r = 0; r < coef.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = coef[r];
  }
  return t;
}

}  // namespace

GuidedLossNodes build_guided_loss(Tape& tape, const MlpNodes& nodes,
                                  const Tensor& x0, const std::vector<int>& ts,
                                  const Tensor& eps, const Tensor& step_noise,
                                  GuidanceMode mode, const GuidanceContext& ctx,
                                  double lambda,
                                  const DiffusionSchedule& schedule) {
  const std::size_t b = x0.rows;
  const std::size_t d = x0.cols;
  const Tensor x_t = forward_sample(x0, ts, eps, schedule);
  const int x_t_node = tape.constant(x_t);
  const int embed_node =
      tape.constant(time_embedding(ts, schedule.total_steps));
  const int eps_hat = noise_graph(tape, nodes, x_t_node, embed_node);

  GuidedLossNodes out;
  const int diff = tape.sub(tape.constant(eps), eps_hat);
  out.ddpm = tape.scale(tape.sqnorm(diff), 1.0 / static_cast<double>(b));
  out.total = out.ddpm;
  if (lambda == 0.0) return out;

  // One-step denoised batch g_theta(x_t, t); the noise draw is a constant.
  std::vector<double> c1(b), c2(b), sig(b);
  for (std::size_t r = 0; r < b; ++r) {
    const double a = schedule.alpha_at(ts[r]);
    const double ab = schedule.alpha_bar_at(ts[r]);
    c1[r] = (1.0 - a) / std::sqrt(1.0 - ab);
    c2[r] = 1.0 / std::sqrt(a);
    sig[r] = ts[r] > 1 ? std::sqrt(schedule.beta_at(ts[r])) : 0.0;
  }
  Tensor noise_term(b, d);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      noise_term.at(r, c) = sig[r] * step_noise.at(r, c);
    }
  }
  const int scaled_eps =
      tape.mul(eps_hat, tape.constant(per_row_expand(c1, d)));
  const int numer = tape.sub(x_t_node, scaled_eps);
  const int denoised0 = tape.mul(numer, tape.constant(per_row_expand(c2, d)));
  const int denoised =
      tape.add(denoised0, tape.constant(std::move(noise_term)));
  out.reg = guidance_graph(tape, mode, denoised, ctx);
  out.total = tape.add(out.ddpm, tape.scale(out.reg, lambda));
  return out;
}

void FinetuneConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("finetune lambda must be >= 0");
  if (epochs < 0) throw ConfigError("finetune epochs must be >= 0");
  if (lr <= 0.0) throw ConfigError("finetune learning rate must be > 0");
  if (batch_size == 0) throw ConfigError("finetune batch size must be >= 1");
}

namespace {

struct DdpmStepDraws {
  std::vector<int> ts;
  Tensor eps;
  Tensor step_noise;  // only drawn when guided
};

DdpmStepDraws draw_step(const Tensor& bx, const DiffusionSchedule& schedule,
                        Rng& rng, bool guided) {
  DdpmStepDraws d;
  d.ts.resize(bx.rows);
  for (std::size_t r = 0; r < bx.rows; ++r) {
    d.ts[r] = 1 + static_cast<int>(rng.below(schedule.total_steps));
  }
  d.eps = Tensor(bx.rows, bx.cols);
  for (double& v : d.eps.data) v = rng.normal();
  if (guided) {
    d.step_noise = Tensor(bx.rows, bx.cols);
    for (double& v : d.step_noise.data) v = rng.normal();
  } else {
    d.step_noise = Tensor(bx.rows, bx.cols);
  }
  return d;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& order,
                   std::size_t start, std::size_t count) {
  Tensor out(count, x.cols);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t c = 0; c < x.cols; ++c) {
      out.at(i, c) = x.at(order[start + i], c);
    }
  }
  return out;
}

}  // namespace

DdpmTrainResult train_ddpm(const Tensor& x0, const DiffusionSchedule& schedule,
                           const DdpmTrainConfig& cfg) {
  if (x0.rows == 0) throw Error("train_ddpm: empty dataset");
  std::vector<std::size_t> dims;
  dims.push_back(x0.cols + kTimeEmbedDim);
  for (std::size_t h : cfg.hidden) dims.push_back(h);
  dims.push_back(x0.cols);
  DdpmTrainResult result;
  result.params = make_mlp(dims, Activation::kTanh, splitmix64(cfg.seed));
  Rng rng(splitmix64(cfg.seed + 1));

  GuidanceContext no_ctx;
  FinetuneConfig ft;
  ft.lambda = 0.0;
  ft.epochs = cfg.epochs;
  ft.lr = cfg.lr;
  ft.batch_size = cfg.batch_size;
  ft.seed = cfg.seed + 2;
  const FinetuneResult r =
      finetune_guided(result.params, x0, no_ctx, ft, schedule);
  result.params = r.params;
  result.epoch_losses = r.epoch_total_losses;
  return result;
}

FinetuneResult finetune_guided(const MlpParams& theta_pre, const Tensor& x0,
                               const GuidanceContext& ctx,
                               const FinetuneConfig& cfg,
                               const DiffusionSchedule& schedule) {
  cfg.validate();
  if (x0.rows == 0) throw Error("finetune_guided: empty dataset");
  const bool guided = cfg.lambda > 0.0;
  if (guided) require_context(cfg.mode, ctx);

  FinetuneResult result;
  result.params = theta_pre;
  Rng rng(splitmix64(cfg.seed + 0xd1f));

  std::vector<std::size_t> order(x0.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t b = std::min<std::size_t>(
      std::max<std::size_t>(1, cfg.batch_size), x0.rows);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total_sum = 0.0;
    double reg_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + b <= x0.rows; start += b) {
      const Tensor bx = gather_rows(x0, order, start, b);
      const DdpmStepDraws draws = draw_step(bx, schedule, rng, guided);
      Tape tape;
      const MlpNodes nodes = push_params(tape, result.params);
      const GuidedLossNodes loss =
          build_guided_loss(tape, nodes, bx, draws.ts, draws.eps,
                            draws.step_noise, cfg.mode, ctx, cfg.lambda,
                            schedule);
      const ValueGrad vg = value_and_grad(tape, loss.total, nodes.all);
      total_sum += vg.value;
      if (loss.reg >= 0) reg_sum += tape.value(loss.reg).item();
      ++batches;
      result.params.unflatten(
          sgd_step(result.params.flatten(), vg.grads, cfg.lr, 0.0));
    }
    result.epoch_total_losses.push_back(
        batches > 0 ? total_sum / static_cast<double>(batches) : 0.0);
    result.epoch_guidance_losses.push_back(
        batches > 0 ? reg_sum / static_cast<double>(batches) : 0.0);
  }
  return result;
}

Tensor generate_mixed(const MlpParams& theta_pre, const MlpParams& theta_ft,
                      std::size_t n, double beta, std::uint64_t seed,
                      const DiffusionSchedule& schedule, std::size_t dim) {
  if (n == 0) throw Error("generate_mixed: n must be >= 1");
  if (beta < 0.0 || beta > 1.0) {
    throw Error("generate_mixed: beta must be in [0, 1]");
  }
  const std::size_t n_pre = static_cast<std::size_t>(
      std::ceil((1.0 - beta) * static_cast<double>(n)));
  const std::size_t n_ft = n - n_pre;
  const Tensor from_pre =
      sample(theta_pre, n_pre, dim, schedule, splitmix64(seed + 1));
  const Tensor from_ft =
      sample(theta_ft, n_ft, dim, schedule, splitmix64(seed + 2));
  Tensor out(n, dim);
  for (std::size_t r = 0; r < n_pre; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      out.at(r, c) = from_pre.at(r, c);
    }
  }
  for (std::size_t r = 0; r < n_ft; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      out.at(n_pre + r, c) = from_ft.at(r, c);
    }
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  // Row shuffle.
  Rng rng(splitmix64(seed + 3));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    if (j == i - 1) continue;
    for (std::size_t c = 0; c < dim; ++c) {
      std::swap(out.at(i - 1, c), out.at(j, c));
    }
  }
  return out;
}

}  // namespace ssat
