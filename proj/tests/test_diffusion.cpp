#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "ssat/diffusion.hpp"
#include "ssat/optim.hpp"

using namespace ssat;
using ssat_test::random_tensor;

TEST_CASE("linear schedule endpoints and monotonicity") {
  const DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);
  CHECK(s.alpha_bar_at(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));
  for (int t = 2; t <= 1000; ++t) {
    CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
  }
  CHECK(s.alpha_bar_at(1000) < s.alpha_bar_at(1));
}

TEST_CASE("cumulative products match an independent running product") {
  const DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);
  double running = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    running *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(std::abs(s.alpha_bar_at(t) - running) < 1e-12);
  }
}

TEST_CASE("schedule range violations raise errors") {
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), Error);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), Error);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), Error);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), Error);
}

TEST_CASE("forward sample with zero noise scales by sqrt(alpha_bar)") {
  const DiffusionSchedule s = make_schedule(50);
  Rng rng(3);
  const Tensor x0 = random_tensor(4, 2, rng);
  const Tensor x_t = forward_sample(x0, 20, Tensor(4, 2), s);
  const double c = std::sqrt(s.alpha_bar_at(20));
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    CHECK(x_t.data[i] == doctest::Approx(c * x0.data[i]).epsilon(1e-15));
  }
}

TEST_CASE("a hypothetical alpha_bar of one returns x0 unchanged") {
  DiffusionSchedule s;
  s.total_steps = 1;
  s.beta = {0.5};
  s.alpha = {0.5};
  s.alpha_bar = {1.0};
  Rng rng(4);
  const Tensor x0 = random_tensor(2, 3, rng);
  const Tensor eps = random_tensor(2, 3, rng);
  const Tensor x_t = forward_sample(x0, 1, eps, s);
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    CHECK(x_t.data[i] == doctest::Approx(x0.data[i]).epsilon(1e-15));
  }
}

TEST_CASE("forward sample rejects out-of-range timesteps") {
  const DiffusionSchedule s = make_schedule(10);
  CHECK_THROWS_AS(forward_sample(Tensor(1, 2), 0, Tensor(1, 2), s), Error);
  CHECK_THROWS_AS(forward_sample(Tensor(1, 2), 11, Tensor(1, 2), s), Error);
}

TEST_CASE("forward-sample Monte Carlo statistics match the formula") {
  const DiffusionSchedule s = make_schedule(100);
  const int t = 60;
  const std::size_t draws = 20000;
  Tensor x0(1, 1);
  x0.data = {0.8};
  Rng rng(99);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    Tensor eps(1, 1);
    eps.data[0] = rng.normal();
    const double v = forward_sample(x0, t, eps, s).data[0];
    mean += v;
    m2 += v * v;
  }
  mean /= draws;
  const double var = m2 / draws - mean * mean;
  CHECK(std::abs(mean - std::sqrt(s.alpha_bar_at(t)) * 0.8) < 0.02);
  CHECK(std::abs(var - (1.0 - s.alpha_bar_at(t))) <
        0.05 * (1.0 - s.alpha_bar_at(t)) + 0.01);
}

TEST_CASE("regression loss is zero when the prediction equals the noise") {
  Rng rng(5);
  const Tensor eps = random_tensor(3, 2, rng);
  CHECK(ddpm_loss_core(eps, eps) == 0.0);
}

TEST_CASE("a single fixed case equals the hand-computed squared norm") {
  Tensor eps(1, 2), eps_hat(1, 2);
  eps.data = {1.0, -2.0};
  eps_hat.data = {0.5, 1.0};
  CHECK(ddpm_loss_core(eps, eps_hat) ==
        doctest::Approx(0.25 + 9.0).epsilon(1e-15));
}

TEST_CASE("zero noise net gives expected loss near the dimension") {
  const DiffusionSchedule s = make_schedule(50);
  MlpParams p = make_mlp({2 + kTimeEmbedDim, 8, 2}, Activation::kTanh, 1);
  for (Tensor& w : p.weights) std::fill(w.data.begin(), w.data.end(), 0.0);
  for (Tensor& b : p.biases) std::fill(b.data.begin(), b.data.end(), 0.0);
  // With eps_hat = 0 the loss is |eps|^2, chi-square with d dof per row.
  Rng rng(17);
  Tensor x0(2000, 2);
  for (double& v : x0.data) v = rng.uniform01();
  const double loss = ddpm_loss(p, x0, s, rng);
  // mean d = 2, sd of the batch mean = sqrt(2*2*2 / n)
  CHECK(std::abs(loss - 2.0) < 3.0 * std::sqrt(8.0 / 2000.0));
}

TEST_CASE("reverse step with oracle noise at t=1 recovers x0 exactly") {
  const DiffusionSchedule s = make_schedule(30);
  Rng rng(8);
  const Tensor x0 = random_tensor(3, 2, rng, 0.0, 1.0);
  const Tensor eps = random_tensor(3, 2, rng);
  const Tensor x1 = forward_sample(x0, 1, eps, s);

  // A synthetic predictor that returns the true eps: subtract its effect by
  // hand, mirroring one exact denoising step.
  const double a = s.alpha_at(1);
  const double ab = s.alpha_bar_at(1);
  Tensor recovered(3, 2);
  for (std::size_t i = 0; i < x1.data.size(); ++i) {
    recovered.data[i] =
        (x1.data[i] - (1.0 - a) / std::sqrt(1.0 - ab) * eps.data[i]) /
        std::sqrt(a);
  }
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    CHECK(std::abs(recovered.data[i] - x0.data[i]) < 1e-10);
  }
}

TEST_CASE("reverse step with a zero net and zero noise rescales by sqrt(alpha)") {
  const DiffusionSchedule s = make_schedule(30);
  MlpParams p = make_mlp({2 + kTimeEmbedDim, 8, 2}, Activation::kTanh, 1);
  for (Tensor& w : p.weights) std::fill(w.data.begin(), w.data.end(), 0.0);
  for (Tensor& b : p.biases) std::fill(b.data.begin(), b.data.end(), 0.0);
  Rng rng(9);
  const Tensor x_t = random_tensor(2, 2, rng);
  const Tensor out = reverse_step(p, x_t, 5, Tensor(2, 2), s);
  const double c = 1.0 / std::sqrt(s.alpha_at(5));
  for (std::size_t i = 0; i < x_t.data.size(); ++i) {
    CHECK(out.data[i] == doctest::Approx(c * x_t.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("reverse step matches an independent evaluation of the formula") {
  const DiffusionSchedule s = make_schedule(40);
  const MlpParams p =
      make_mlp({2 + kTimeEmbedDim, 16, 2}, Activation::kTanh, 12);
  Rng rng(13);
  const Tensor x_t = random_tensor(3, 2, rng);
  const Tensor noise = random_tensor(3, 2, rng);
  const int t = 17;
  const Tensor out = reverse_step(p, x_t, t, noise, s);

  const Tensor eps_hat = noise_forward(p, x_t, {t, t, t}, 40);
  const double a = s.alpha_at(t);
  const double ab = s.alpha_bar_at(t);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double expect =
        (x_t.data[i] - (1.0 - a) / std::sqrt(1.0 - ab) * eps_hat.data[i]) /
            std::sqrt(a) +
        std::sqrt(s.beta_at(t)) * noise.data[i];
    CHECK(out.data[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("sampling is deterministic and n = 0 yields an empty set") {
  const DiffusionSchedule s = make_schedule(20);
  const MlpParams p =
      make_mlp({2 + kTimeEmbedDim, 16, 2}, Activation::kTanh, 21);
  const Tensor a = sample(p, 5, 2, s, 33);
  const Tensor b = sample(p, 5, 2, s, 33);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(a.data[i] == b.data[i]);
  }
  const Tensor empty = sample(p, 0, 2, s, 33);
  CHECK(empty.rows == 0);
}

TEST_CASE("a trained toy DDPM concentrates samples near the data mean") {
  const DiffusionSchedule s = make_schedule(30);
  Rng rng(55);
  Tensor x0(256, 2);
  for (std::size_t i = 0; i < 256; ++i) {
    x0.at(i, 0) = 0.5 + 0.1 * rng.normal();
    x0.at(i, 1) = 0.5 + 0.1 * rng.normal();
  }
  DdpmTrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 64;
  cfg.lr = 2e-3;
  cfg.seed = 7;
  cfg.hidden = {64, 64};
  const DdpmTrainResult fit = train_ddpm(x0, s, cfg);
  CHECK(fit.epoch_losses.back() < fit.epoch_losses.front());

  const Tensor samples = sample(fit.params, 2000, 2, s, 101);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < samples.rows; ++i) {
    mx += samples.at(i, 0);
    my += samples.at(i, 1);
  }
  mx /= samples.rows;
  my /= samples.rows;
  CHECK(std::abs(mx - 0.5) < 0.1);
  CHECK(std::abs(my - 0.5) < 0.1);
}

namespace {

GuidanceContext make_km_context(const MlpParams& classifier,
                                const KMeansModel& km) {
  GuidanceContext ctx;
  ctx.classifier = &classifier;
  ctx.kmeans = &km;
  return ctx;
}

}  // namespace

TEST_CASE("guidance losses reproduce their closed-form cases") {
  SUBCASE("uniform logits give pcg loss 1/C") {
    MlpParams zero = make_mlp({2, 8, 8, 10}, Activation::kRelu, 1);
    for (Tensor& w : zero.weights) {
      std::fill(w.data.begin(), w.data.end(), 0.0);
    }
    for (Tensor& b : zero.biases) {
      std::fill(b.data.begin(), b.data.end(), 0.0);
    }
    GuidanceContext ctx;
    ctx.classifier = &zero;
    Tensor x(1, 2, 0.3);
    CHECK(guidance_loss(GuidanceMode::kPcg, x, ctx) ==
          doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("equidistant latent gives km loss 0") {
    // Identity-like classifier: latent = relu(x) for a single hidden layer
    // wide enough to pass coordinates through.
    MlpParams ident;
    Tensor w(2, 2);
    w.data = {1.0, 0.0, 0.0, 1.0};
    ident.weights = {w, Tensor(2, 2, 0.0)};
    ident.biases = {Tensor(1, 2), Tensor(1, 2)};
    KMeansModel km;
    km.centroids = Tensor(2, 2);
    km.centroids.data = {0.0, 0.0, 1.0, 0.0};
    const GuidanceContext ctx = make_km_context(ident, km);
    Tensor x(1, 2);
    x.data = {0.5, 0.4};
    CHECK(guidance_loss(GuidanceMode::kLcgKm, x, ctx) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("gmm posterior gap matches the two-component closed form") {
    MlpParams ident;
    Tensor w(1, 1);
    w.data = {1.0};
    ident.weights = {w, Tensor(1, 1, 0.0)};
    ident.biases = {Tensor(1, 1), Tensor(1, 1)};
    GmmModel gm;
    gm.weights = {0.5, 0.5};
    gm.means = Tensor(2, 1);
    gm.means.data = {0.0, 4.0};
    gm.variances = Tensor(2, 1, 1.0);
    GuidanceContext ctx;
    ctx.classifier = &ident;
    ctx.gmm = &gm;
    Tensor x(1, 1);
    x.data = {1.0};
    const double p1 = 1.0 / (1.0 + std::exp(-4.0));
    CHECK(guidance_loss(GuidanceMode::kLcgGmm, x, ctx) ==
          doctest::Approx(2.0 * p1 - 1.0).epsilon(1e-9));
  }
  SUBCASE("missing cluster model is an error") {
    const MlpParams p = make_mlp({2, 8, 8, 3}, Activation::kRelu, 2);
    GuidanceContext ctx;
    ctx.classifier = &p;
    CHECK_THROWS_AS(guidance_loss(GuidanceMode::kLcgKm, Tensor(1, 2), ctx),
                    Error);
  }
}

namespace {

// Independent unguided fine-tuning loop with the same RNG protocol.
MlpParams unguided_reference(const MlpParams& start, const Tensor& x0,
                             const FinetuneConfig& cfg,
                             const DiffusionSchedule& s) {
  MlpParams params = start;
  Rng rng(splitmix64(cfg.seed + 0xd1f));
  std::vector<std::size_t> order(x0.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t b = std::min(cfg.batch_size, x0.rows);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start_i = 0; start_i + b <= x0.rows; start_i += b) {
      Tensor bx(b, x0.cols);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t c = 0; c < x0.cols; ++c) {
          bx.at(i, c) = x0.at(order[start_i + i], c);
        }
      }
      std::vector<int> ts(b);
      for (std::size_t i = 0; i < b; ++i) {
        ts[i] = 1 + static_cast<int>(rng.below(s.total_steps));
      }
      Tensor eps(b, x0.cols);
      for (double& v : eps.data) v = rng.normal();
      const Tensor x_t = forward_sample(bx, ts, eps, s);
      Tape tape;
      const MlpNodes nodes = push_params(tape, params);
      const int eps_hat =
          noise_graph(tape, nodes, tape.constant(x_t),
                      tape.constant(time_embedding(ts, s.total_steps)));
      const int diff = tape.sub(tape.constant(eps), eps_hat);
      const int loss =
          tape.scale(tape.sqnorm(diff), 1.0 / static_cast<double>(b));
      const ValueGrad vg = value_and_grad(tape, loss, nodes.all);
      params.unflatten(sgd_step(params.flatten(), vg.grads, cfg.lr, 0.0));
    }
  }
  return params;
}

}  // namespace

TEST_CASE("lambda = 0 fine-tuning is bitwise-equal to plain fine-tuning") {
  const DiffusionSchedule s = make_schedule(12);
  Rng rng(71);
  Tensor x0(40, 2);
  for (double& v : x0.data) v = rng.uniform01();
  const MlpParams pre =
      make_mlp({2 + kTimeEmbedDim, 16, 2}, Activation::kTanh, 3);

  FinetuneConfig cfg;
  cfg.lambda = 0.0;
  cfg.epochs = 3;
  cfg.lr = 5e-3;
  cfg.batch_size = 8;
  cfg.seed = 19;
  GuidanceContext no_ctx;
  const FinetuneResult guided = finetune_guided(pre, x0, no_ctx, cfg, s);
  const MlpParams oracle = unguided_reference(pre, x0, cfg, s);
  for (std::size_t l = 0; l < oracle.weights.size(); ++l) {
    for (std::size_t i = 0; i < oracle.weights[l].data.size(); ++i) {
      CHECK(guided.params.weights[l].data[i] == oracle.weights[l].data[i]);
    }
    for (std::size_t i = 0; i < oracle.biases[l].data.size(); ++i) {
      CHECK(guided.params.biases[l].data[i] == oracle.biases[l].data[i]);
    }
  }
}

TEST_CASE("the total loss is exactly ddpm plus lambda times the regularizer") {
  const DiffusionSchedule s = make_schedule(10);
  Rng rng(23);
  Tensor x0(6, 2);
  for (double& v : x0.data) v = rng.uniform01();
  const MlpParams net =
      make_mlp({2 + kTimeEmbedDim, 12, 2}, Activation::kTanh, 5);
  const MlpParams classifier = make_mlp({2, 8, 8, 3}, Activation::kRelu, 6);
  const ClassifierOutput fwd = classifier_forward(classifier, x0);
  const KMeansModel km = kmeans_fit(fwd.latent, 3, 1);
  const GuidanceContext ctx = make_km_context(classifier, km);

  std::vector<int> ts{1, 3, 5, 7, 9, 10};
  const Tensor eps = random_tensor(6, 2, rng);
  const Tensor step_noise = random_tensor(6, 2, rng);
  Tape tape;
  const MlpNodes nodes = push_params(tape, net);
  const double lambda = 0.5;
  const GuidedLossNodes loss = build_guided_loss(
      tape, nodes, x0, ts, eps, step_noise, GuidanceMode::kLcgKm, ctx, lambda,
      s);
  const double total = tape.value(loss.total).item();
  const double ddpm = tape.value(loss.ddpm).item();
  const double reg = tape.value(loss.reg).item();
  CHECK(total == ddpm + lambda * reg);
  CHECK(reg >= 0.0);
}

TEST_CASE("guided loss gradient matches finite differences on a tiny net") {
  const DiffusionSchedule s = make_schedule(10);
  Rng rng(29);
  Tensor x0(4, 2);
  for (double& v : x0.data) v = rng.uniform01();
  const MlpParams net =
      make_mlp({2 + kTimeEmbedDim, 6, 2}, Activation::kTanh, 31);
  const MlpParams classifier = make_mlp({2, 6, 6, 3}, Activation::kRelu, 32);
  const ClassifierOutput fwd = classifier_forward(classifier, x0);
  const KMeansModel km = kmeans_fit(fwd.latent, 3, 2);
  const GuidanceContext ctx = make_km_context(classifier, km);

  const std::vector<int> ts{2, 5, 8, 10};
  const Tensor eps = random_tensor(4, 2, rng);
  const Tensor step_noise = random_tensor(4, 2, rng);

  const std::vector<Tensor> leaves = net.flatten();
  const auto builder = [&](Tape& t, const std::vector<int>& ids) {
    MlpNodes nodes;
    for (std::size_t l = 0; l < ids.size(); l += 2) {
      nodes.weights.push_back(ids[l]);
      nodes.biases.push_back(ids[l + 1]);
      nodes.all.push_back(ids[l]);
      nodes.all.push_back(ids[l + 1]);
    }
    return build_guided_loss(t, nodes, x0, ts, eps, step_noise,
                             GuidanceMode::kLcgKm, ctx, 0.7, s)
        .total;
  };
  const auto report = ssat_test::fd_check(builder, leaves, 1e-5);
  CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("generate_mixed splits counts by the ceiling rule") {
  const DiffusionSchedule s = make_schedule(5);
  const MlpParams pre =
      make_mlp({2 + kTimeEmbedDim, 8, 2}, Activation::kTanh, 1);
  MlpParams ft = pre;
  for (Tensor& w : ft.weights) {
    for (double& v : w.data) v += 1.0;  // make the two models distinct
  }

  SUBCASE("n=200, beta=0.4 -> 120 + 80") {
    const Tensor pre_only = sample(pre, 120, 2, s, splitmix64(50 + 1));
    const Tensor g = generate_mixed(pre, ft, 200, 0.4, 50, s, 2);
    CHECK(g.rows == 200);
    // The first 120 pre-model samples (clipped) must appear in g.
    std::size_t found = 0;
    for (std::size_t i = 0; i < pre_only.rows; ++i) {
      const double a = std::clamp(pre_only.at(i, 0), 0.0, 1.0);
      const double b = std::clamp(pre_only.at(i, 1), 0.0, 1.0);
      for (std::size_t r = 0; r < g.rows; ++r) {
        if (g.at(r, 0) == a && g.at(r, 1) == b) {
          ++found;
          break;
        }
      }
    }
    CHECK(found == 120);
  }
  SUBCASE("beta = 0 draws everything from the pre-trained model") {
    const Tensor g = generate_mixed(pre, ft, 10, 0.0, 51, s, 2);
    const Tensor pre_only = sample(pre, 10, 2, s, splitmix64(51 + 1));
    std::size_t found = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      const double a = std::clamp(pre_only.at(i, 0), 0.0, 1.0);
      const double b = std::clamp(pre_only.at(i, 1), 0.0, 1.0);
      for (std::size_t r = 0; r < g.rows; ++r) {
        if (g.at(r, 0) == a && g.at(r, 1) == b) {
          ++found;
          break;
        }
      }
    }
    CHECK(found == 10);
  }
  SUBCASE("beta = 1 draws everything from the fine-tuned model") {
    const Tensor g = generate_mixed(pre, ft, 10, 1.0, 52, s, 2);
    const Tensor ft_only = sample(ft, 10, 2, s, splitmix64(52 + 2));
    std::size_t found = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      const double a = std::clamp(ft_only.at(i, 0), 0.0, 1.0);
      const double b = std::clamp(ft_only.at(i, 1), 0.0, 1.0);
      for (std::size_t r = 0; r < g.rows; ++r) {
        if (g.at(r, 0) == a && g.at(r, 1) == b) {
          ++found;
          break;
        }
      }
    }
    CHECK(found == 10);
  }
  SUBCASE("n = 0 is an error and outputs are clipped to the unit box") {
    CHECK_THROWS_AS(generate_mixed(pre, ft, 0, 0.5, 1, s, 2), Error);
    const Tensor g = generate_mixed(pre, ft, 50, 0.5, 53, s, 2);
    for (double v : g.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
