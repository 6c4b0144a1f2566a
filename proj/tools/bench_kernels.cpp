// Times the OpenMP kernels against their serial references and checks that
// both produce identical results.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "ssat/advtrain.hpp"
#include "ssat/mlp.hpp"
#include "ssat/parallel.hpp"
#include "ssat/rng.hpp"
#include "ssat/tensor.hpp"

using namespace ssat;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] != b.data[i]) return false;
  }
  return true;
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", max_threads());
  Rng rng(42);

  {
    const std::size_t n = 512, k = 256, m = 256;
    const Tensor a = random_tensor(n, k, rng);
    const Tensor b = random_tensor(k, m, rng);
    Tensor out_serial, out_parallel;
    const double ts = time_ms(
        [&] { kernels::matmul_serial(a, b, out_serial); }, 10);
    const double tp = time_ms([&] { kernels::matmul(a, b, out_parallel); },
                              10);
    std::printf("matmul %zux%zux%zu      serial %8.3f ms   parallel %8.3f ms"
                "   speedup %.2fx   identical %s\n",
                n, k, m, ts, tp, ts / tp,
                bitwise_equal(out_serial, out_parallel) ? "yes" : "NO");
  }

  {
    // Batched PGD against a small classifier: the training-loop hot path.
    const std::size_t batch = 256, dim = 2, classes = 5;
    const MlpParams net =
        make_mlp({dim, 64, 64, classes}, Activation::kRelu, 7);
    const Tensor x = random_tensor(batch, dim, rng);
    std::vector<int> y(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      y[i] = static_cast<int>(i % classes);
    }
    AttackConfig cfg;
    cfg.epsilon = 0.05;
    cfg.step_size = 0.0125;
    cfg.steps = 10;
    cfg.random_start = false;
    cfg.clip01 = false;
    Rng attack_rng(1);
    const double t = time_ms(
        [&] { pgd_attack_batch(net, x, y, cfg, attack_rng); }, 5);
    std::printf("pgd batch=%zu steps=%d   %8.3f ms per attack\n", batch,
                cfg.steps, t);
  }

  return 0;
}
