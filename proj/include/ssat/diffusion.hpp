#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssat/clustering.hpp"
#include "ssat/mlp.hpp"
#include "ssat/rng.hpp"

namespace ssat {

// Per-step noise coefficients for T steps, indexed 1..T.
struct DiffusionSchedule {
  int total_steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s, strictly decreasing

  double beta_at(int t) const { return beta.at(t - 1); }
  double alpha_at(int t) const { return alpha.at(t - 1); }
  double alpha_bar_at(int t) const { return alpha_bar.at(t - 1); }
  void check_t(int t) const;
};

// Linear beta ramp from beta_first to beta_last over T steps.
DiffusionSchedule make_schedule(int total_steps, double beta_first = 1e-4,
                                double beta_last = 0.02);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one timestep per row.
Tensor forward_sample(const Tensor& x0, const std::vector<int>& ts,
                      const Tensor& eps, const DiffusionSchedule& schedule);
Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps,
                      const DiffusionSchedule& schedule);

// Mean squared noise-prediction error over a batch; mean_i |eps_i - pred_i|^2.
double ddpm_loss_core(const Tensor& eps, const Tensor& eps_hat);

// Draws one (t, eps) pair per row from rng, then evaluates the regression
// loss of the noise net on the noised batch.
double ddpm_loss(const MlpParams& params, const Tensor& x0,
                 const DiffusionSchedule& schedule, Rng& rng);

// One reverse (denoising) step; the noise term is dropped at t = 1.
Tensor reverse_step(const MlpParams& params, const Tensor& x_t, int t,
                    const Tensor& noise, const DiffusionSchedule& schedule);

// Ancestral sampling from pure Gaussian noise through t = T..1.
Tensor sample(const MlpParams& params, std::size_t n, std::size_t dim,
              const DiffusionSchedule& schedule, std::uint64_t seed);

enum class GuidanceMode { kPcg, kLcgKm, kLcgGmm };

GuidanceMode parse_guidance_mode(const std::string& name);
const char* guidance_mode_name(GuidanceMode m);

// Intermediate classifier plus the cluster model fitted on labeled-data
// latents (required by the clustering modes).
struct GuidanceContext {
  const MlpParams* classifier = nullptr;
  const KMeansModel* kmeans = nullptr;
  const GmmModel* gmm = nullptr;
};

// Boundary-proximity penalty of one point: prediction confidence for pcg,
// the centroid-distance gap for lcg-km, the posterior gap for lcg-gmm.
// All are non-negative and minimized toward the decision boundary.
double guidance_loss(GuidanceMode mode, const Tensor& x_row,
                     const GuidanceContext& ctx);
double guidance_loss_mean(GuidanceMode mode, const Tensor& x,
                          const GuidanceContext& ctx);

struct FinetuneConfig {
  GuidanceMode mode = GuidanceMode::kLcgKm;
  double lambda = 0.5;
  int epochs = 15;  // S
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DdpmTrainConfig {
  int epochs = 400;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {128, 128};
};

struct DdpmTrainResult {
  MlpParams params;
  std::vector<double> epoch_losses;
};

// Fits a fresh noise net by SGD on the regression loss.
DdpmTrainResult train_ddpm(const Tensor& x0, const DiffusionSchedule& schedule,
                           const DdpmTrainConfig& cfg);

// Fine-tunes theta_pre on L_ddpm + lambda * L_reg, where L_reg applies the
// guidance loss to the one-step denoised batch g_theta(x_t, t) with the
// noise draw held fixed during backpropagation. With lambda = 0 the
// trajectory is identical to plain fine-tuning under the same seed.
struct FinetuneResult {
  MlpParams params;
  std::vector<double> epoch_total_losses;
  std::vector<double> epoch_guidance_losses;
};
FinetuneResult finetune_guided(const MlpParams& theta_pre, const Tensor& x0,
                               const GuidanceContext& ctx,
                               const FinetuneConfig& cfg,
                               const DiffusionSchedule& schedule);

// ceil((1-beta) n) samples from the pre-trained model and the rest from the
// fine-tuned one, clipped to [0,1]^d and shuffled.
Tensor generate_mixed(const MlpParams& theta_pre, const MlpParams& theta_ft,
                      std::size_t n, double beta, std::uint64_t seed,
                      const DiffusionSchedule& schedule, std::size_t dim);

// Tape builders shared by training and tests.
struct GuidedLossNodes {
  int ddpm = -1;
  int reg = -1;    // -1 when lambda == 0
  int total = -1;
};
GuidedLossNodes build_guided_loss(Tape& tape, const MlpNodes& nodes,
                                  const Tensor& x0, const std::vector<int>& ts,
                                  const Tensor& eps, const Tensor& step_noise,
                                  GuidanceMode mode, const GuidanceContext& ctx,
                                  double lambda,
                                  const DiffusionSchedule& schedule);

}  // namespace ssat
