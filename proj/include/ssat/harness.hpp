#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssat/advtrain.hpp"
#include "ssat/data.hpp"
#include "ssat/diffusion.hpp"
#include "ssat/selection.hpp"

#include <json.hpp>

namespace ssat {

// Flat INI config: [section] headers, key = value lines, '#'/';' comments.
using IniData = std::map<std::string, std::map<std::string, std::string>>;
IniData parse_ini(const std::string& text);
IniData load_ini(const std::string& path);

enum class PipelineMode { kSelect, kGenerate };

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv
  SyntheticKind kind = SyntheticKind::kGaussians;
  std::size_t n = 6000;
  std::size_t classes = 5;
  double overlap = 0.35;
  std::string csv_path;
  bool csv_has_label = true;
  std::string normalize = "auto";  // auto | always | never
  std::size_t n_labeled = 500;
  std::size_t n_test = 500;
};

struct DiffusionConfig {
  int timesteps = 100;
  double beta_first = 1e-4;
  double beta_last = 0.02;
  int pretrain_epochs = 300;
  std::size_t pretrain_batch = 128;
  double pretrain_lr = 1e-3;
  std::vector<std::size_t> hidden = {128, 128};
  std::string pretrained_model;  // optional weight file
};

struct ExperimentConfig {
  IniData raw;  // echoed into the report
  PipelineMode mode = PipelineMode::kSelect;
  DataConfig data;
  FitConfig intermediate;
  SelectionConfig selection;
  TrainConfig train;
  AttackConfig attack;       // training-time attack
  AttackConfig eval_attack;  // evaluation attack (more steps)
  DiffusionConfig diffusion;
  FinetuneConfig finetune;
  std::string out_dir = "out";
  std::uint64_t seed = 1;

  static ExperimentConfig from_ini(const IniData& ini);
  static ExperimentConfig from_file(const std::string& path);
  void validate() const;
  bool csv_missing() const;
};

// Deterministic per-stage sub-seed derived from the global seed.
std::uint64_t stage_seed(std::uint64_t global, std::uint64_t stage_offset);

struct StageTimings {
  double intermediate_ms = 0.0;
  double scoring_ms = 0.0;
  double selection_ms = 0.0;
  double finetune_ms = 0.0;
  double generation_ms = 0.0;
  double ssat_ms = 0.0;
  double evaluation_ms = 0.0;
};

struct AuxSet {
  Tensor x;
  std::vector<int> pseudo_labels;
};

// Runs pipeline stages lazily, caching model weights in the output
// directory so CLI subcommands can pick up where a previous one stopped.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const SplitResult& data();
  const MlpParams& intermediate();
  ScoredPool& scored();
  const Selection& selection();
  const MlpParams& ddpm_pretrained();
  const MlpParams& ddpm_finetuned();
  const Tensor& generated();
  const AuxSet& aux();  // selected or generated points with pseudo-labels
  const TrainResult& ssat();
  const EvalResult& final_eval();
  const StageTimings& timings() const { return timings_; }

  // Writes report.json, curve.csv, manifest.csv and the latent scatter.
  void emit_outputs();
  // Just the PCA latent scatter (and the manifest that backs it).
  void emit_svg();
  nlohmann::json report_json(bool include_timings) const;

  // All stages in order; writes a partial report naming the failed stage
  // before rethrowing.
  void run_all();

  std::string path(const std::string& file) const;

 private:
  void preflight();
  GuidanceContext guidance_context();

  ExperimentConfig cfg_;
  StageTimings timings_;
  std::optional<SplitResult> data_;
  std::optional<MlpParams> intermediate_;
  std::optional<ScoredPool> scored_;
  std::optional<Selection> selection_;
  std::optional<MlpParams> ddpm_pre_;
  std::optional<MlpParams> ddpm_ft_;
  std::optional<KMeansModel> guide_kmeans_;
  std::optional<GmmModel> guide_gmm_;
  std::optional<Tensor> generated_;
  std::optional<AuxSet> aux_;
  std::optional<TrainResult> ssat_;
  std::optional<EvalResult> eval_;
};

// PCA scatter with pool points colored by pseudo-label and selected points
// over-plotted in black; one circle per pool point plus one per selection.
void write_latent_svg(const std::string& path, const Tensor& coords,
                      const std::vector<int>& labels,
                      const std::vector<std::size_t>& selected);

}  // namespace ssat
