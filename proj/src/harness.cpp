#include "ssat/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ssat/error.hpp"
#include "ssat/pca.hpp"

namespace fs = std::filesystem;

namespace ssat {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    const auto d = std::chrono::steady_clock::now() - start_;
    const double raw =
        std::chrono::duration<double, std::milli>(d).count();
    return std::round(raw * 1000.0) / 1000.0;  // millisecond precision
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

IniData parse_ini(const std::string& text) {
  IniData out;
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": malformed section header '" + t + "'");
      }
      section = trim(t.substr(1, t.size() - 2));
      out[section];
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value, got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    }
    out[section][key] = value;
  }
  return out;
}

IniData load_ini(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_ini(buf.str());
}

namespace {

class IniReader {
 public:
  explicit IniReader(const IniData& data) : data_(data) {
    for (const auto& [section, kv] : data_) {
      for (const auto& [key, value] : kv) {
        (void)value;
        unused_.insert(section + "." + key);
      }
    }
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = data_.find(section);
    return s != data_.end() && s->second.count(key) > 0;
  }

  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) {
    auto s = data_.find(section);
    if (s == data_.end()) return fallback;
    auto it = s->second.find(key);
    if (it == s->second.end()) return fallback;
    unused_.erase(section + "." + key);
    return it->second;
  }

  double num(const std::string& section, const std::string& key,
             double fallback) {
    const std::string v = str(section, key, "");
    if (v.empty()) return fallback;
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config [" + section + "] " + key + ": '" + v +
                        "' is not a number");
    }
  }

  long integer(const std::string& section, const std::string& key,
               long fallback) {
    const double d = num(section, key, static_cast<double>(fallback));
    const long l = static_cast<long>(d);
    if (static_cast<double>(l) != d) {
      throw ConfigError("config [" + section + "] " + key +
                        ": expected an integer");
    }
    return l;
  }

  bool boolean(const std::string& section, const std::string& key,
               bool fallback) {
    const std::string v = str(section, key, fallback ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config [" + section + "] " + key + ": '" + v +
                      "' is not a boolean");
  }

  std::vector<std::size_t> size_list(const std::string& section,
                                     const std::string& key,
                                     std::vector<std::size_t> fallback) {
    const std::string v = str(section, key, "");
    if (v.empty()) return fallback;
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = trim(item);
      try {
        out.push_back(static_cast<std::size_t>(std::stoul(t)));
      } catch (const std::exception&) {
        throw ConfigError("config [" + section + "] " + key + ": '" + t +
                          "' is not a size");
      }
    }
    if (out.empty()) {
      throw ConfigError("config [" + section + "] " + key + ": empty list");
    }
    return out;
  }

  void check_all_consumed() const {
    if (!unused_.empty()) {
      throw ConfigError("unknown config key '" + *unused_.begin() + "'");
    }
  }

 private:
  const IniData& data_;
  std::set<std::string> unused_;
};

}  // namespace

std::uint64_t stage_seed(std::uint64_t global, std::uint64_t stage_offset) {
  return splitmix64(global * 0x100 + stage_offset);
}

ExperimentConfig ExperimentConfig::from_ini(const IniData& ini) {
  ExperimentConfig cfg;
  cfg.raw = ini;
  IniReader r(ini);

  const std::string mode = r.str("pipeline", "mode", "select");
  if (mode == "select") {
    cfg.mode = PipelineMode::kSelect;
  } else if (mode == "generate") {
    cfg.mode = PipelineMode::kGenerate;
  } else {
    throw ConfigError("config [pipeline] mode: expected select or generate");
  }

  cfg.data.source = r.str("data", "source", "synthetic");
  if (cfg.data.source != "synthetic" && cfg.data.source != "csv") {
    throw ConfigError("config [data] source: expected synthetic or csv");
  }
  cfg.data.kind = parse_synthetic_kind(r.str("data", "kind", "gaussians"));
  cfg.data.n = static_cast<std::size_t>(r.integer("data", "n", 6000));
  cfg.data.classes =
      static_cast<std::size_t>(r.integer("data", "classes", 5));
  cfg.data.overlap = r.num("data", "overlap", 0.35);
  cfg.data.csv_path = r.str("data", "path", "");
  cfg.data.csv_has_label = r.boolean("data", "has_label", true);
  cfg.data.normalize = r.str("data", "normalize", "auto");
  if (cfg.data.normalize != "auto" && cfg.data.normalize != "always" &&
      cfg.data.normalize != "never") {
    throw ConfigError("config [data] normalize: expected auto/always/never");
  }
  cfg.data.n_labeled =
      static_cast<std::size_t>(r.integer("data", "n_labeled", 500));
  cfg.data.n_test =
      static_cast<std::size_t>(r.integer("data", "n_test", 500));

  cfg.intermediate.epochs =
      static_cast<int>(r.integer("intermediate", "epochs", 60));
  cfg.intermediate.batch_size = static_cast<std::size_t>(
      r.integer("intermediate", "batch_size", 128));
  cfg.intermediate.lr = r.num("intermediate", "lr", 0.1);
  cfg.intermediate.weight_decay =
      r.num("intermediate", "weight_decay", 5e-4);
  cfg.intermediate.hidden =
      r.size_list("intermediate", "hidden", {64, 64});

  cfg.selection.method =
      parse_selection_method(r.str("selection", "method", "lcs-km"));
  cfg.selection.alpha = r.num("selection", "alpha", 0.1);
  cfg.selection.beta = r.num("selection", "beta", 0.6);
  cfg.selection.k =
      static_cast<std::size_t>(r.integer("selection", "k", 0));

  cfg.train.gamma = r.num("train", "gamma", 0.5);
  cfg.train.batch_size =
      static_cast<std::size_t>(r.integer("train", "batch_size", 128));
  cfg.train.epochs = static_cast<int>(r.integer("train", "epochs", 40));
  cfg.train.epoch_length =
      static_cast<std::size_t>(r.integer("train", "epoch_length", 0));
  cfg.train.checkpoint_interval =
      static_cast<int>(r.integer("train", "checkpoint_interval", 1));
  cfg.train.mode = parse_loss_mode(r.str("train", "mode", "trades"));
  cfg.train.trades_weight = r.num("train", "trades_weight", 6.0);
  cfg.train.lr = r.num("train", "lr", 0.1);
  cfg.train.weight_decay = r.num("train", "weight_decay", 5e-4);
  cfg.train.hidden = r.size_list("train", "hidden", {64, 64});

  cfg.attack.norm = parse_attack_norm(r.str("attack", "norm", "l-inf"));
  cfg.attack.epsilon = r.num("attack", "epsilon", 0.05);
  cfg.attack.step_size =
      r.num("attack", "step_size", 2.5 * cfg.attack.epsilon / 10.0);
  cfg.attack.steps = static_cast<int>(r.integer("attack", "steps", 10));
  cfg.attack.random_start = r.boolean("attack", "random_start", true);
  cfg.attack.clip01 = r.boolean("attack", "clip01", true);
  cfg.eval_attack = cfg.attack;
  cfg.eval_attack.steps =
      static_cast<int>(r.integer("attack", "eval_steps", 40));
  cfg.eval_attack.step_size =
      r.num("attack", "eval_step_size",
            cfg.eval_attack.steps > 0
                ? 2.5 * cfg.attack.epsilon / cfg.eval_attack.steps
                : cfg.attack.step_size);

  cfg.diffusion.timesteps =
      static_cast<int>(r.integer("diffusion", "timesteps", 100));
  cfg.diffusion.beta_first = r.num("diffusion", "beta_first", 1e-4);
  cfg.diffusion.beta_last = r.num("diffusion", "beta_last", 0.02);
  cfg.diffusion.pretrain_epochs =
      static_cast<int>(r.integer("diffusion", "pretrain_epochs", 300));
  cfg.diffusion.pretrain_batch = static_cast<std::size_t>(
      r.integer("diffusion", "pretrain_batch", 128));
  cfg.diffusion.pretrain_lr = r.num("diffusion", "pretrain_lr", 1e-3);
  cfg.diffusion.hidden = r.size_list("diffusion", "hidden", {128, 128});
  cfg.diffusion.pretrained_model =
      r.str("diffusion", "pretrained_model", "");

  cfg.finetune.mode =
      parse_guidance_mode(r.str("finetune", "mode", "lcg-km"));
  cfg.finetune.lambda = r.num("finetune", "lambda", 0.5);
  cfg.finetune.epochs = static_cast<int>(r.integer("finetune", "epochs", 15));
  cfg.finetune.lr = r.num("finetune", "lr", 1e-3);
  cfg.finetune.batch_size =
      static_cast<std::size_t>(r.integer("finetune", "batch_size", 128));

  cfg.out_dir = r.str("output", "dir", "out");
  cfg.seed = static_cast<std::uint64_t>(r.integer("run", "seed", 1));

  r.check_all_consumed();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  return from_ini(load_ini(path));
}

void ExperimentConfig::validate() const {
  if (data.source == "csv" && csv_missing()) {
    throw ConfigError("config [data] path is required when source = csv");
  }
  if (data.source == "synthetic" && data.classes < 2) {
    throw ConfigError("config [data] classes must be >= 2");
  }
  selection.validate();
  train.validate();
  attack.validate();
  eval_attack.validate();
  finetune.validate();
  if (diffusion.timesteps < 1) {
    throw ConfigError("config [diffusion] timesteps must be >= 1");
  }
}

bool ExperimentConfig::csv_missing() const {
  return data.csv_path.empty();
}

Pipeline::Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.attack.seed = stage_seed(cfg_.seed, 0x80);
  cfg_.eval_attack.seed = stage_seed(cfg_.seed, 0x90);
  preflight();
}

std::string Pipeline::path(const std::string& file) const {
  return (fs::path(cfg_.out_dir) / file).string();
}

void Pipeline::preflight() {
  std::error_code ec;
  fs::create_directories(cfg_.out_dir, ec);
  const std::string probe = path(".write_probe");
  {
    std::ofstream f(probe);
    if (!f) {
      throw ConfigError("output directory '" + cfg_.out_dir +
                        "' is not writable");
    }
    f << "ok";
  }
  fs::remove(probe, ec);
}

const SplitResult& Pipeline::data() {
  if (data_) return *data_;
  Dataset full;
  if (cfg_.data.source == "synthetic") {
    full = gen_synthetic(cfg_.data.kind, cfg_.data.n, cfg_.data.classes,
                         cfg_.data.overlap, stage_seed(cfg_.seed, 1));
  } else {
    full = load_csv(cfg_.data.csv_path, cfg_.data.csv_has_label);
    Tensor x = full.features();
    const bool needs =
        cfg_.data.normalize == "always" ||
        (cfg_.data.normalize == "auto" && !in_unit_box(x));
    if (needs) {
      minmax_normalize(x);
      full = Dataset(std::move(x),
                     full.has_labels() ? full.ablation_labels()
                                       : std::vector<int>{},
                     full.class_count(), full.split());
    } else if (!in_unit_box(full.features())) {
      throw StageError("data",
                       "features outside [0,1] with normalize = never");
    }
  }
  data_ = split_dataset(full, cfg_.data.n_labeled, cfg_.data.n_test,
                        stage_seed(cfg_.seed, 2));
  return *data_;
}

const MlpParams& Pipeline::intermediate() {
  if (intermediate_) return *intermediate_;
  const std::string file = path("intermediate.bin");
  if (fs::exists(file)) {
    intermediate_ = load_mlp(file, Activation::kRelu);
    return *intermediate_;
  }
  StageTimer timer;
  FitConfig fit = cfg_.intermediate;
  fit.seed = stage_seed(cfg_.seed, 3);
  const Dataset& labeled = data().labeled;
  try {
    intermediate_ = train_intermediate(labeled.features(), labeled.labels(),
                                       labeled.class_count(), fit)
                        .params;
  } catch (const Error& e) {
    throw StageError("intermediate", e.what());
  }
  timings_.intermediate_ms = timer.ms();
  save_mlp(*intermediate_, file);
  return *intermediate_;
}

ScoredPool& Pipeline::scored() {
  if (scored_) return *scored_;
  StageTimer timer;
  const std::size_t k =
      cfg_.selection.k > 0 ? cfg_.selection.k : data().labeled.class_count();
  try {
    scored_ = compute_scores(data().unlabeled, intermediate(),
                             cfg_.selection.method, k,
                             stage_seed(cfg_.seed, 4));
  } catch (const Error& e) {
    throw StageError("scoring", e.what());
  }
  timings_.scoring_ms = timer.ms();
  return *scored_;
}

const Selection& Pipeline::selection() {
  if (selection_) return *selection_;
  StageTimer timer;
  try {
    selection_ = select_subset(scored(), cfg_.selection.alpha,
                               cfg_.selection.beta, stage_seed(cfg_.seed, 5));
  } catch (const Error& e) {
    throw StageError("selection", e.what());
  }
  timings_.selection_ms = timer.ms();
  return *selection_;
}

const MlpParams& Pipeline::ddpm_pretrained() {
  if (ddpm_pre_) return *ddpm_pre_;
  if (!cfg_.diffusion.pretrained_model.empty()) {
    ddpm_pre_ = load_mlp(cfg_.diffusion.pretrained_model, Activation::kTanh);
    return *ddpm_pre_;
  }
  const std::string file = path("ddpm_pre.bin");
  if (fs::exists(file)) {
    ddpm_pre_ = load_mlp(file, Activation::kTanh);
    return *ddpm_pre_;
  }
  StageTimer timer;
  const DiffusionSchedule schedule =
      make_schedule(cfg_.diffusion.timesteps, cfg_.diffusion.beta_first,
                    cfg_.diffusion.beta_last);
  DdpmTrainConfig tc;
  tc.epochs = cfg_.diffusion.pretrain_epochs;
  tc.batch_size = cfg_.diffusion.pretrain_batch;
  tc.lr = cfg_.diffusion.pretrain_lr;
  tc.hidden = cfg_.diffusion.hidden;
  tc.seed = stage_seed(cfg_.seed, 6);
  try {
    ddpm_pre_ = train_ddpm(data().labeled.features(), schedule, tc).params;
  } catch (const Error& e) {
    throw StageError("fine-tuning", e.what());
  }
  timings_.finetune_ms += timer.ms();
  save_mlp(*ddpm_pre_, file);
  return *ddpm_pre_;
}

GuidanceContext Pipeline::guidance_context() {
  GuidanceContext ctx;
  ctx.classifier = &intermediate();
  const std::size_t k =
      cfg_.selection.k > 0 ? cfg_.selection.k : data().labeled.class_count();
  if (cfg_.finetune.mode == GuidanceMode::kLcgKm && !guide_kmeans_) {
    const ClassifierOutput fwd =
        classifier_forward(intermediate(), data().labeled.features());
    guide_kmeans_ = kmeans_fit(fwd.latent, k, stage_seed(cfg_.seed, 7));
  }
  if (cfg_.finetune.mode == GuidanceMode::kLcgGmm && !guide_gmm_) {
    const ClassifierOutput fwd =
        classifier_forward(intermediate(), data().labeled.features());
    guide_gmm_ = gmm_fit(fwd.latent, k, stage_seed(cfg_.seed, 7));
  }
  if (guide_kmeans_) ctx.kmeans = &*guide_kmeans_;
  if (guide_gmm_) ctx.gmm = &*guide_gmm_;
  return ctx;
}

const MlpParams& Pipeline::ddpm_finetuned() {
  if (ddpm_ft_) return *ddpm_ft_;
  const std::string file = path("ddpm_ft.bin");
  if (fs::exists(file)) {
    ddpm_ft_ = load_mlp(file, Activation::kTanh);
    return *ddpm_ft_;
  }
  const MlpParams& pre = ddpm_pretrained();
  StageTimer timer;
  const DiffusionSchedule schedule =
      make_schedule(cfg_.diffusion.timesteps, cfg_.diffusion.beta_first,
                    cfg_.diffusion.beta_last);
  FinetuneConfig fc = cfg_.finetune;
  fc.seed = stage_seed(cfg_.seed, 8);
  try {
    const GuidanceContext ctx = guidance_context();
    ddpm_ft_ =
        finetune_guided(pre, data().labeled.features(), ctx, fc, schedule)
            .params;
  } catch (const Error& e) {
    throw StageError("fine-tuning", e.what());
  }
  timings_.finetune_ms += timer.ms();
  save_mlp(*ddpm_ft_, file);
  return *ddpm_ft_;
}

const Tensor& Pipeline::generated() {
  if (generated_) return *generated_;
  const MlpParams& pre = ddpm_pretrained();
  const MlpParams& ft = ddpm_finetuned();
  StageTimer timer;
  const DiffusionSchedule schedule =
      make_schedule(cfg_.diffusion.timesteps, cfg_.diffusion.beta_first,
                    cfg_.diffusion.beta_last);
  const std::size_t n = static_cast<std::size_t>(
      std::floor(cfg_.selection.alpha *
                 static_cast<double>(data().unlabeled.size())));
  try {
    generated_ =
        generate_mixed(pre, ft, n, cfg_.selection.beta,
                       stage_seed(cfg_.seed, 9), schedule,
                       data().labeled.dim());
  } catch (const Error& e) {
    throw StageError("generation", e.what());
  }
  timings_.generation_ms = timer.ms();
  return *generated_;
}

const AuxSet& Pipeline::aux() {
  if (aux_) return *aux_;
  AuxSet set;
  if (cfg_.mode == PipelineMode::kSelect) {
    const Selection& sel = selection();
    const Dataset& pool = data().unlabeled;
    set.x = Tensor(sel.indices.size(), pool.dim());
    for (std::size_t i = 0; i < sel.indices.size(); ++i) {
      for (std::size_t c = 0; c < pool.dim(); ++c) {
        set.x.at(i, c) = pool.features().at(sel.indices[i], c);
      }
    }
    set.pseudo_labels = sel.pseudo_labels;
  } else {
    set.x = generated();
    set.pseudo_labels = predict_labels(intermediate(), set.x);
  }
  aux_ = std::move(set);
  return *aux_;
}

const TrainResult& Pipeline::ssat() {
  if (ssat_) return *ssat_;
  const AuxSet& a = aux();
  StageTimer timer;
  TrainConfig tc = cfg_.train;
  tc.seed = stage_seed(cfg_.seed, 10);
  try {
    ssat_ = ssat_train(data().labeled, a.x, a.pseudo_labels, tc, cfg_.attack,
                       cfg_.eval_attack, data().test);
  } catch (const Error& e) {
    throw StageError("ssat", e.what());
  }
  timings_.ssat_ms = timer.ms();
  save_mlp(ssat_->params, path("final.bin"));
  return *ssat_;
}

const EvalResult& Pipeline::final_eval() {
  if (eval_) return *eval_;
  const TrainResult& tr = ssat();
  StageTimer timer;
  try {
    eval_ = evaluate(tr.params, data().test, cfg_.eval_attack);
  } catch (const Error& e) {
    throw StageError("evaluation", e.what());
  }
  timings_.evaluation_ms = timer.ms();
  return *eval_;
}

nlohmann::json Pipeline::report_json(bool include_timings) const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["mode"] = cfg_.mode == PipelineMode::kSelect ? "select" : "generate";

  nlohmann::json cfg_echo;
  for (const auto& [section, kv] : cfg_.raw) {
    for (const auto& [key, value] : kv) {
      cfg_echo[section][key] = value;
    }
  }
  j["config"] = cfg_echo;
  j["seed"] = cfg_.seed;

  if (data_) {
    j["dataset"] = {{"d", data_->labeled.dim()},
                    {"classes", data_->labeled.class_count()},
                    {"n_labeled", data_->labeled.size()},
                    {"n_unlabeled", data_->unlabeled.size()},
                    {"n_test", data_->test.size()}};
  }
  if (aux_) {
    j["aux_count"] = aux_->x.rows;
  }
  if (cfg_.mode == PipelineMode::kSelect && selection_) {
    j["selection"] = {
        {"method", selection_method_name(cfg_.selection.method)},
        {"alpha", cfg_.selection.alpha},
        {"beta", cfg_.selection.beta},
        {"total", selection_->indices.size()},
        {"boundary", selection_->boundary_count},
        {"random_fill", selection_->indices.size() -
                            selection_->boundary_count}};
  }
  if (cfg_.mode == PipelineMode::kGenerate && generated_) {
    j["generation"] = {
        {"mode", guidance_mode_name(cfg_.finetune.mode)},
        {"lambda", cfg_.finetune.lambda},
        {"epochs", cfg_.finetune.epochs},
        {"total", generated_->rows}};
  }
  if (ssat_) {
    j["ssat"] = {{"best_epoch", ssat_->best_epoch},
                 {"best_robust_acc", ssat_->best_robust_acc},
                 {"epochs", cfg_.train.epochs}};
  }
  if (eval_) {
    j["final"] = {{"clean_acc", eval_->clean_acc},
                  {"robust_acc", eval_->robust_acc}};
  }
  j["files"] = {{"report", "report.json"},
                {"curve_csv", "curve.csv"},
                {"manifest_csv", "manifest.csv"},
                {"latent_svg", "latent.svg"},
                {"intermediate_model", "intermediate.bin"},
                {"final_model", "final.bin"}};
  if (include_timings) {
    j["timings_ms"] = {{"intermediate", timings_.intermediate_ms},
                       {"scoring", timings_.scoring_ms},
                       {"selection", timings_.selection_ms},
                       {"fine-tuning", timings_.finetune_ms},
                       {"generation", timings_.generation_ms},
                       {"ssat", timings_.ssat_ms},
                       {"evaluation", timings_.evaluation_ms}};
  }
  return j;
}

void Pipeline::emit_svg() {
  if (cfg_.mode == PipelineMode::kSelect) {
    selection();
    write_manifest_csv(scored(), path("manifest.csv"));
    const ClassifierOutput fwd =
        classifier_forward(intermediate(), data().unlabeled.features());
    const PcaResult pca = pca_project(fwd.latent, 2);
    std::vector<int> labels(scored().points.size());
    std::vector<std::size_t> overlay;
    for (std::size_t i = 0; i < scored().points.size(); ++i) {
      labels[i] = scored().points[i].pseudo_label;
      if (scored().points[i].selected) overlay.push_back(i);
    }
    write_latent_svg(path("latent.svg"), pca.coords, labels, overlay);
  } else {
    const Tensor& g = generated();
    const std::vector<int>& labels = aux().pseudo_labels;
    std::ofstream f(path("manifest.csv"));
    if (!f) throw StageError("emit", "cannot write manifest.csv");
    f.precision(17);
    f << "index,pseudo_label,score,method,reason\n";
    const GuidanceContext ctx = guidance_context();
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double score =
          guidance_loss(cfg_.finetune.mode, g.extract_row(i), ctx);
      f << i << ',' << labels[i] << ',' << score << ','
        << guidance_mode_name(cfg_.finetune.mode) << ",generated\n";
    }
    const ClassifierOutput fwd = classifier_forward(intermediate(), g);
    const PcaResult pca = pca_project(fwd.latent, 2);
    write_latent_svg(path("latent.svg"), pca.coords, labels, {});
  }
}

void Pipeline::emit_outputs() {
  write_curve_csv(ssat().curve, path("curve.csv"));
  emit_svg();
  std::ofstream f(path("report.json"));
  if (!f) throw StageError("emit", "cannot write report.json");
  f << report_json(true).dump(2) << '\n';
}

void Pipeline::run_all() {
  const char* stage = "data";
  try {
    data();
    stage = "intermediate";
    intermediate();
    stage = cfg_.mode == PipelineMode::kSelect ? "scoring" : "fine-tuning";
    aux();
    stage = "ssat";
    ssat();
    stage = "evaluation";
    final_eval();
    stage = "emit";
    emit_outputs();
  } catch (const StageError& e) {
    nlohmann::json j = report_json(true);
    j["failed_stage"] = e.stage();
    j["error"] = e.what();
    std::ofstream f(path("report.json"));
    if (f) f << j.dump(2) << '\n';
    throw;
  } catch (const std::exception& e) {
    nlohmann::json j = report_json(true);
    j["failed_stage"] = stage;
    j["error"] = e.what();
    std::ofstream f(path("report.json"));
    if (f) f << j.dump(2) << '\n';
    throw StageError(stage, e.what());
  }
}

namespace {

const char* kPalette[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756",
                          "#72b7b2", "#eeca3b", "#b279a2", "#ff9da6",
                          "#9d755d", "#bab0ac"};

}  // namespace

void write_latent_svg(const std::string& path, const Tensor& coords,
                      const std::vector<int>& labels,
                      const std::vector<std::size_t>& selected) {
  if (coords.cols < 2) throw Error("write_latent_svg: need 2-D coordinates");
  if (labels.size() != coords.rows) {
    throw Error("write_latent_svg: label count mismatch");
  }
  const double width = 800.0, height = 800.0, margin = 40.0;
  double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  if (coords.rows > 0) {
    x_lo = x_hi = coords.at(0, 0);
    y_lo = y_hi = coords.at(0, 1);
    for (std::size_t r = 0; r < coords.rows; ++r) {
      x_lo = std::min(x_lo, coords.at(r, 0));
      x_hi = std::max(x_hi, coords.at(r, 0));
      y_lo = std::min(y_lo, coords.at(r, 1));
      y_hi = std::max(y_hi, coords.at(r, 1));
    }
  }
  const double xr = x_hi - x_lo > 0 ? x_hi - x_lo : 1.0;
  const double yr = y_hi - y_lo > 0 ? y_hi - y_lo : 1.0;
  auto sx = [&](double x) {
    return margin + (x - x_lo) / xr * (width - 2 * margin);
  };
  auto sy = [&](double y) {
    return height - margin - (y - y_lo) / yr * (height - 2 * margin);
  };

  std::ofstream f(path);
  if (!f) throw Error("write_latent_svg: cannot open '" + path + "'");
  f.precision(6);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
    << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
    << height << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t r = 0; r < coords.rows; ++r) {
    const char* color =
        kPalette[static_cast<std::size_t>(labels[r] < 0 ? 0 : labels[r]) %
                 (sizeof(kPalette) / sizeof(kPalette[0]))];
    f << "<circle cx=\"" << sx(coords.at(r, 0)) << "\" cy=\""
      << sy(coords.at(r, 1)) << "\" r=\"2.5\" fill=\"" << color
      << "\" fill-opacity=\"0.55\"/>\n";
  }
  for (std::size_t idx : selected) {
    f << "<circle cx=\"" << sx(coords.at(idx, 0)) << "\" cy=\""
      << sy(coords.at(idx, 1)) << "\" r=\"3.2\" fill=\"black\"/>\n";
  }
  f << "</svg>\n";
  if (!f) throw Error("write_latent_svg: write failed for '" + path + "'");
}

}  // namespace ssat
