#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssat/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file")
      ->required();
  cmd->add_option("--seed", args.seed_override,
                  "override the [run] seed from the config");
}

ssat::ExperimentConfig load_config(const CommonArgs& args) {
  ssat::ExperimentConfig cfg =
      ssat::ExperimentConfig::from_file(args.config_path);
  if (args.seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(args.seed_override);
  }
  return cfg;
}

void cmd_gen_data(const CommonArgs& args) {
  ssat::ExperimentConfig cfg = load_config(args);
  ssat::Pipeline pipe(cfg);
  const ssat::SplitResult& splits = pipe.data();
  ssat::save_csv(splits.labeled, pipe.path("labeled.csv"));
  ssat::save_csv(splits.unlabeled, pipe.path("unlabeled.csv"));
  ssat::save_csv(splits.test, pipe.path("test.csv"));
  nlohmann::json meta = {
      {"kind", cfg.data.source == "synthetic"
                   ? ssat::synthetic_kind_name(cfg.data.kind)
                   : "csv"},
      {"n", splits.labeled.size() + splits.unlabeled.size() +
                splits.test.size()},
      {"d", splits.labeled.dim()},
      {"classes", splits.labeled.class_count()},
      {"seed", cfg.seed},
      {"splits",
       {{"labeled", splits.labeled.size()},
        {"unlabeled", splits.unlabeled.size()},
        {"test", splits.test.size()}}}};
  std::ofstream f(pipe.path("data.json"));
  f << meta.dump(2) << '\n';
  std::cout << "wrote " << pipe.path("labeled.csv") << ", unlabeled.csv, "
            << "test.csv, data.json\n";
}

void cmd_train_intermediate(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  pipe.intermediate();
  std::cout << "intermediate model saved to " << pipe.path("intermediate.bin")
            << "\n";
}

void cmd_select(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  const ssat::Selection& sel = pipe.selection();
  ssat::write_manifest_csv(pipe.scored(), pipe.path("manifest.csv"));
  std::cout << "selected " << sel.indices.size() << " points ("
            << sel.boundary_count << " boundary, "
            << sel.indices.size() - sel.boundary_count
            << " random fill); manifest at " << pipe.path("manifest.csv")
            << "\n";
}

void cmd_finetune(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  pipe.ddpm_finetuned();
  std::cout << "fine-tuned diffusion model saved to "
            << pipe.path("ddpm_ft.bin") << "\n";
}

void cmd_generate(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  const ssat::Tensor& g = pipe.generated();
  ssat::Dataset out(g, {}, pipe.data().labeled.class_count(),
                    ssat::Split::kUnlabeled);
  ssat::save_csv(out, pipe.path("generated.csv"));
  std::cout << "generated " << g.rows << " points to "
            << pipe.path("generated.csv") << "\n";
}

void cmd_ssat(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  const ssat::TrainResult& tr = pipe.ssat();
  ssat::write_curve_csv(tr.curve, pipe.path("curve.csv"));
  std::cout << "ssat finished: best epoch " << tr.best_epoch
            << ", robust acc " << tr.best_robust_acc << "; model at "
            << pipe.path("final.bin") << "\n";
}

void cmd_eval(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  ssat::ExperimentConfig cfg = pipe.config();
  const std::string final_path = pipe.path("final.bin");
  if (!fs::exists(final_path)) {
    throw ssat::StageError("evaluation",
                           "no trained model at " + final_path +
                               "; run the ssat subcommand first");
  }
  const ssat::MlpParams params =
      ssat::load_mlp(final_path, ssat::Activation::kRelu);
  const ssat::EvalResult ev =
      ssat::evaluate(params, pipe.data().test, cfg.eval_attack);
  nlohmann::json j = {{"clean_acc", ev.clean_acc},
                      {"robust_acc", ev.robust_acc}};
  std::ofstream f(pipe.path("eval.json"));
  f << j.dump(2) << '\n';
  std::cout << "clean " << ev.clean_acc << " robust " << ev.robust_acc
            << "\n";
}

void cmd_pipeline(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  pipe.run_all();
  const ssat::EvalResult& ev = pipe.final_eval();
  std::cout << "pipeline done: clean " << ev.clean_acc << " robust "
            << ev.robust_acc << "; report at " << pipe.path("report.json")
            << "\n";
}

void cmd_viz(const CommonArgs& args) {
  ssat::Pipeline pipe(load_config(args));
  pipe.emit_svg();
  std::cout << "latent scatter at " << pipe.path("latent.svg") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent clustering-based data reduction for semi-supervised "
               "adversarial training"};
  app.require_subcommand(1);

  CommonArgs args;
  std::map<std::string, std::function<void(const CommonArgs&)>> handlers = {
      {"gen-data", cmd_gen_data},
      {"train-intermediate", cmd_train_intermediate},
      {"select", cmd_select},
      {"finetune", cmd_finetune},
      {"generate", cmd_generate},
      {"ssat", cmd_ssat},
      {"eval", cmd_eval},
      {"pipeline", cmd_pipeline},
      {"viz", cmd_viz},
  };
  const std::map<std::string, std::string> descriptions = {
      {"gen-data", "generate or ingest the dataset and write the splits"},
      {"train-intermediate", "train the pseudo-labeling classifier"},
      {"select", "score the unlabeled pool and select the reduced subset"},
      {"finetune", "fine-tune the diffusion model with a guidance loss"},
      {"generate", "sample the mixed generated set"},
      {"ssat", "run semi-supervised adversarial training"},
      {"eval", "evaluate clean and robust accuracy of the trained model"},
      {"pipeline", "run every stage end to end and emit the report"},
      {"viz", "write the PCA latent scatter"},
  };
  for (auto& [name, handler] : handlers) {
    CLI::App* cmd = app.add_subcommand(name, descriptions.at(name));
    add_common(cmd, args);
    CLI::App* cmd_ptr = cmd;
    auto fn = handler;
    cmd->callback([&args, fn, cmd_ptr]() {
      (void)cmd_ptr;
      fn(args);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ssat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ssat::StageError& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
