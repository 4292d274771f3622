#include <CLI11.hpp>
#include <iomanip>
#include <optional>
#include <ostream>

#include "unite/cli/commands.hpp"
#include "unite/error.hpp"

namespace unite::cli {

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ablate;
  std::string data;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Common& c, bool model_input) {
  cmd->add_option("--config", c.config_path, "key = value configuration file");
  cmd->add_option("--seed", c.seed, "overrides the configured seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--ablate", c.ablate, "drop a modality")->check(CLI::IsMember({"location", "demographics", "both", "location+demographics"}));
  cmd->add_option("--data", c.data, "cohort directory (default: data_dir)");
  if (model_input) cmd->add_option("--checkpoint", c.checkpoint, "model checkpoint (default: <out>/checkpoint.json)");
}

RunConfig resolve(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) config.seed = *c.seed;
  if (!c.ablate.empty()) config.ablate(c.ablate);
  if (!c.data.empty()) config.data_dir = c.data;
  return config;
}

fs::path out_dir(const Common& c, const std::string& fallback) {
  const fs::path dir = c.out.empty() ? fs::path(fallback) : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

fs::path checkpoint_of(const Common& c, const fs::path& out) {
  return c.checkpoint.empty() ? out / "checkpoint.json" : fs::path(c.checkpoint);
}

void print_table(std::ostream& out, const std::vector<FilterRow>& rows) {
  out << std::setw(9) << "removed" << std::setw(10) << "retained" << std::setw(9) << "f1" << std::setw(9) << "kappa"
      << std::setw(9) << "pr_auc" << "\n";
  out << std::fixed << std::setprecision(4);
  for (const FilterRow& r : rows) {
    out << std::setw(8) << std::setprecision(0) << r.fraction * 100 << "%" << std::setw(10) << r.retained
        << std::setprecision(4) << std::setw(9) << r.f1 << std::setw(9) << r.kappa << std::setw(9) << r.pr_auc
        << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal deep-kernel Gaussian process risk prediction"};
  app.require_subcommand(1);
  Common common;
  bool resume = false;

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic planted-signal cohort");
  add_common(generate, common, false);
  CLI::App* train = app.add_subcommand("train", "pre-train and fit the model");
  add_common(train, common, false);
  train->add_flag("--resume", resume, "continue from <out>/checkpoint.json");
  CLI::App* evaluate = app.add_subcommand("evaluate", "test metrics under uncertainty filtering");
  add_common(evaluate, common, true);
  CLI::App* predict = app.add_subcommand("predict", "per-patient risk and uncertainty on the test split");
  add_common(predict, common, true);
  CLI::App* covariance = app.add_subcommand("export-covariance", "kernel matrix and bipartition of a test sample");
  add_common(covariance, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig config = resolve(common);
    if (generate->parsed()) {
      const fs::path dir = out_dir(common, config.data_dir);
      const data::SyntheticCohort s = cmd_generate(config, dir);
      out << "wrote " << s.cohort.size() << " patients (positive rate " << s.cohort.positive_rate() << ") to "
          << dir.string() << "\n";
    } else if (train->parsed()) {
      const fs::path dir = out_dir(common, "run");
      const train::TrainReport r = cmd_train(config, config.data_dir, dir, resume, err);
      out << "stopped: " << r.stop_reason << ", best epoch " << r.best_epoch << "; checkpoint "
          << (dir / "checkpoint.json").string() << "\n";
    } else if (evaluate->parsed()) {
      const fs::path dir = out_dir(common, "run");
      print_table(out, cmd_evaluate(config, config.data_dir, checkpoint_of(common, dir), dir, err));
    } else if (predict->parsed()) {
      const fs::path dir = out_dir(common, "run");
      const auto preds = cmd_predict(config, config.data_dir, checkpoint_of(common, dir), dir, err);
      out << "wrote " << preds.size() << " predictions to " << (dir / "predictions.csv").string() << "\n";
    } else if (covariance->parsed()) {
      const fs::path dir = out_dir(common, "run");
      const CovarianceRun r = cmd_export_covariance(config, config.data_dir, checkpoint_of(common, dir), dir, err);
      out << "clusters " << (r.exported.degenerate ? "degenerate" : "found") << ", label agreement "
          << predict::cluster_agreement(r.exported.assignment, r.labels) << "\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace unite::cli
