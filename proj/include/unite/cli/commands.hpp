#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "unite/cli/run_config.hpp"
#include "unite/predict/predict.hpp"
#include "unite/train/fit.hpp"

namespace unite::cli {

namespace fs = std::filesystem;

/// Writes the resolved configuration as config.txt under dir.
void emit_config(const RunConfig& config, const fs::path& dir);

/// Loads the cohort files under dir and applies the configured split.
data::Cohort load_split_cohort(const RunConfig& config, const fs::path& dir, std::ostream& log);

/// Synthetic cohort files, planted.csv and config.txt under out.
data::SyntheticCohort cmd_generate(const RunConfig& config, const fs::path& out);

/// Pre-training and joint training. Writes checkpoint.json after every epoch
/// (model plus loop state), train_log.jsonl and config.txt. With resume, an
/// unfinished checkpoint.json under out is continued.
train::TrainReport cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out, bool resume,
                             std::ostream& log);

struct FilterRow {
  double fraction = 0.0;
  std::size_t retained = 0;
  double f1 = 0.0;
  double kappa = 0.0;
  double pr_auc = 0.0;
};

/// Test-split metrics after dropping the most uncertain patients, one row per
/// configured fraction. Writes evaluation.csv.
std::vector<FilterRow> cmd_evaluate(const RunConfig& config, const fs::path& data_dir, const fs::path& checkpoint,
                                    const fs::path& out, std::ostream& log);

/// Writes predictions.csv for the test split.
std::vector<predict::PredictiveDistribution> cmd_predict(const RunConfig& config, const fs::path& data_dir,
                                                         const fs::path& checkpoint, const fs::path& out,
                                                         std::ostream& log);

/// Class-balanced test sample of n_sample patients; writes covariance.csv and
/// covariance.json. Returns the export with the sampled labels.
struct CovarianceRun {
  predict::CovarianceExport exported;
  std::vector<int> labels;
};
CovarianceRun cmd_export_covariance(const RunConfig& config, const fs::path& data_dir, const fs::path& checkpoint,
                                    const fs::path& out, std::ostream& log);

/// Entry point of the command-line tool. Exit codes: 0 success, 1 usage or
/// unexpected error, 2 configuration, 3 data, 4 numerical failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace unite::cli
