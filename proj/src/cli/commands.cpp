#include "unite/cli/commands.hpp"

#include <algorithm>
#include <ostream>

#include "unite/data/io.hpp"
#include "unite/data/text_io.hpp"
#include "unite/error.hpp"
#include "unite/metrics/metrics.hpp"
#include "unite/random.hpp"

namespace unite::cli {

namespace {

model::Model load_model(const fs::path& checkpoint, const data::Cohort& cohort) {
  model::Model m = model::load_checkpoint(checkpoint).model;
  const auto& e = m.config.embedding;
  if (e.vocab_size != cohort.vocab.size() || e.transformer.max_len != cohort.max_len ||
      e.location_dim != cohort.location_feature_names.size()) {
    throw ConfigError("checkpoint dimensions (vocab " + std::to_string(e.vocab_size) + ", max_len " +
                      std::to_string(e.transformer.max_len) + ", location " + std::to_string(e.location_dim) +
                      ") do not match the cohort (vocab " + std::to_string(cohort.vocab.size()) + ", max_len " +
                      std::to_string(cohort.max_len) + ", location " +
                      std::to_string(cohort.location_feature_names.size()) + ")");
  }
  if (!m.trained) throw DataError(checkpoint.string() + ": model has not been trained");
  return m;
}

std::vector<int> labels_of(const data::Cohort& cohort, const std::vector<std::size_t>& rows) {
  std::vector<int> y;
  for (std::size_t i : rows) y.push_back(cohort.sequences[i].label);
  return y;
}

}  // namespace

void emit_config(const RunConfig& config, const fs::path& dir) { data::write_text(dir / "config.txt", config.resolved()); }

data::Cohort load_split_cohort(const RunConfig& config, const fs::path& dir, std::ostream& log) {
  data::Cohort cohort = data::load_cohort(data::CohortPaths::in_directory(dir), config.max_len);
  for (const std::string& w : cohort.warnings) log << "warning: " << w << "\n";
  return data::split(std::move(cohort), config.split_ratios(), config.seed);
}

data::SyntheticCohort cmd_generate(const RunConfig& config, const fs::path& out) {
  data::SyntheticCohort s = data::generate_synthetic(config.n_patients, config.vocab_size, config.n_locations,
                                                     config.positive_rate, config.seed, config.signal, config.max_len);
  data::write_cohort(s.cohort, out);
  data::write_planted_truth(s, out / "planted.csv");
  emit_config(config, out);
  return s;
}

train::TrainReport cmd_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out, bool resume,
                             std::ostream& log) {
  const data::Cohort cohort = load_split_cohort(config, data_dir, log);
  const train::TrainConfig tc = config.train_config();
  const fs::path checkpoint = out / "checkpoint.json";
  emit_config(config, out);

  model::Model m = model::init_model(config.model_config(cohort.vocab.size(), cohort.location_feature_names.size()),
                                     config.seed);
  train::TrainingState state;
  if (resume && fs::exists(checkpoint)) {
    model::Checkpoint saved = model::load_checkpoint(checkpoint);
    if (!saved.training.is_object() || !saved.training.contains("state"))
      throw DataError(checkpoint.string() + ": no training state to resume");
    m = std::move(saved.model);
    state = train::state_from_json(saved.training.at("state"));
    log << "resuming after epoch " << state.epoch << "\n";
  }

  train::TrainReport report;
  if (tc.max_epochs == 0) {
    report = train::fit(m, cohort, tc, state);
    model::save_checkpoint(m, checkpoint, {{"state", train::state_to_json(state)}});
  }
  // One epoch per call so every epoch leaves a resumable checkpoint.
  while (!state.finished() && state.epoch < tc.max_epochs) {
    train::TrainConfig step = tc;
    step.max_epochs = state.epoch + 1;
    const bool first = !state.prepared;
    train::TrainReport r = train::fit(m, cohort, step, state);
    if (first) report.pretrain = r.pretrain;
    model::save_checkpoint(m, checkpoint, {{"state", train::state_to_json(state)}});
    data::write_text(out / "train_log.jsonl", train::training_log(state.history));
    const train::EpochRecord& e = state.history.back();
    log << "epoch " << e.epoch << " elbo " << e.elbo << " val_f1 " << e.val_f1 << " val_prauc " << e.val_prauc
        << "\n";
  }
  data::write_text(out / "train_log.jsonl", train::training_log(state.history));
  report.epochs = state.history;
  report.best_epoch = state.best_epoch;
  report.stop_reason = state.finished() ? state.stop_reason : "max_epochs";
  return report;
}

std::vector<FilterRow> cmd_evaluate(const RunConfig& config, const fs::path& data_dir, const fs::path& checkpoint,
                                    const fs::path& out, std::ostream& log) {
  const data::Cohort cohort = load_split_cohort(config, data_dir, log);
  const model::Model m = load_model(checkpoint, cohort);
  const std::vector<std::size_t> test = cohort.indices(data::Split::test);
  const auto preds = predict::predict(m, cohort, test, config.B_predict, config.seed);
  const std::vector<int> labels = labels_of(cohort, test);

  std::vector<FilterRow> rows;
  std::string csv = "fraction,retained,f1,kappa,pr_auc\n";
  for (double q : config.filter_fractions) {
    const std::vector<std::size_t> kept = predict::uncertainty_filter(preds, q);
    std::vector<int> y, yhat;
    std::vector<double> s;
    for (std::size_t k : kept) {
      y.push_back(labels[k]);
      yhat.push_back(preds[k].label);
      s.push_back(preds[k].mean);
    }
    FilterRow row;
    row.fraction = q;
    row.retained = kept.size();
    row.f1 = metrics::f1(y, yhat);
    row.kappa = metrics::cohens_kappa(y, yhat);
    row.pr_auc = std::count(y.begin(), y.end(), 1) > 0 ? metrics::pr_auc(y, s) : 0.0;
    rows.push_back(row);
    csv += data::format_double(q) + "," + std::to_string(row.retained) + "," + data::format_double(row.f1) + "," +
           data::format_double(row.kappa) + "," + data::format_double(row.pr_auc) + "\n";
  }
  data::write_text(out / "evaluation.csv", csv);
  emit_config(config, out);
  return rows;
}

std::vector<predict::PredictiveDistribution> cmd_predict(const RunConfig& config, const fs::path& data_dir,
                                                         const fs::path& checkpoint, const fs::path& out,
                                                         std::ostream& log) {
  const data::Cohort cohort = load_split_cohort(config, data_dir, log);
  const model::Model m = load_model(checkpoint, cohort);
  const auto preds = predict::predict(m, cohort, cohort.indices(data::Split::test), config.B_predict, config.seed);
  predict::write_predictions(preds, out / "predictions.csv");
  emit_config(config, out);
  return preds;
}

CovarianceRun cmd_export_covariance(const RunConfig& config, const fs::path& data_dir, const fs::path& checkpoint,
                                    const fs::path& out, std::ostream& log) {
  if (config.n_sample < 4 || config.n_sample % 2 != 0) throw ConfigError("n_sample must be an even number >= 4");
  const data::Cohort cohort = load_split_cohort(config, data_dir, log);
  const model::Model m = load_model(checkpoint, cohort);
  std::vector<std::size_t> by_class[2];
  for (std::size_t i : cohort.indices(data::Split::test)) by_class[cohort.sequences[i].label].push_back(i);
  const std::size_t half = config.n_sample / 2;
  if (by_class[0].size() < half || by_class[1].size() < half) {
    throw DataError("test split has " + std::to_string(by_class[1].size()) + " positives and " +
                    std::to_string(by_class[0].size()) + " negatives; n_sample " + std::to_string(config.n_sample) +
                    " needs " + std::to_string(half) + " of each");
  }
  Rng rng = make_rng(config.seed, Stream::predict, 1);
  std::vector<std::size_t> rows;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    rows.insert(rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(half));
  }
  std::shuffle(rows.begin(), rows.end(), rng);
  CovarianceRun run{predict::covariance_bicluster(m, cohort, rows), labels_of(cohort, rows)};
  predict::write_covariance_export(run.exported, out / "covariance.csv", out / "covariance.json");
  emit_config(config, out);
  return run;
}

}  // namespace unite::cli
