#include "unite/train/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "unite/error.hpp"
#include "unite/metrics/metrics.hpp"
#include "unite/predict/predict.hpp"
#include "unite/random.hpp"

namespace unite::train {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (B_train < 1 || B_eval < 2) throw ConfigError("Monte Carlo sample counts are too small");
  if (smoothing < 1) throw ConfigError("smoothing window must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

namespace {

json moments_to_json(const std::map<std::string, ad::Tensor>& m) {
  json out = json::object();
  for (const auto& [name, t] : m) out[name] = model::tensor_to_json(t);
  return out;
}

std::map<std::string, ad::Tensor> moments_from_json(const json& j) {
  std::map<std::string, ad::Tensor> out;
  for (const auto& [name, t] : j.items()) out.emplace(name, model::tensor_from_json(t));
  return out;
}

json record_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},         {"elbo", r.elbo},           {"val_elbo", r.val_elbo}, {"val_f1", r.val_f1},
          {"val_kappa", r.val_kappa}, {"val_prauc", r.val_prauc}, {"seconds", r.seconds}};
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  j.at("epoch").get_to(r.epoch);
  j.at("elbo").get_to(r.elbo);
  j.at("val_elbo").get_to(r.val_elbo);
  j.at("val_f1").get_to(r.val_f1);
  j.at("val_kappa").get_to(r.val_kappa);
  j.at("val_prauc").get_to(r.val_prauc);
  j.at("seconds").get_to(r.seconds);
  return r;
}

// Fits q(u) and the lengthscales to the frozen pre-trained latents.
void warm_up_variational(model::Model& model, const data::Cohort& cohort, const std::vector<std::size_t>& train_rows,
                         const TrainConfig& config) {
  if (config.warmup_epochs == 0) return;
  const std::size_t n = train_rows.size(), D = model.config.embedding.fused_dim;
  ad::Tensor latents({n, D});
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t stop = std::min(n, start + kChunk);
    const ad::Tensor v = model::latent_values(
        model, embeddings::make_batch(cohort, std::span(train_rows).subspan(start, stop - start), model.scaler));
    std::copy(v.data().begin(), v.data().end(), latents.data().begin() + static_cast<std::ptrdiff_t>(start * D));
  }
  std::vector<std::size_t> order(n);
  AdamMoments moments;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.warmup_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(config.seed, Stream::shuffle, 2'000'000 + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      ad::Tensor V({stop - start, D});
      std::vector<int> labels;
      for (std::size_t r = start; r < stop; ++r) {
        for (std::size_t k = 0; k < D; ++k) V(r - start, k) = latents(order[r], k);
        labels.push_back(cohort.sequences[train_rows[order[r]]].label);
      }
      const svgp::ElboNoise noise = svgp::ElboNoise::draw(
          model.config.inducing, stop - start, config.B_train, derive_seed(config.seed, Stream::warmup, step));
      ad::Tape tape;
      ad::Scope scope(tape, model.params);
      const svgp::ElboVars vars =
          svgp::elbo(tape.constant(std::move(V)), labels, scope.param("svgp.z"), scope.param("svgp.alpha"),
                     scope.param("svgp.log_sigma2"), scope.param("kernel.log_lengthscale"), model.config.free_mean,
                     noise, static_cast<double>(n), model.config.jitter);
      if (!std::isfinite(vars.value.value().item())) throw NumericalError("ELBO is not finite during warm-up");
      ad::GradientMap grads = tape.backward(ad::scale(vars.value, -1.0 / static_cast<double>(n)));
      clip_global_norm(grads, config.clip_norm);
      adam_step(model.params, grads, moments, config.adam, ++step);
    }
  }
}

void prepare(model::Model& model, const data::Cohort& cohort, const std::vector<std::size_t>& train_rows,
             const TrainConfig& config, TrainReport& report) {
  if (model.scaler.empty()) model.scaler = embeddings::Standardizer::fit(cohort, train_rows);
  if (config.pretrain_epochs > 0) {
    embeddings::PretrainConfig pc;
    pc.epochs = config.pretrain_epochs;
    pc.batch_size = config.batch_size;
    pc.adam = config.adam;
    pc.clip_norm = config.clip_norm;
    pc.seed = config.seed;
    report.pretrain = embeddings::pretrain(model.params, model.config.embedding, cohort, model.scaler, train_rows, pc);
  }
  model::initialize_inducing(model, cohort, train_rows, config.seed);
  if (config.pretrain_epochs > 0) model::initialize_variational_mean(model);
  warm_up_variational(model, cohort, train_rows, config);
}

}  // namespace

json state_to_json(const TrainingState& s) {
  json history = json::array();
  for (const EpochRecord& r : s.history) history.push_back(record_to_json(r));
  return {{"prepared", s.prepared},
          {"epoch", s.epoch},
          {"step", s.step},
          {"adam_first", moments_to_json(s.moments.first)},
          {"adam_second", moments_to_json(s.moments.second)},
          {"history", history},
          {"val_elbo", s.val_elbo},
          {"best_score", s.best_score},
          {"best_epoch", s.best_epoch},
          {"since_best", s.since_best},
          {"best", model::parameters_to_json(s.best)},
          {"current", model::parameters_to_json(s.current)},
          {"initial_elbo", s.initial_elbo},
          {"stop_reason", s.stop_reason}};
}

TrainingState state_from_json(const json& j) {
  TrainingState s;
  try {
    j.at("prepared").get_to(s.prepared);
    j.at("epoch").get_to(s.epoch);
    j.at("step").get_to(s.step);
    s.moments.first = moments_from_json(j.at("adam_first"));
    s.moments.second = moments_from_json(j.at("adam_second"));
    for (const json& r : j.at("history")) s.history.push_back(record_from_json(r));
    j.at("val_elbo").get_to(s.val_elbo);
    j.at("best_score").get_to(s.best_score);
    j.at("best_epoch").get_to(s.best_epoch);
    j.at("since_best").get_to(s.since_best);
    s.best = model::parameters_from_json(j.at("best"));
    s.current = model::parameters_from_json(j.at("current"));
    j.at("initial_elbo").get_to(s.initial_elbo);
    j.at("stop_reason").get_to(s.stop_reason);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed training state: ") + e.what());
  }
  return s;
}

TrainReport fit(model::Model& model, const data::Cohort& cohort, const TrainConfig& config) {
  TrainingState state;
  return fit(model, cohort, config, state);
}

TrainReport fit(model::Model& model, const data::Cohort& cohort, const TrainConfig& config, TrainingState& state) {
  config.validate();
  TrainReport report;
  report.epochs = state.history;
  if (config.max_epochs == 0) {
    report.stop_reason = "max_epochs";
    return report;
  }
  const std::vector<std::size_t> train_rows = cohort.indices(data::Split::train);
  const std::vector<std::size_t> val_rows = cohort.indices(data::Split::validation);
  if (train_rows.empty()) throw DataError("cohort has no training split");
  if (val_rows.empty()) throw DataError("cohort has no validation split");

  if (!state.prepared) {
    prepare(model, cohort, train_rows, config, report);
    state.prepared = true;
    state.best = model.params;
  } else if (!state.current.empty()) {
    model.params = state.current;
  }

  const double P = static_cast<double>(train_rows.size());
  const embeddings::Batch val_batch = embeddings::make_batch(cohort, val_rows, model.scaler);
  std::vector<int> val_labels;
  for (std::size_t i : val_rows) val_labels.push_back(cohort.sequences[i].label);

  std::vector<std::size_t> order = train_rows;
  while (!state.finished() && state.epoch < config.max_epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    order = train_rows;
    Rng shuffle_rng = make_rng(config.seed, Stream::shuffle, state.epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double elbo_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const embeddings::Batch batch =
          embeddings::make_batch(cohort, std::span(order).subspan(start, stop - start), model.scaler);
      const svgp::ElboNoise noise = svgp::ElboNoise::draw(model.config.inducing, batch.size, config.B_train,
                                                          derive_seed(config.seed, Stream::monte_carlo, state.step));
      ad::Tape tape;
      ad::Scope scope(tape, model.params);
      const svgp::ElboVars vars = model::elbo_graph(scope, model, batch, noise, P);
      const double value = vars.value.value().item();
      if (!std::isfinite(value)) throw NumericalError("ELBO is not finite at epoch " + std::to_string(state.epoch + 1));
      ad::GradientMap grads = tape.backward(ad::scale(vars.value, -1.0 / P));
      grads.erase("head.w");
      grads.erase("head.b");
      clip_global_norm(grads, config.clip_norm);
      adam_step(model.params, grads, state.moments, config.adam, ++state.step);
      elbo_sum += value;
      ++n_batches;
    }

    EpochRecord rec;
    rec.epoch = state.epoch + 1;
    rec.elbo = elbo_sum / static_cast<double>(n_batches);
    rec.val_elbo = model::elbo_batch(model, val_batch, config.B_eval, static_cast<double>(val_rows.size()),
                                     derive_seed(config.seed, Stream::validation, state.epoch))
                       .value;
    model.trained = true;
    const auto preds = predict::predict(model, cohort, val_rows, config.B_eval,
                                        derive_seed(config.seed, Stream::validation, 1'000'000 + state.epoch));
    std::vector<int> pred_labels;
    std::vector<double> scores;
    for (const auto& p : preds) {
      pred_labels.push_back(p.label);
      scores.push_back(p.mean);
    }
    rec.val_f1 = metrics::f1(val_labels, pred_labels);
    rec.val_kappa = metrics::cohens_kappa(val_labels, pred_labels);
    rec.val_prauc = std::count(val_labels.begin(), val_labels.end(), 1) > 0 ? metrics::pr_auc(val_labels, scores) : 0.0;

    if (state.epoch == 0) state.initial_elbo = rec.elbo;
    state.val_elbo.push_back(rec.val_elbo);
    const std::size_t w = std::min(config.smoothing, state.val_elbo.size());
    const double smoothed =
        std::accumulate(state.val_elbo.end() - static_cast<std::ptrdiff_t>(w), state.val_elbo.end(), 0.0) /
        static_cast<double>(w);
    if (state.best_epoch == 0 || smoothed > state.best_score + config.min_improvement * std::abs(state.best_score)) {
      state.best_score = smoothed;
      state.best_epoch = rec.epoch;
      state.best = model.params;
      state.since_best = 0;
    } else {
      ++state.since_best;
    }
    ++state.epoch;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(rec);
    report.epochs.push_back(rec);

    if (rec.elbo < state.initial_elbo - 10.0 * std::abs(state.initial_elbo)) {
      state.stop_reason = "diverged";
      model.params = state.best;
      throw NumericalError("training diverged at epoch " + std::to_string(rec.epoch) + ": ELBO " +
                           std::to_string(rec.elbo) + " against initial " + std::to_string(state.initial_elbo));
    }
    if (state.since_best >= config.patience) state.stop_reason = "converged";
  }
  state.current = model.params;
  model.params = state.best;
  model.trained = true;
  report.stop_reason = state.finished() ? state.stop_reason : "max_epochs";
  report.best_epoch = state.best_epoch;
  return report;
}

std::string training_log(const std::vector<EpochRecord>& epochs) {
  std::string out;
  for (const EpochRecord& r : epochs) {
    json j = {{"epoch", r.epoch},         {"elbo", r.elbo},           {"val_f1", r.val_f1},
              {"val_kappa", r.val_kappa}, {"val_prauc", r.val_prauc}, {"seconds", r.seconds}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace unite::train
