#include "unite/embeddings/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::embeddings {

ad::Var pretrain_loss(ad::Scope& scope, const EmbeddingConfig& config, const Batch& batch) {
  return ad::cross_entropy(head_logits(scope, fused_latent(scope, config, batch)), batch.labels);
}

double head_accuracy(const ad::ParameterSet& params, const EmbeddingConfig& config, const Batch& batch) {
  ad::Tape tape;
  ad::Scope scope(tape, params);
  const ad::Tensor logits = head_logits(scope, fused_latent(scope, config, batch)).value();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size; ++i) correct += (logits(i, 1) >= logits(i, 0) ? 1 : 0) == batch.labels[i];
  return static_cast<double>(correct) / static_cast<double>(batch.size);
}

PretrainReport pretrain(ad::ParameterSet& params, const EmbeddingConfig& config, const data::Cohort& cohort,
                        const Standardizer& scaler, std::span<const std::size_t> rows, const PretrainConfig& options) {
  if (rows.empty()) throw DataError("pre-training needs a non-empty training split");
  if (options.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  std::vector<std::string> names = network_parameter_names(params);
  names.push_back("head.b");
  names.push_back("head.w");

  PretrainReport report;
  train::AdamMoments moments;
  std::size_t step = 0;
  std::vector<std::size_t> order(rows.begin(), rows.end());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng = make_rng(options.seed, Stream::shuffle, 1'000'000 + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      const Batch batch = make_batch(cohort, std::span(order).subspan(start, stop - start), scaler);
      ad::Tape tape;
      ad::Scope scope(tape, params);
      ad::Var loss = pretrain_loss(scope, config, batch);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericalError("pre-training loss is not finite at epoch " + std::to_string(epoch + 1));
      }
      ad::GradientMap all = tape.backward(loss);
      ad::GradientMap grads;
      for (const std::string& name : names)
        if (auto it = all.find(name); it != all.end()) grads.emplace(name, std::move(it->second));
      train::clip_global_norm(grads, options.clip_norm);
      train::adam_step(params, grads, moments, options.adam, ++step);
      loss_sum += value;
      ++n_batches;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(n_batches));
  }
  if (options.epochs > 0) report.train_accuracy = head_accuracy(params, config, make_batch(cohort, rows, scaler));
  return report;
}

}  // namespace unite::embeddings
