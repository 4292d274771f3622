#include "unite/model/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "unite/data/text_io.hpp"
#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::model {

using ad::Tensor;
using nlohmann::json;

void ModelConfig::validate() const {
  embedding.validate();
  if (inducing < 1) throw ConfigError("the inducing point count must be at least 1");
  if (!(jitter >= 0.0)) throw ConfigError("jitter must be non-negative");
  if (!(initial_lengthscale > 0.0)) throw ConfigError("initial lengthscale must be positive");
  if (!(initial_sigma2 > 0.0)) throw ConfigError("initial variational variance must be positive");
}

svgp::VariationalState Model::variational_state() const {
  svgp::VariationalState s;
  s.Z = params.at("svgp.z");
  s.alpha = params.at("svgp.alpha");
  s.log_sigma2 = params.at("svgp.log_sigma2").item();
  s.free_mean = config.free_mean;
  return s;
}

std::vector<double> Model::lengthscales() const {
  std::vector<double> l;
  for (double x : params.at("kernel.log_lengthscale").data()) l.push_back(std::exp(x));
  return l;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  embeddings::init_parameters(m.params, config.embedding, seed);
  const std::size_t D = config.embedding.fused_dim, M = config.inducing;
  m.params.add("kernel.log_lengthscale", Tensor({1, D}, std::log(config.initial_lengthscale)));
  Rng rng = make_rng(seed, Stream::init, 1);
  m.params.add("svgp.z", standard_normal(rng, {M, D}));
  m.params.add("svgp.alpha", Tensor({config.free_mean ? M : D, 1}));
  m.params.add("svgp.log_sigma2", Tensor::scalar(std::log(config.initial_sigma2)));
  return m;
}

ad::Var latent(ad::Scope& scope, const Model& model, const embeddings::Batch& batch) {
  return embeddings::fused_latent(scope, model.config.embedding, batch);
}

Tensor latent_values(const Model& model, const embeddings::Batch& batch) {
  ad::Tape tape;
  ad::Scope scope(tape, model.params);
  return latent(scope, model, batch).value();
}

void initialize_inducing(Model& model, const data::Cohort& cohort, std::span<const std::size_t> rows,
                         std::uint64_t seed, std::size_t subsample) {
  if (rows.empty()) throw DataError("inducing-point initialization needs patients");
  std::vector<std::size_t> pool(rows.begin(), rows.end());
  if (pool.size() > subsample) {
    Rng rng = make_rng(seed, Stream::kmeans, 1);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(subsample);
  }
  const std::size_t D = model.config.embedding.fused_dim;
  Tensor X({pool.size(), D});
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < pool.size(); start += kChunk) {
    const std::size_t stop = std::min(pool.size(), start + kChunk);
    const Tensor v = latent_values(model, embeddings::make_batch(cohort, std::span(pool).subspan(start, stop - start),
                                                                  model.scaler));
    std::copy(v.data().begin(), v.data().end(), X.data().begin() + static_cast<std::ptrdiff_t>(start * D));
  }
  model.params.at("svgp.z") = svgp::kmeans(X, model.config.inducing, seed);
}

void initialize_variational_mean(Model& model) {
  const Tensor& Z = model.params.at("svgp.z");
  const Tensor& w = model.params.at("head.w");
  const Tensor& b = model.params.at("head.b");
  const std::size_t M = Z.rows(), D = Z.cols();
  Eigen::VectorXd target(static_cast<Eigen::Index>(M));
  for (std::size_t i = 0; i < M; ++i) {
    double logit = b[1] - b[0];
    for (std::size_t k = 0; k < D; ++k) logit += Z(i, k) * (w(k, 1) - w(k, 0));
    target(static_cast<Eigen::Index>(i)) = logit;
  }
  Tensor& alpha = model.params.at("svgp.alpha");
  if (model.config.free_mean) {
    for (std::size_t i = 0; i < M; ++i) alpha[i] = target(static_cast<Eigen::Index>(i));
    return;
  }
  Eigen::MatrixXd Zm(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(D));
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < D; ++k) Zm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = Z(i, k);
  const Eigen::VectorXd a = Zm.completeOrthogonalDecomposition().solve(target);
  for (std::size_t k = 0; k < D; ++k) alpha[k] = a(static_cast<Eigen::Index>(k));
}

svgp::ElboVars elbo_graph(ad::Scope& scope, const Model& model, const embeddings::Batch& batch,
                          const svgp::ElboNoise& noise, double total_count) {
  ad::Var V = latent(scope, model, batch);
  return svgp::elbo(V, batch.labels, scope.param("svgp.z"), scope.param("svgp.alpha"), scope.param("svgp.log_sigma2"),
                    scope.param("kernel.log_lengthscale"), model.config.free_mean, noise, total_count,
                    model.config.jitter);
}

svgp::ElboEstimate elbo_batch(const Model& model, const embeddings::Batch& batch, std::size_t B, double total_count,
                              std::uint64_t seed) {
  const svgp::ElboNoise noise = svgp::ElboNoise::draw(model.config.inducing, batch.size, B, seed);
  ad::Tape tape;
  ad::Scope scope(tape, model.params);
  const svgp::ElboEstimate e = svgp::summarize(elbo_graph(scope, model, batch, noise, total_count));
  if (!std::isfinite(e.value)) throw NumericalError("ELBO estimate is not finite");
  return e;
}

json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.values()}}; }

Tensor tensor_from_json(const json& j) {
  auto shape = j.at("shape").get<Tensor::Shape>();
  auto values = j.at("values").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(values));
}

json parameters_to_json(const ad::ParameterSet& params) {
  json out = json::object();
  for (const auto& [name, entry] : params.entries()) {
    json t = tensor_to_json(entry.value);
    t["trainable"] = entry.trainable;
    out[name] = std::move(t);
  }
  return out;
}

ad::ParameterSet parameters_from_json(const json& j) {
  ad::ParameterSet p;
  for (const auto& [name, t] : j.items()) p.add(name, tensor_from_json(t), t.at("trainable").get<bool>());
  return p;
}

json config_to_json(const ModelConfig& c) {
  const embeddings::EmbeddingConfig& e = c.embedding;
  return {{"vocab_size", e.vocab_size},
          {"n_blocks", e.transformer.n_blocks},
          {"n_heads", e.transformer.n_heads},
          {"model_dim", e.transformer.model_dim},
          {"feedforward_dim", e.transformer.feedforward_dim},
          {"max_len", e.transformer.max_len},
          {"ehr_dim", e.ehr_dim},
          {"tabular_hidden", e.tabular_hidden},
          {"tabular_dim", e.tabular_dim},
          {"demographics_dim", e.demographics_dim},
          {"location_dim", e.location_dim},
          {"fused_dim", e.fused_dim},
          {"use_demographics", e.use_demographics},
          {"use_location", e.use_location},
          {"inducing", c.inducing},
          {"free_mean", c.free_mean},
          {"jitter", c.jitter},
          {"initial_lengthscale", c.initial_lengthscale},
          {"initial_sigma2", c.initial_sigma2}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  embeddings::EmbeddingConfig& e = c.embedding;
  j.at("vocab_size").get_to(e.vocab_size);
  j.at("n_blocks").get_to(e.transformer.n_blocks);
  j.at("n_heads").get_to(e.transformer.n_heads);
  j.at("model_dim").get_to(e.transformer.model_dim);
  j.at("feedforward_dim").get_to(e.transformer.feedforward_dim);
  j.at("max_len").get_to(e.transformer.max_len);
  j.at("ehr_dim").get_to(e.ehr_dim);
  j.at("tabular_hidden").get_to(e.tabular_hidden);
  j.at("tabular_dim").get_to(e.tabular_dim);
  j.at("demographics_dim").get_to(e.demographics_dim);
  j.at("location_dim").get_to(e.location_dim);
  j.at("fused_dim").get_to(e.fused_dim);
  j.at("use_demographics").get_to(e.use_demographics);
  j.at("use_location").get_to(e.use_location);
  j.at("inducing").get_to(c.inducing);
  j.at("free_mean").get_to(c.free_mean);
  j.at("jitter").get_to(c.jitter);
  j.at("initial_lengthscale").get_to(c.initial_lengthscale);
  j.at("initial_sigma2").get_to(c.initial_sigma2);
  return c;
}

json model_to_json(const Model& m) {
  const embeddings::Standardizer& s = m.scaler;
  return {{"format", "unite-checkpoint"},
          {"format_version", kCheckpointVersion},
          {"config", config_to_json(m.config)},
          {"trained", m.trained},
          {"scaler",
           {{"demographics_mean", s.demographics_mean},
            {"demographics_scale", s.demographics_scale},
            {"location_mean", s.location_mean},
            {"location_scale", s.location_scale}}},
          {"parameters", parameters_to_json(m.params)}};
}

Model model_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "unite-checkpoint") throw DataError("not a model checkpoint");
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("unsupported checkpoint format_version " + std::to_string(version));
    }
    Model m;
    m.config = config_from_json(j.at("config"));
    m.trained = j.at("trained").get<bool>();
    const json& s = j.at("scaler");
    s.at("demographics_mean").get_to(m.scaler.demographics_mean);
    s.at("demographics_scale").get_to(m.scaler.demographics_scale);
    s.at("location_mean").get_to(m.scaler.location_mean);
    s.at("location_scale").get_to(m.scaler.location_scale);
    m.params = parameters_from_json(j.at("parameters"));

    const Model reference = init_model(m.config, 0);
    for (const auto& [name, entry] : reference.params.entries()) {
      if (!m.params.contains(name)) throw DataError("checkpoint lacks parameter '" + name + "'");
      if (!m.params.at(name).same_shape(entry.value)) {
        throw DataError("checkpoint parameter '" + name + "' has shape " + ad::shape_string(m.params.at(name).shape()) +
                        " but the configuration implies " + ad::shape_string(entry.value.shape()));
      }
    }
    if (m.params.names().size() != reference.params.names().size()) {
      throw DataError("checkpoint has parameters the configuration does not define");
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const json& extra) {
  json j = model_to_json(model);
  if (!extra.is_null()) j["training"] = extra;
  data::write_text(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open checkpoint");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed checkpoint (" + e.what() + ")");
  }
  Checkpoint c{model_from_json(j), j.contains("training") ? j.at("training") : json(nullptr)};
  return c;
}

}  // namespace unite::model
