#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "unite/data/split.hpp"
#include "unite/data/synthetic.hpp"
#include "unite/embeddings/embeddings.hpp"
#include "unite/embeddings/pretrain.hpp"
#include "unite/error.hpp"
#include "unite/model/model.hpp"

using namespace unite;
using namespace unite::embeddings;
using ad::Tensor;

namespace {

constexpr std::size_t kMaxLen = 12;

data::SyntheticCohort small_cohort(std::uint64_t seed, std::size_t n = 120) {
  data::SignalSpec spec;
  spec.min_codes = 4;
  spec.max_codes = 10;
  spec.max_risk_count = 4;
  spec.risk_codes = 3;
  spec.location_features = 5;
  return data::generate_synthetic(n, 30, 20, 0.3, seed, spec, kMaxLen);
}

EmbeddingConfig small_config(const data::Cohort& cohort) {
  EmbeddingConfig c;
  c.vocab_size = cohort.vocab.size();
  c.transformer = {1, 2, 8, 16, kMaxLen};
  c.ehr_dim = 6;
  c.tabular_hidden = 4;
  c.location_dim = cohort.location_feature_names.size();
  c.fused_dim = 5;
  return c;
}

std::vector<std::size_t> all_rows(const data::Cohort& cohort) {
  std::vector<std::size_t> rows(cohort.size());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

Tensor evaluate_ehr(const ad::ParameterSet& params, const EmbeddingConfig& c, const Batch& b) {
  ad::Tape tape;
  ad::Scope scope(tape, params);
  return embed_ehr(scope, c, b).value();
}

Tensor evaluate_latent(const ad::ParameterSet& params, const EmbeddingConfig& c, const Batch& b) {
  ad::Tape tape;
  ad::Scope scope(tape, params);
  return fused_latent(scope, c, b).value();
}

bool rows_equal(const Tensor& t, std::size_t a, std::size_t b) {
  for (std::size_t k = 0; k < t.cols(); ++k)
    if (t(a, k) != t(b, k)) return false;
  return true;
}

}  // namespace

TEST_CASE("config: defaults and validation") {
  EmbeddingConfig c;
  c.vocab_size = 10;
  CHECK(c.tabular_dim == 2);
  CHECK(c.concat_dim() == 128 + 2 + 2);
  CHECK(c.fused_dim == 16);
  CHECK_NOTHROW(c.validate());
  c.transformer.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.transformer.n_heads = 8;
  c.transformer.n_blocks = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("embed_ehr: shape, determinism, order sensitivity, pad masking") {
  const auto syn = small_cohort(1);
  const data::Cohort& cohort = syn.cohort;
  const EmbeddingConfig c = small_config(cohort);
  ad::ParameterSet params;
  init_parameters(params, c, 3);
  const Standardizer scaler = Standardizer::fit(cohort, all_rows(cohort));

  // Row 0 and row 1 are the same patient; row 1 later gets edits.
  std::vector<std::size_t> rows{0, 0};
  Batch b = make_batch(cohort, rows, scaler);
  const Tensor base = evaluate_ehr(params, c, b);
  REQUIRE(base.rows() == 2);
  REQUIRE(base.cols() == c.ehr_dim);
  CHECK(rows_equal(base, 0, 1));

  const std::size_t len = cohort.sequences[0].length;
  REQUIRE(len < kMaxLen);
  std::size_t i = 0, j = 1;
  while (b.tokens[kMaxLen + i] == b.tokens[kMaxLen + j]) ++j;
  REQUIRE(j < len);
  std::swap(b.tokens[kMaxLen + i], b.tokens[kMaxLen + j]);
  const Tensor swapped = evaluate_ehr(params, c, b);
  CHECK(rows_equal(swapped, 0, 0));
  CHECK_FALSE(rows_equal(swapped, 0, 1));

  std::swap(b.tokens[kMaxLen + i], b.tokens[kMaxLen + j]);
  for (std::size_t t = len; t < kMaxLen; ++t) b.tokens[kMaxLen + t] = 2 + t % 5;
  const Tensor padded = evaluate_ehr(params, c, b);
  for (std::size_t k = 0; k < c.ehr_dim; ++k) CHECK(padded(1, k) == doctest::Approx(base(0, k)).epsilon(1e-12));
}

TEST_CASE("embed_ehr: errors") {
  const auto syn = small_cohort(2);
  const EmbeddingConfig c = small_config(syn.cohort);
  ad::ParameterSet params;
  init_parameters(params, c, 1);
  const Standardizer scaler = Standardizer::fit(syn.cohort, all_rows(syn.cohort));
  Batch b = make_batch(syn.cohort, std::vector<std::size_t>{3}, scaler);
  Batch empty = b;
  std::fill(empty.key_mask.begin(), empty.key_mask.end(), 0);
  std::fill(empty.pool_weights.begin(), empty.pool_weights.end(), 0.0);
  std::fill(empty.tokens.begin(), empty.tokens.end(), data::kPadId);
  CHECK_THROWS_WITH_AS(evaluate_ehr(params, c, empty), doctest::Contains("no content tokens"), DataError);
  EmbeddingConfig longer = c;
  longer.transformer.max_len = kMaxLen + 1;
  CHECK_THROWS_AS(evaluate_ehr(params, longer, b), ShapeError);
}

TEST_CASE("embed_tabular: zero weights, identity path, dimension mismatch") {
  ad::ParameterSet p;
  p.add("t.l1.w", Tensor({2, 2}));
  p.add("t.l1.b", Tensor({1, 2}));
  p.add("t.l2.w", Tensor({2, 2}));
  p.add("t.l2.b", Tensor({1, 2}));
  const Tensor x({2, 2}, {0.5, -1.5, -0.25, 2.0});
  {
    ad::Tape tape;
    ad::Scope s(tape, p);
    for (double v : embed_tabular(s, "t", tape.constant(x)).value().data()) CHECK(v == 0.0);
  }
  p.at("t.l1.w") = Tensor::identity(2);
  p.at("t.l2.w") = Tensor::identity(2);
  {
    ad::Tape tape;
    ad::Scope s(tape, p);
    const Tensor out = embed_tabular(s, "t", tape.constant(x)).value();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == std::max(x[i], 0.0));
    CHECK_THROWS_AS(embed_tabular(s, "t", tape.constant(Tensor({2, 3}))), ShapeError);
  }
}

TEST_CASE("embed_tabular: output dimension 2 under defaults") {
  const auto syn = small_cohort(3);
  EmbeddingConfig c = small_config(syn.cohort);
  c.tabular_hidden = EmbeddingConfig{}.tabular_hidden;
  ad::ParameterSet params;
  init_parameters(params, c, 1);
  const Batch b = make_batch(syn.cohort, std::vector<std::size_t>{0, 1, 2}, Standardizer::fit(syn.cohort, all_rows(syn.cohort)));
  ad::Tape tape;
  ad::Scope s(tape, params);
  CHECK(embed_tabular(s, "demo", tape.constant(b.demographics)).value().cols() == 2);
  CHECK(embed_tabular(s, "loc", tape.constant(b.location)).value().cols() == 2);
}

TEST_CASE("fuse: ones concatenate, zeros annihilate, shapes checked") {
  ad::Tape tape;
  const Tensor hd({2, 3}, {1, 2, 3, 4, 5, 6}), hs({2, 2}, {7, 8, 9, 10}), hg({2, 2}, {11, 12, 13, 14});
  auto run = [&](double w) {
    return fuse(tape.constant(hd), tape.constant(hs), tape.constant(hg), tape.constant(Tensor({1, 3}, w)),
                tape.constant(Tensor({1, 2}, w)), tape.constant(Tensor({1, 2}, w)))
        .value();
  };
  const Tensor ones = run(1.0);
  REQUIRE(ones.cols() == 7);
  const std::vector<double> row0{1, 2, 3, 7, 8, 11, 12};
  for (std::size_t k = 0; k < 7; ++k) CHECK(ones(0, k) == row0[k]);
  const Tensor zeros = run(0.0);
  CHECK(zeros.cols() == 7);
  for (double v : zeros.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(fuse(tape.constant(hd), tape.constant(hs), tape.constant(hg), tape.constant(Tensor({1, 2}, 1.0)),
                       tape.constant(Tensor({1, 2}, 1.0)), tape.constant(Tensor({1, 2}, 1.0))),
                  ShapeError);
  CHECK_THROWS_AS(fuse(tape.constant(hd), tape.constant(Tensor({3, 2})), tape.constant(hg),
                       tape.constant(Tensor({1, 3}, 1.0)), tape.constant(Tensor({1, 2}, 1.0)),
                       tape.constant(Tensor({1, 2}, 1.0))),
                  ShapeError);
}

TEST_CASE("fused_latent: default widths give 132 before projection to 16") {
  const auto syn = small_cohort(4);
  EmbeddingConfig c;
  c.vocab_size = syn.cohort.vocab.size();
  c.transformer.max_len = kMaxLen;
  c.location_dim = syn.cohort.location_feature_names.size();
  ad::ParameterSet params;
  init_parameters(params, c, 1);
  CHECK(params.at("fuse.proj.w").rows() == 132);
  const Batch b = make_batch(syn.cohort, std::vector<std::size_t>{0, 1}, Standardizer::fit(syn.cohort, all_rows(syn.cohort)));
  const Tensor v = evaluate_latent(params, c, b);
  CHECK(v.rows() == 2);
  CHECK(v.cols() == 16);
  CHECK(v.all_finite());
}

TEST_CASE("ablation: disabled towers are frozen and contribute nothing") {
  const auto syn = small_cohort(5);
  EmbeddingConfig c = small_config(syn.cohort);
  c.use_location = false;
  ad::ParameterSet params;
  init_parameters(params, c, 1);
  CHECK_FALSE(params.trainable("loc.l1.w"));
  CHECK_FALSE(params.trainable("fuse.w_g"));
  CHECK(params.trainable("demo.l1.w"));
  const Standardizer scaler = Standardizer::fit(syn.cohort, all_rows(syn.cohort));
  Batch b = make_batch(syn.cohort, std::vector<std::size_t>{0, 1, 2}, scaler);
  const Tensor before = evaluate_latent(params, c, b);
  for (double& x : b.location.data()) x += 3.0;
  CHECK(evaluate_latent(params, c, b) == before);
}

TEST_CASE("standardizer: zero mean, unit scale on the fitted rows") {
  const auto syn = small_cohort(6);
  const Standardizer s = Standardizer::fit(syn.cohort, all_rows(syn.cohort));
  const Batch b = make_batch(syn.cohort, all_rows(syn.cohort), s);
  for (std::size_t k = 0; k < b.location.cols(); ++k) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < b.size; ++i) mean += b.location(i, k) / static_cast<double>(b.size);
    for (std::size_t i = 0; i < b.size; ++i) sq += std::pow(b.location(i, k) - mean, 2) / static_cast<double>(b.size);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(sq == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pretrain: zero epochs leaves the weights unchanged") {
  const auto syn = small_cohort(7);
  const EmbeddingConfig c = small_config(syn.cohort);
  ad::ParameterSet params;
  init_parameters(params, c, 1);
  const ad::ParameterSet before = params;
  PretrainConfig pc;
  pc.epochs = 0;
  const auto rows = all_rows(syn.cohort);
  pretrain(params, c, syn.cohort, Standardizer::fit(syn.cohort, rows), rows, pc);
  CHECK(params == before);
}

TEST_CASE("pretrain: separable cohort is fit, loss trends down, frozen towers stay put") {
  data::SignalSpec spec;
  spec.risk_weight = 40.0;
  spec.location_weight = 0.0;
  spec.age_weight = 0.0;
  spec.noise_sd = 0.0;
  spec.risk_codes = 3;
  spec.min_codes = 8;
  spec.max_codes = 8;
  spec.max_risk_count = 8;
  spec.location_features = 4;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto syn = data::generate_synthetic(300, 30, 20, 0.3, seed, spec, kMaxLen);
    EmbeddingConfig c = small_config(syn.cohort);
    c.use_demographics = false;
    ad::ParameterSet params;
    init_parameters(params, c, seed);
    const ad::Tensor frozen = params.at("demo.l1.w");
    const auto rows = all_rows(syn.cohort);
    const Standardizer scaler = Standardizer::fit(syn.cohort, rows);
    PretrainConfig pc;
    pc.epochs = 40;
    pc.batch_size = 32;
    pc.adam.learning_rate = 1e-2;
    pc.seed = seed;
    const PretrainReport r = pretrain(params, c, syn.cohort, scaler, rows, pc);
    REQUIRE(r.epoch_loss.size() == 40);
    CHECK(r.epoch_loss.back() <= r.epoch_loss.front());
    CHECK(r.train_accuracy > 0.95);
    CHECK(params.at("demo.l1.w") == frozen);
  }
}

TEST_CASE("pre-training loss gradients w.r.t. fusion weights match finite differences") {
  const auto syn = small_cohort(8, 40);
  const EmbeddingConfig c = small_config(syn.cohort);
  ad::Graph graph;
  init_parameters(graph.parameters, c, 2);
  for (const std::string& name : graph.parameters.names())
    graph.parameters.set_trainable(name, name.rfind("fuse.w_", 0) == 0);
  const auto rows = all_rows(syn.cohort);
  const Batch b = make_batch(syn.cohort, std::vector<std::size_t>(rows.begin(), rows.begin() + 10),
                             Standardizer::fit(syn.cohort, rows));
  graph.body = [&](ad::Scope& s) { return std::map<std::string, ad::Var>{{"loss", pretrain_loss(s, c, b)}}; };
  const ad::GradientCheckReport report = ad::check_gradient(graph, {}, "loss", 1e-6, 1e-4);
  CHECK(report.checked == c.ehr_dim + 2 * c.tabular_dim);
  CHECK(report.passed);
}

TEST_CASE("checkpoint: write and read back exactly") {
  const auto syn = small_cohort(9);
  model::ModelConfig mc;
  mc.embedding = small_config(syn.cohort);
  mc.inducing = 4;
  model::Model m = model::init_model(mc, 5);
  m.scaler = Standardizer::fit(syn.cohort, all_rows(syn.cohort));
  m.trained = true;
  const std::filesystem::path path = std::filesystem::temp_directory_path() / "unite_test_embeddings_ckpt.json";
  model::save_checkpoint(m, path, nlohmann::json{{"note", 1}});
  const model::Checkpoint back = model::load_checkpoint(path);
  CHECK(back.model.params == m.params);
  CHECK(back.model.scaler == m.scaler);
  CHECK(back.model.trained);
  CHECK(model::config_to_json(back.model.config) == model::config_to_json(mc));
  CHECK(back.training.at("note") == 1);

  nlohmann::json j = model::model_to_json(m);
  j["parameters"].erase("fuse.w_d");
  CHECK_THROWS_AS(model::model_from_json(j), DataError);
  std::filesystem::remove(path);
}
