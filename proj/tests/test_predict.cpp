#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "unite/data/split.hpp"
#include "unite/data/synthetic.hpp"
#include "unite/data/text_io.hpp"
#include "unite/error.hpp"
#include "unite/model/model.hpp"
#include "unite/predict/predict.hpp"

using namespace unite;
using ad::Tensor;
using predict::PredictiveDistribution;

namespace {

constexpr std::size_t kMaxLen = 12;

data::Cohort small_cohort(std::uint64_t seed, std::size_t n = 60) {
  data::SignalSpec spec;
  spec.min_codes = 4;
  spec.max_codes = 10;
  spec.max_risk_count = 4;
  spec.risk_codes = 3;
  spec.location_features = 5;
  return data::generate_synthetic(n, 30, 20, 0.3, seed, spec, kMaxLen).cohort;
}

// A model whose q(u) is set by hand: free mean, so alpha is the mean of u.
model::Model hand_model(const data::Cohort& cohort, std::size_t M = 4) {
  model::ModelConfig c;
  auto& e = c.embedding;
  e.vocab_size = cohort.vocab.size();
  e.transformer = {1, 2, 8, 16, kMaxLen};
  e.ehr_dim = 6;
  e.tabular_hidden = 4;
  e.location_dim = cohort.location_feature_names.size();
  e.fused_dim = 3;
  c.inducing = M;
  c.free_mean = true;
  model::Model m = model::init_model(c, 1);
  std::vector<std::size_t> rows(cohort.size());
  std::iota(rows.begin(), rows.end(), 0);
  m.scaler = embeddings::Standardizer::fit(cohort, rows);
  m.trained = true;
  return m;
}

Tensor latent_of(const model::Model& m, const data::Cohort& cohort, std::size_t row) {
  const std::vector<std::size_t> rows{row};
  return model::latent_values(m, embeddings::make_batch(cohort, rows, m.scaler));
}

PredictiveDistribution with_variance(std::string id, double v) {
  PredictiveDistribution p;
  p.patient_id = std::move(id);
  p.variance = v;
  return p;
}

}  // namespace

TEST_CASE("moments: two-point sample") {
  const std::vector<double> p{0.2, 0.8};
  const PredictiveDistribution d = predict::moments(p);
  CHECK(d.mean == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.variance == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(d.label == 1);
  CHECK(d.n_samples == 2);
  CHECK(predict::moments(std::vector<double>{0.3, 0.4}).label == 0);
  CHECK_THROWS_AS(predict::moments(std::vector<double>{}), ContractError);
}

TEST_CASE("predict: collapsed conditional gives a certain positive") {
  const data::Cohort cohort = small_cohort(1);
  model::Model m = hand_model(cohort);
  const Tensor v = latent_of(m, cohort, 0);
  Tensor& Z = m.params.at("svgp.z");
  for (std::size_t i = 0; i < Z.rows(); ++i)
    for (std::size_t k = 0; k < Z.cols(); ++k) Z(i, k) = i == 0 ? v(0, k) : 50.0 + 10.0 * static_cast<double>(i);
  m.params.at("svgp.alpha") = Tensor({4, 1}, {50.0, 0.0, 0.0, 0.0});
  m.params.at("svgp.log_sigma2") = Tensor::scalar(std::log(1e-12));
  const auto preds = predict::predict(m, cohort, std::vector<std::size_t>{0}, 64, 3);
  CHECK(preds[0].mean > 1.0 - 1e-9);
  CHECK(preds[0].variance < 1e-12);
  CHECK(preds[0].label == 1);
  CHECK(preds[0].patient_id == cohort.sequences[0].patient_id);
}

TEST_CASE("predict: a point far from every inducing location reverts to the prior") {
  const data::Cohort cohort = small_cohort(2);
  model::Model m = hand_model(cohort);
  Tensor& Z = m.params.at("svgp.z");
  for (std::size_t i = 0; i < Z.rows(); ++i)
    for (std::size_t k = 0; k < Z.cols(); ++k) Z(i, k) = 1000.0 + 10.0 * static_cast<double>(i);
  m.params.at("svgp.alpha") = Tensor({4, 1});

  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  double s = 0.0, ss = 0.0;
  const int draws = 1'000'000;
  for (int i = 0; i < draws; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-normal(rng)));
    s += p;
    ss += p * p;
  }
  const double oracle_mean = s / draws, oracle_var = ss / draws - oracle_mean * oracle_mean;
  CHECK(oracle_var == doctest::Approx(0.0434).epsilon(0.01));

  const auto preds = predict::predict(m, cohort, std::vector<std::size_t>{0, 1, 2}, 20000, 4);
  for (const auto& p : preds) {
    CHECK(std::abs(p.mean - oracle_mean) < 0.01);
    CHECK(std::abs(p.variance - oracle_var) < 2e-3);
  }
}

TEST_CASE("predict: bounds, determinism and independence from the batch") {
  const data::Cohort cohort = small_cohort(3);
  const model::Model m = hand_model(cohort, 6);
  std::vector<std::size_t> rows(cohort.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto all = predict::predict(m, cohort, rows, 64, 9);
  REQUIRE(all.size() == rows.size());
  for (const auto& p : all) {
    CHECK(std::isfinite(p.mean));
    CHECK(p.mean > 0.0);
    CHECK(p.mean < 1.0);
    CHECK(p.variance >= 0.0);
    CHECK(p.variance <= 0.25);
    CHECK(p.label == (p.mean >= 0.5 ? 1 : 0));
  }
  const auto again = predict::predict(m, cohort, rows, 64, 9);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(all[i].mean == again[i].mean);

  const std::vector<std::size_t> subset{17, 3, 40};
  const auto some = predict::predict(m, cohort, subset, 64, 9);
  for (std::size_t k = 0; k < subset.size(); ++k) {
    CHECK(some[k].mean == all[subset[k]].mean);
    CHECK(some[k].variance == all[subset[k]].variance);
  }
}

TEST_CASE("predict: Monte Carlo means converge with B") {
  const data::Cohort cohort = small_cohort(4, 200);
  const model::Model m = hand_model(cohort, 6);
  std::vector<std::size_t> rows(cohort.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto coarse = predict::predict(m, cohort, rows, 512, 5);
  const auto fine = predict::predict(m, cohort, rows, 8192, 6);
  std::size_t close = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    close += std::abs(coarse[i].mean - fine[i].mean) < 3.0 * std::sqrt(0.25 / 512.0);
  CHECK(static_cast<double>(close) >= 0.99 * static_cast<double>(rows.size()));
}

TEST_CASE("predict: contract errors") {
  const data::Cohort cohort = small_cohort(5);
  model::Model m = hand_model(cohort);
  CHECK_THROWS_AS(predict::predict(m, cohort, std::vector<std::size_t>{0}, 1, 1), ContractError);
  m.trained = false;
  CHECK_THROWS_AS(predict::predict(m, cohort, std::vector<std::size_t>{0}, 8, 1), ContractError);
}

TEST_CASE("uncertainty_filter: examples") {
  std::vector<PredictiveDistribution> ten;
  const std::vector<double> vars{0.05, 0.01, 0.09, 0.03, 0.07, 0.02, 0.08, 0.04, 0.06, 0.10};
  for (std::size_t i = 0; i < 10; ++i) ten.push_back(with_variance("P" + std::to_string(i), vars[i]));
  CHECK(predict::uncertainty_filter(ten, 0.0).size() == 10);
  CHECK(predict::uncertainty_filter(ten, 0.5) == std::vector<std::size_t>{0, 1, 3, 5, 7});

  std::vector<PredictiveDistribution> hundred;
  for (int i = 0; i < 100; ++i) hundred.push_back(with_variance("Q" + std::to_string(1000 + i), 0.001 * (i % 37)));
  CHECK(predict::uncertainty_filter(hundred, 0.2).size() == 80);
  CHECK(predict::uncertainty_filter(hundred, 0.5).size() == 50);
  CHECK(predict::uncertainty_filter(hundred, 0.8).size() == 20);
  CHECK_THROWS_WITH_AS(predict::uncertainty_filter(hundred, 1.0), doctest::Contains("empty retained set"),
                       ContractError);
}

TEST_CASE("uncertainty_filter: ties break by patient id") {
  std::vector<PredictiveDistribution> p{with_variance("B", 0.1), with_variance("A", 0.1), with_variance("C", 0.1),
                                        with_variance("D", 0.0)};
  // One removal among the tied trio takes the smallest id.
  CHECK(predict::uncertainty_filter(p, 0.25) == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("uncertainty_filter: retained never exceed removed; invariant to scaling") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 0.25);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + trial % 40;
    std::vector<PredictiveDistribution> p, scaled;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = trial % 2 ? unit(rng) : 0.01 * coarse(rng);
      p.push_back(with_variance("ID" + std::to_string(i), v));
      scaled.push_back(with_variance("ID" + std::to_string(i), v * 3.7));
    }
    for (double q : {0.0, 0.2, 0.5, 0.8}) {
      const auto kept = predict::uncertainty_filter(p, q);
      CHECK(kept.size() == n - static_cast<std::size_t>(std::floor(q * static_cast<double>(n))));
      CHECK(predict::uncertainty_filter(scaled, q) == kept);
      std::vector<bool> is_kept(n, false);
      for (std::size_t i : kept) is_kept[i] = true;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (is_kept[i] && !is_kept[j]) CHECK(p[i].variance <= p[j].variance);
    }
  }
}

TEST_CASE("bipartition: block-diagonal kernel is recovered exactly") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6 + trial % 10;
    std::vector<int> group(n);
    for (std::size_t i = 0; i < n; ++i) group[i] = i < n / 2 - trial % 2 ? 0 : 1;
    std::shuffle(group.begin(), group.end(), rng);
    Tensor K({n, n});
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("P" + std::to_string(i));
      for (std::size_t j = 0; j < n; ++j) K(i, j) = group[i] == group[j] ? 1.0 : 1e-6;
    }
    const predict::CovarianceExport e = predict::bipartition(K, ids);
    CHECK_FALSE(e.degenerate);
    CHECK(predict::cluster_agreement(e.assignment, group) == 1.0);

    double within = 0, cross = 0;
    std::size_t nw = 0, nc = 0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t r = e.ordering[a], c = e.ordering[b];
        if (e.assignment[r] == e.assignment[c]) {
          within += K(r, c);
          ++nw;
        } else {
          cross += K(r, c);
          ++nc;
        }
      }
    CHECK(within / static_cast<double>(nw) >= cross / static_cast<double>(nc));
    // Reordering groups the clusters contiguously.
    for (std::size_t a = 1; a < n; ++a) CHECK(e.assignment[e.ordering[a - 1]] <= e.assignment[e.ordering[a]]);
  }
}

TEST_CASE("bipartition: identical latents are flagged degenerate") {
  const Tensor V({5, 2}, {0.3, -1.0, 0.3, -1.0, 0.3, -1.0, 0.3, -1.0, 0.3, -1.0});
  const Tensor K = kernel::kernel_matrix(V, V, std::vector<double>{1.0, 1.0});
  const predict::CovarianceExport e = predict::bipartition(K, {"a", "b", "c", "d", "e"});
  CHECK(e.degenerate);
  for (int a : e.assignment) CHECK(a == 0);
}

TEST_CASE("bipartition and agreement: errors") {
  CHECK_THROWS_AS(predict::bipartition(Tensor::identity(3), {"a", "b", "c"}), ContractError);
  CHECK_THROWS_AS(predict::bipartition(Tensor::identity(4), {"a", "b", "c"}), ShapeError);
  Tensor skew = Tensor::identity(4);
  skew(0, 1) = 0.5;
  CHECK_THROWS_AS(predict::bipartition(skew, {"a", "b", "c", "d"}), ContractError);
  CHECK(predict::cluster_agreement(std::vector<int>{0, 0, 1, 1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(predict::cluster_agreement(std::vector<int>{0, 1, 1, 1}, std::vector<int>{0, 0, 1, 1}) == 0.75);
  CHECK_THROWS_AS(predict::cluster_agreement(std::vector<int>{0}, std::vector<int>{0, 1}), ShapeError);
}

TEST_CASE("covariance_bicluster: symmetric kernel over the requested patients") {
  const data::Cohort cohort = small_cohort(10);
  const model::Model m = hand_model(cohort);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
  const predict::CovarianceExport e = predict::covariance_bicluster(m, cohort, rows);
  REQUIRE(e.matrix.rows() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(e.patient_ids[i] == cohort.sequences[rows[i]].patient_id);
    CHECK(e.matrix(i, i) == 1.0);
    for (std::size_t j = 0; j < 6; ++j) CHECK(e.matrix(i, j) == e.matrix(j, i));
  }
  CHECK_THROWS_AS(predict::covariance_bicluster(m, cohort, std::vector<std::size_t>{0, 1, 2}), ContractError);
}

TEST_CASE("write_predictions and write_covariance_export") {
  const auto dir = std::filesystem::temp_directory_path() / "unite_test_predict";
  std::filesystem::remove_all(dir);
  PredictiveDistribution p = predict::moments(std::vector<double>{0.2, 0.8});
  p.patient_id = "P1";
  predict::write_predictions({p}, dir / "pred.csv");
  const auto lines = data::read_lines(dir / "pred.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "patient_id,risk_mean,uncertainty,label_pred");
  CHECK(lines[1].rfind("P1,", 0) == 0);
  CHECK(lines[1].back() == '1');

  Tensor K({4, 4});
  const std::vector<int> group{1, 0, 1, 0};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) K(i, j) = group[i] == group[j] ? 1.0 : 0.01;
  const predict::CovarianceExport e = predict::bipartition(K, {"a", "b", "c", "d"});
  predict::write_covariance_export(e, dir / "cov.csv", dir / "cov.json");
  const auto csv = data::read_lines(dir / "cov.csv");
  CHECK(csv.size() == 5);
  const auto j = nlohmann::json::parse(std::ifstream(dir / "cov.json"));
  CHECK(j["ordering"].size() == 4);
  CHECK(j["cluster"].size() == 4);
  CHECK(j["ordering"][0] == "a");
  std::filesystem::remove_all(dir);
}
