#include "unite/predict/predict.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "unite/autodiff/linalg.hpp"
#include "unite/data/text_io.hpp"
#include "unite/error.hpp"
#include "unite/random.hpp"

namespace unite::predict {

using ad::Tensor;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Eigen::Map<const RowMat> as_mat(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

}  // namespace

PredictiveDistribution moments(std::span<const double> p) {
  if (p.empty()) throw ContractError("moments of an empty sample");
  PredictiveDistribution out;
  out.n_samples = p.size();
  out.mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
  double ss = 0.0;
  for (double x : p) ss += (x - out.mean) * (x - out.mean);
  out.variance = ss / static_cast<double>(p.size());
  out.label = out.mean >= 0.5 ? 1 : 0;
  return out;
}

std::vector<PredictiveDistribution> predict(const model::Model& m, const data::Cohort& cohort,
                                            std::span<const std::size_t> rows, std::size_t B, std::uint64_t seed) {
  if (!m.trained) throw ContractError("predict: model has not been trained");
  if (B < 2) throw ContractError("predict: B must be at least 2");
  const svgp::VariationalState state = m.variational_state();
  const std::vector<double> ls = m.lengthscales();
  const std::size_t M = state.inducing_count();
  const kernel::Factorization chol = kernel::stable_cholesky(kernel::kernel_matrix(state.Z, state.Z, ls), m.config.jitter);
  const auto L = as_mat(chol.lower);
  const Tensor mean_u = state.mean();
  const double sd_u = std::exp(0.5 * state.log_sigma2);

  std::vector<PredictiveDistribution> out;
  out.reserve(rows.size());
  std::vector<double> p(B);
  // Per-patient forward passes, bitwise independent of the other rows.
  for (const std::size_t row : rows) {
    const embeddings::Batch batch = embeddings::make_batch(cohort, std::span(&row, 1), m.scaler);
    const Tensor V = model::latent_values(m, batch);
    const Tensor Kzv = kernel::kernel_matrix(state.Z, V, ls);
    // a = L^-1 k_Zv, then b = L^-T a so that a . (L^-1 u) = b . u.
    const Eigen::VectorXd a = L.triangularView<Eigen::Lower>().solve(as_mat(Kzv).col(0));
    const Eigen::VectorXd b = L.transpose().triangularView<Eigen::Upper>().solve(a);
    const double sd_f = std::sqrt(std::max(0.0, 1.0 - a.squaredNorm()));
    const std::string& id = batch.patient_ids[0];
    Rng rng = make_rng(derive_seed(seed, Stream::predict, hash_string(id)), Stream::monte_carlo);
    std::normal_distribution<double> normal;
    double base = 0.0;
    for (std::size_t k = 0; k < M; ++k) base += b(static_cast<Eigen::Index>(k)) * mean_u[k];
    for (std::size_t j = 0; j < B; ++j) {
      double f = base;
      for (std::size_t k = 0; k < M; ++k) f += b(static_cast<Eigen::Index>(k)) * sd_u * normal(rng);
      f += sd_f * normal(rng);
      p[j] = sigmoid(f);
    }
    PredictiveDistribution d = moments(p);
    d.patient_id = id;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<std::size_t> uncertainty_filter(const std::vector<PredictiveDistribution>& predictions,
                                            double remove_fraction) {
  if (!(remove_fraction >= 0.0)) throw ContractError("remove fraction must be non-negative");
  if (remove_fraction >= 1.0) throw ContractError("empty retained set");
  const std::size_t n = predictions.size();
  const auto n_remove = static_cast<std::size_t>(std::floor(remove_fraction * static_cast<double>(n)));
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    if (predictions[a].variance != predictions[b].variance) return predictions[a].variance > predictions[b].variance;
    return predictions[a].patient_id < predictions[b].patient_id;
  });
  std::vector<std::size_t> kept(rank.begin() + static_cast<std::ptrdiff_t>(n_remove), rank.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

CovarianceExport bipartition(const Tensor& K, std::vector<std::string> patient_ids) {
  const std::size_t n = K.rows();
  if (K.rank() != 2 || K.cols() != n) throw ShapeError("bipartition: matrix is not square");
  if (patient_ids.size() != n) throw ShapeError("bipartition: id count differs from matrix size");
  if (n < 4) throw ContractError("bipartition needs at least 4 patients");
  if (ad::max_asymmetry(K) > 1e-10) throw ContractError("bipartition: matrix is not symmetric");

  const auto Km = as_mat(K);
  Eigen::VectorXd degree = Km.rowwise().sum();
  if ((degree.array() <= 0.0).any()) throw NumericalError("bipartition: non-positive degree");
  const Eigen::VectorXd inv_sqrt = degree.array().rsqrt();
  Eigen::MatrixXd N = inv_sqrt.asDiagonal() * Km * inv_sqrt.asDiagonal();
  const Eigen::VectorXd trivial = degree.array().sqrt().matrix().normalized();
  N -= trivial * trivial.transpose();
  N = 0.5 * (N + N.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(N);
  if (solver.info() != Eigen::Success) throw NumericalError("bipartition: eigen-solver did not converge");
  const Eigen::Index top = solver.eigenvalues().size() - 1;
  Eigen::VectorXd v = solver.eigenvectors().col(top);
  // Fix the eigenvector's sign so the first patient always lands in cluster 0.
  if (v(0) > 0) v = -v;

  CovarianceExport out;
  out.patient_ids = std::move(patient_ids);
  out.matrix = K;
  out.separation = solver.eigenvalues()(top);
  out.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.assignment[i] = v(static_cast<Eigen::Index>(i)) > 0 ? 1 : 0;
  const auto ones = std::count(out.assignment.begin(), out.assignment.end(), 1);
  out.degenerate = out.separation < 1e-8 || ones == 0 || ones == static_cast<std::ptrdiff_t>(n);
  if (out.degenerate) std::fill(out.assignment.begin(), out.assignment.end(), 0);

  out.ordering.resize(n);
  std::iota(out.ordering.begin(), out.ordering.end(), 0);
  std::stable_sort(out.ordering.begin(), out.ordering.end(), [&](std::size_t a, std::size_t b) {
    if (out.assignment[a] != out.assignment[b]) return out.assignment[a] < out.assignment[b];
    return v(static_cast<Eigen::Index>(a)) < v(static_cast<Eigen::Index>(b));
  });
  return out;
}

CovarianceExport covariance_bicluster(const model::Model& m, const data::Cohort& cohort,
                                      std::span<const std::size_t> rows) {
  if (rows.size() < 4) throw ContractError("covariance export needs at least 4 patients");
  const embeddings::Batch batch = embeddings::make_batch(cohort, rows, m.scaler);
  const Tensor V = model::latent_values(m, batch);
  return bipartition(kernel::kernel_matrix(V, V, m.lengthscales()), batch.patient_ids);
}

double cluster_agreement(std::span<const int> assignment, std::span<const int> labels) {
  if (assignment.size() != labels.size() || assignment.empty()) throw ShapeError("cluster_agreement: length mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) same += assignment[i] == labels[i];
  const double a = static_cast<double>(same) / static_cast<double>(labels.size());
  return std::max(a, 1.0 - a);
}

void write_predictions(const std::vector<PredictiveDistribution>& predictions, const std::filesystem::path& path) {
  std::string text = "patient_id,risk_mean,uncertainty,label_pred\n";
  for (const auto& p : predictions) {
    text += p.patient_id + "," + data::format_double(p.mean) + "," + data::format_double(p.variance) + "," +
            std::to_string(p.label) + "\n";
  }
  data::write_text(path, text);
}

void write_covariance_export(const CovarianceExport& e, const std::filesystem::path& csv_path,
                             const std::filesystem::path& json_path) {
  std::string csv = "patient_id";
  for (std::size_t c : e.ordering) csv += "," + e.patient_ids[c];
  csv += "\n";
  for (std::size_t r : e.ordering) {
    csv += e.patient_ids[r];
    for (std::size_t c : e.ordering) csv += "," + data::format_double(e.matrix(r, c));
    csv += "\n";
  }
  data::write_text(csv_path, csv);

  nlohmann::json j;
  std::vector<std::string> ordered_ids;
  std::vector<int> ordered_clusters;
  for (std::size_t r : e.ordering) {
    ordered_ids.push_back(e.patient_ids[r]);
    ordered_clusters.push_back(e.assignment[r]);
  }
  j["ordering"] = ordered_ids;
  j["cluster"] = ordered_clusters;
  j["separation"] = e.separation;
  j["degenerate"] = e.degenerate;
  data::write_text(json_path, j.dump(2) + "\n");
}

}  // namespace unite::predict
