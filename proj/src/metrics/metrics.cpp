#include "unite/metrics/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <vector>

#include "unite/error.hpp"

namespace unite::metrics {

namespace {

void check_binary(std::span<const int> v, const char* what) {
  for (int x : v)
    if (x != 0 && x != 1) throw ContractError(std::string(what) + " must be 0 or 1");
}

}  // namespace

Confusion confusion(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.empty()) throw ContractError("metrics of an empty set");
  if (labels.size() != predictions.size()) throw ShapeError("labels and predictions differ in length");
  check_binary(labels, "labels");
  check_binary(predictions, "predictions");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] && predictions[i]) ++c.tp;
    else if (!labels[i] && predictions[i]) ++c.fp;
    else if (labels[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1(std::span<const int> labels, std::span<const int> predictions) {
  const Confusion c = confusion(labels, predictions);
  // 2PR/(P+R) simplifies to 2tp / (2tp + fp + fn).
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 || c.tp == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double cohens_kappa(std::span<const int> labels, std::span<const int> predictions) {
  const Confusion c = confusion(labels, predictions);
  const double n = static_cast<double>(labels.size());
  const double po = static_cast<double>(c.tp + c.tn) / n;
  const double true_pos = static_cast<double>(c.tp + c.fn) / n, pred_pos = static_cast<double>(c.tp + c.fp) / n;
  const double pe = true_pos * pred_pos + (1.0 - true_pos) * (1.0 - pred_pos);
  if (pe >= 1.0) return 0.0;
  return (po - pe) / (1.0 - pe);
}

double pr_auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw ShapeError("labels and scores differ in length");
  check_binary(labels, "labels");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw ContractError("pr_auc needs at least one positive label");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double area = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double threshold = scores[order[k]];
    while (k < order.size() && scores[order[k]] == threshold) {
      tp += labels[order[k]];
      ++seen;
      ++k;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += precision * (recall - prev_recall);
    prev_recall = recall;
  }
  return area;
}

EvalResult evaluate(std::span<const int> labels, std::span<const int> predictions, std::span<const double> scores) {
  EvalResult r;
  r.f1 = f1(labels, predictions);
  r.kappa = cohens_kappa(labels, predictions);
  r.pr_auc = pr_auc(labels, scores);
  r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.negatives = labels.size() - r.positives;
  return r;
}

TTest paired_t_test(std::span<const double> diffs) {
  if (diffs.size() < 2) throw ContractError("paired_t_test needs at least 2 differences");
  const double n = static_cast<double>(diffs.size());
  const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / n;
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) throw ContractError("degenerate differences");
  TTest r;
  r.t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1.0);
  r.p_one_sided = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

}  // namespace unite::metrics
