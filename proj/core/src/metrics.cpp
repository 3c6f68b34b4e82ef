#include "mirrams/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mirrams {

double auc(const ScoredLabels& sl) {
  const std::size_t n = sl.scores.size();
  if (n == 0 || sl.labels.size() != n)
    throw MetricError("auc: " + std::to_string(n) + " scores vs " + std::to_string(sl.labels.size()) + " labels");
  std::size_t npos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(sl.scores[i])) throw MetricError("auc: non-finite score at " + std::to_string(i));
    if (sl.labels[i] != 0 && sl.labels[i] != 1)
      throw MetricError("auc: label " + std::to_string(sl.labels[i]) + " is not binary");
    npos += static_cast<std::size_t>(sl.labels[i]);
  }
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw MetricError("auc: both classes required, got " + std::to_string(npos) + " positives of " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return sl.scores[a] < sl.scores[b]; });

  // midranks over tie groups, 1-based
  double rank_pos_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && sl.scores[order[j]] == sl.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t)
      if (sl.labels[order[t]] == 1) rank_pos_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
  return (rank_pos_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw MetricError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(labels.size()) + " labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return out;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return out;
}

}  // namespace mirrams
