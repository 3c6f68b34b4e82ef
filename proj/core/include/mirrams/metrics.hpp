#pragma once

#include <stdexcept>
#include <vector>

namespace mirrams {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScoredLabels {
  std::vector<double> scores;  // positive-class probability or any monotone score
  std::vector<int> labels;     // 0/1
};

// Rank statistic with midrank tie handling: P(s_pos > s_neg) + 0.5 P(tie).
double auc(const ScoredLabels& sl);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample std, 0 when n < 2
};

MeanStd mean_std(const std::vector<double>& xs);

}  // namespace mirrams
