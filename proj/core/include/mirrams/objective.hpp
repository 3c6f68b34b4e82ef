#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mirrams/graph.hpp"
#include "mirrams/missingness.hpp"
#include "mirrams/model.hpp"

namespace mirrams {

class ObjectiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossConfig {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double tau = 0.9;
  double r = 0.0;

  void validate() const;
};

struct LossReport {
  double l1 = 0.0, l2 = 0.0, l3 = 0.0;
  double pass_rate = 0.0;  // fraction of the L3 source batch with confidence >= tau
  double total = 0.0;      // l1 + lambda1*l2 + lambda2*l3
};

struct BatchView {
  const TabularDataset* ds = nullptr;
  std::vector<std::size_t> rows;
  MaskMatrix view;  // rows.size() x p observation mask for this view

  std::vector<int> labels_of() const;
};

// Standalone term evaluations (no dropout; fresh graph per call).
// The masked view composes the batch view with one Bernoulli draw from the
// masker's seed, the same draw total_loss would share between L2 and L3.
double loss_l1(const MirramsModel& m, const BatchView& batch);
double loss_l2(const MirramsModel& m, const BatchView& batch, const BernoulliMasker& masker);

struct L3Result {
  double loss = 0.0;
  double pass_rate = 0.0;
};
L3Result loss_l3(const MirramsModel& m, const BatchView& batch, const BernoulliMasker& masker, double tau);

LossReport total_loss(const LossConfig& cfg, const MirramsModel& m, const BatchView& labeled,
                      const BatchView* unlabeled, const BernoulliMasker& masker);

// Training-step loss graph. The clean forward populates the dropout stores;
// the masked forward replays them, so both views see identical noise. The
// pseudo-label branch of L3 reads detached values only. With
// lambda1 = lambda2 = 0 the returned node IS the L1 node and mask_rng is
// never touched.
struct StepLoss {
  int node = -1;
  LossReport report;
};

StepLoss build_total_loss(Graph& g, const MirramsModel& m, const std::vector<int>& leaves, const LossConfig& cfg,
                          const BatchView& labeled, const BatchView* unlabeled, Rng& mask_rng,
                          std::vector<Tensor>* drop_labeled, std::vector<Tensor>* drop_unlabeled, Rng* drop_rng);

// host-side detached pseudo-labels: argmax class and max softmax per row
struct PseudoLabels {
  std::vector<std::int32_t> label;
  std::vector<double> confidence;
};
PseudoLabels pseudo_from_logits(const Tensor& logits);

}  // namespace mirrams
