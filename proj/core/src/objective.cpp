#include "mirrams/objective.hpp"

#include <cmath>

namespace mirrams {

void LossConfig::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ObjectiveError("loss config: lambdas must be nonnegative");
  if (!(tau > 0.0)) throw ObjectiveError("loss config: tau must be positive");
  if (!(r >= 0.0 && r < 1.0)) throw ObjectiveError("loss config: r must be in [0,1)");
}

std::vector<int> BatchView::labels_of() const {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = ds->labels[rows[i]];
  return out;
}

PseudoLabels pseudo_from_logits(const Tensor& logits) {
  const std::size_t n = logits.rows(), k = logits.cols();
  PseudoLabels out;
  out.label.resize(n);
  out.confidence.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = logits.data() + r * k;
    std::size_t best = 0;
    double m = x[0];
    for (std::size_t c = 1; c < k; ++c)
      if (x[c] > m) {
        m = x[c];
        best = c;
      }
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(x[c] - m);
    out.label[r] = static_cast<std::int32_t>(best);
    out.confidence[r] = 1.0 / z;  // exp(m - m) / z
  }
  return out;
}

namespace {

std::vector<std::int32_t> to_i32(const std::vector<int>& xs) {
  return std::vector<std::int32_t>(xs.begin(), xs.end());
}

}  // namespace

StepLoss build_total_loss(Graph& g, const MirramsModel& m, const std::vector<int>& leaves, const LossConfig& cfg,
                          const BatchView& labeled, const BatchView* unlabeled, Rng& mask_rng,
                          std::vector<Tensor>* drop_labeled, std::vector<Tensor>* drop_unlabeled, Rng* drop_rng) {
  cfg.validate();
  StepLoss out;
  const std::size_t p = labeled.ds->p();

  const int logits_clean = m.forward_logits(g, leaves, *labeled.ds, labeled.rows, labeled.view, drop_labeled, drop_rng);
  const int l1 = g.mean_rows(g.log_softmax_nll(logits_clean, to_i32(labeled.labels_of())));
  out.report.l1 = g.value(l1).item();
  int total = l1;

  const bool ssl = unlabeled != nullptr;
  const bool want_l2 = cfg.lambda1 > 0.0;
  const bool want_l3 = cfg.lambda2 > 0.0;

  int logits_masked_lab = -1;
  if (want_l2 || (want_l3 && !ssl)) {
    const MaskMatrix bern = sample_bernoulli_masks(cfg.r, labeled.rows.size(), p, mask_rng);
    const MaskMatrix composed = compose_masks(labeled.view, bern);
    logits_masked_lab = m.forward_logits(g, leaves, *labeled.ds, labeled.rows, composed, drop_labeled, drop_rng);
  }
  if (want_l2) {
    const int l2 = g.mean_rows(g.log_softmax_nll(logits_masked_lab, to_i32(labeled.labels_of())));
    out.report.l2 = g.value(l2).item();
    total = g.add(total, g.scale(l2, cfg.lambda1));
  }
  if (want_l3) {
    int clean_src = logits_clean, masked_src = logits_masked_lab;
    std::size_t n_src = labeled.rows.size();
    if (ssl) {
      clean_src = m.forward_logits(g, leaves, *unlabeled->ds, unlabeled->rows, unlabeled->view, drop_unlabeled,
                                   drop_rng);
      const MaskMatrix bern = sample_bernoulli_masks(cfg.r, unlabeled->rows.size(), p, mask_rng);
      const MaskMatrix composed = compose_masks(unlabeled->view, bern);
      masked_src = m.forward_logits(g, leaves, *unlabeled->ds, unlabeled->rows, composed, drop_unlabeled, drop_rng);
      n_src = unlabeled->rows.size();
    }
    const PseudoLabels pl = pseudo_from_logits(g.value(clean_src));
    Tensor weights({n_src, 1});
    std::size_t passed = 0;
    for (std::size_t i = 0; i < n_src; ++i) {
      const bool pass = pl.confidence[i] >= cfg.tau;
      weights[i] = pass ? 1.0 : 0.0;
      passed += pass;
    }
    out.report.pass_rate = static_cast<double>(passed) / static_cast<double>(n_src);
    // mean over ALL rows; non-passing rows contribute 0
    const int l3 = g.mean_rows(g.cmul(g.log_softmax_nll(masked_src, pl.label), std::move(weights)));
    out.report.l3 = g.value(l3).item();
    total = g.add(total, g.scale(l3, cfg.lambda2));
  }

  out.node = total;
  out.report.total = g.value(total).item();
  if (!std::isfinite(out.report.total)) throw ObjectiveError("total loss is non-finite");
  return out;
}

double loss_l1(const MirramsModel& m, const BatchView& batch) {
  Graph g;
  const auto leaves = m.bind(g);
  const int logits = m.forward_logits(g, leaves, *batch.ds, batch.rows, batch.view);
  return g.value(g.mean_rows(g.log_softmax_nll(logits, to_i32(batch.labels_of())))).item();
}

double loss_l2(const MirramsModel& m, const BatchView& batch, const BernoulliMasker& masker) {
  Graph g;
  const auto leaves = m.bind(g);
  Rng rng(masker.seed);
  const MaskMatrix bern = sample_bernoulli_masks(masker.r, batch.rows.size(), batch.ds->p(), rng);
  const MaskMatrix composed = compose_masks(batch.view, bern);
  const int logits = m.forward_logits(g, leaves, *batch.ds, batch.rows, composed);
  return g.value(g.mean_rows(g.log_softmax_nll(logits, to_i32(batch.labels_of())))).item();
}

L3Result loss_l3(const MirramsModel& m, const BatchView& batch, const BernoulliMasker& masker, double tau) {
  Graph g;
  const auto leaves = m.bind(g);
  const int clean = m.forward_logits(g, leaves, *batch.ds, batch.rows, batch.view);
  Rng rng(masker.seed);
  const MaskMatrix bern = sample_bernoulli_masks(masker.r, batch.rows.size(), batch.ds->p(), rng);
  const MaskMatrix composed = compose_masks(batch.view, bern);
  const int masked = m.forward_logits(g, leaves, *batch.ds, batch.rows, composed);
  const PseudoLabels pl = pseudo_from_logits(g.value(clean));
  const std::size_t n = batch.rows.size();
  Tensor weights({n, 1});
  std::size_t passed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pass = pl.confidence[i] >= tau;
    weights[i] = pass ? 1.0 : 0.0;
    passed += pass;
  }
  L3Result out;
  out.pass_rate = static_cast<double>(passed) / static_cast<double>(n);
  out.loss = g.value(g.mean_rows(g.cmul(g.log_softmax_nll(masked, pl.label), std::move(weights)))).item();
  return out;
}

LossReport total_loss(const LossConfig& cfg, const MirramsModel& m, const BatchView& labeled,
                      const BatchView* unlabeled, const BernoulliMasker& masker) {
  Graph g;
  const auto leaves = m.bind(g);
  Rng mask_rng(masker.seed);
  LossConfig with_r = cfg;
  with_r.r = masker.r;
  const StepLoss step = build_total_loss(g, m, leaves, with_r, labeled, unlabeled, mask_rng, nullptr, nullptr,
                                         nullptr);
  return step.report;
}

}  // namespace mirrams
