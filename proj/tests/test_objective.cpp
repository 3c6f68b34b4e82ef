#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mirrams/objective.hpp"
#include "support.hpp"

using namespace mirrams;

namespace {

TabularDataset toy_dataset(std::size_t n, std::uint64_t seed) {
  TabularDataset ds;
  ds.cont_names = {"a", "b", "c"};
  ds.xcont = Tensor::zeros({n, 3});
  ds.labels.assign(n, 0);
  ds.num_classes = 2;
  ds.mask = MaskMatrix::ones(n, 3);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) ds.xcont.at(i, j) = rng.normal();
    ds.labels[i] = static_cast<int>(rng.below(2));
  }
  return ds;
}

MirramsModel toy_model(const TabularDataset& ds, std::uint64_t seed, double dropout = 0.0) {
  EncoderConfig enc;
  enc.d = 8;
  enc.depth = 1;
  enc.heads = 2;
  enc.ff_mult = 2;
  enc.dropout = dropout;
  enc.embed_hidden = 6;
  return MirramsModel(spec_for(ds, enc), seed);
}

BatchView full_batch(const TabularDataset& ds) {
  BatchView b;
  b.ds = &ds;
  b.rows.resize(ds.n());
  std::iota(b.rows.begin(), b.rows.end(), std::size_t{0});
  b.view = ds.mask;
  return b;
}

}  // namespace

TEST_CASE("objective: config validation") {
  LossConfig ok;
  ok.lambda1 = 5;
  ok.lambda2 = 10;
  ok.tau = 0.9;
  ok.r = 0.3;
  CHECK_NOTHROW(ok.validate());

  LossConfig bad = ok;
  bad.r = 1.0;
  CHECK_THROWS_AS(bad.validate(), ObjectiveError);
  bad = ok;
  bad.r = -0.1;
  CHECK_THROWS_AS(bad.validate(), ObjectiveError);
  bad = ok;
  bad.tau = 0.0;  // the gate threshold must be positive
  CHECK_THROWS_AS(bad.validate(), ObjectiveError);
  bad = ok;
  bad.lambda1 = -1;
  CHECK_THROWS_AS(bad.validate(), ObjectiveError);
  bad = ok;
  bad.lambda2 = -1;
  CHECK_THROWS_AS(bad.validate(), ObjectiveError);
}

TEST_CASE("objective: first term equals mean cross entropy of the prediction") {
  const TabularDataset ds = toy_dataset(10, 1);
  const MirramsModel m = toy_model(ds, 2);
  const BatchView batch = full_batch(ds);

  const double l1 = loss_l1(m, batch);
  const Prediction pr = m.predict(ds, batch.rows, batch.view);
  double want = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i)
    want -= std::log(pr.probs.at(i, static_cast<std::size_t>(ds.labels[i])));
  want /= static_cast<double>(ds.n());
  CHECK(l1 == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("objective: plain supervised config reduces to the first term") {
  const TabularDataset ds = toy_dataset(8, 3);
  const MirramsModel m = toy_model(ds, 4);
  const BatchView batch = full_batch(ds);

  LossConfig cfg;  // lambda1 = lambda2 = 0
  Graph g;
  const std::vector<int> leaves = m.bind(g);
  Rng mask_rng(7);
  const std::uint64_t probe_before = Rng(7).next_u64();
  const StepLoss step = build_total_loss(g, m, leaves, cfg, batch, nullptr, mask_rng, nullptr, nullptr, nullptr);

  CHECK(step.report.l2 == 0.0);
  CHECK(step.report.l3 == 0.0);
  CHECK(step.report.pass_rate == 0.0);
  CHECK(step.report.total == step.report.l1);
  CHECK(g.value(step.node).item() == step.report.l1);
  CHECK(mask_rng.next_u64() == probe_before);  // mask stream untouched

  const double standalone = loss_l1(m, batch);
  CHECK(step.report.l1 == doctest::Approx(standalone).epsilon(1e-12));
}

TEST_CASE("objective: zero extra masking makes the second term collapse onto the first") {
  const TabularDataset ds = toy_dataset(9, 5);
  const MirramsModel m = toy_model(ds, 6);
  const BatchView batch = full_batch(ds);
  const BernoulliMasker none{0.0, 11};
  CHECK(loss_l2(m, batch, none) == loss_l1(m, batch));
}

TEST_CASE("objective: consistency term vanishes when the gate is unreachable") {
  const TabularDataset ds = toy_dataset(8, 7);
  const MirramsModel m = toy_model(ds, 8);
  const BatchView batch = full_batch(ds);
  const BernoulliMasker masker{0.3, 13};

  const L3Result r = loss_l3(m, batch, masker, 1.0 + 1e-9);
  CHECK(r.loss == 0.0);
  CHECK(r.pass_rate == 0.0);

  // tau = 0 gates nothing out
  const L3Result all = loss_l3(m, batch, masker, 0.0);
  CHECK(all.pass_rate == 1.0);
  CHECK(all.loss > 0.0);
}

TEST_CASE("objective: report composes the terms exactly") {
  const TabularDataset ds = toy_dataset(12, 9);
  const MirramsModel m = toy_model(ds, 10);
  const BatchView batch = full_batch(ds);

  LossConfig cfg;
  cfg.lambda1 = 5;
  cfg.lambda2 = 10;
  cfg.tau = 0.5;
  cfg.r = 0.3;
  const BernoulliMasker masker{cfg.r, 21};

  const LossReport rep = total_loss(cfg, m, batch, nullptr, masker);
  CHECK(rep.total == rep.l1 + cfg.lambda1 * rep.l2 + cfg.lambda2 * rep.l3);
  CHECK(rep.l1 == loss_l1(m, batch));
  CHECK(rep.l2 == loss_l2(m, batch, masker));
  const L3Result l3 = loss_l3(m, batch, masker, cfg.tau);
  CHECK(rep.l3 == l3.loss);
  CHECK(rep.pass_rate == l3.pass_rate);
}

TEST_CASE("objective: graph loss matches the standalone report without dropout") {
  const TabularDataset ds = toy_dataset(10, 11);
  const MirramsModel m = toy_model(ds, 12);
  const BatchView batch = full_batch(ds);

  LossConfig cfg;
  cfg.lambda1 = 2;
  cfg.lambda2 = 3;
  cfg.tau = 0.5;
  cfg.r = 0.25;

  Graph g;
  const std::vector<int> leaves = m.bind(g);
  Rng mask_rng(33);
  const StepLoss step = build_total_loss(g, m, leaves, cfg, batch, nullptr, mask_rng, nullptr, nullptr, nullptr);
  CHECK(g.value(step.node).item() == doctest::Approx(step.report.total).epsilon(1e-12));
  CHECK(step.report.total == doctest::Approx(step.report.l1 + cfg.lambda1 * step.report.l2 +
                                             cfg.lambda2 * step.report.l3)
                                 .epsilon(1e-12));
  CHECK(step.report.l1 == doctest::Approx(loss_l1(m, batch)).epsilon(1e-12));
}

TEST_CASE("objective: unlabeled rows feed only the consistency term") {
  const TabularDataset ds = toy_dataset(14, 13);
  const MirramsModel m = toy_model(ds, 14);

  BatchView labeled = full_batch(ds);
  labeled.rows = {0, 1, 2, 3, 4, 5};
  labeled.view = ds.mask.take_rows(labeled.rows);
  BatchView unlabeled = full_batch(ds);
  unlabeled.rows = {6, 7, 8, 9, 10, 11, 12, 13};
  unlabeled.view = ds.mask.take_rows(unlabeled.rows);

  LossConfig cfg;
  cfg.lambda1 = 1;
  cfg.lambda2 = 1;
  cfg.tau = 0.01;  // binary confidences never drop below 0.5
  cfg.r = 0.3;

  Graph g;
  const std::vector<int> leaves = m.bind(g);
  Rng mask_rng(44);
  const StepLoss step = build_total_loss(g, m, leaves, cfg, labeled, &unlabeled, mask_rng, nullptr, nullptr, nullptr);

  // L1 depends on labeled rows only; a tiny tau lets every unlabeled row pass the gate
  CHECK(step.report.l1 == doctest::Approx(loss_l1(m, labeled)).epsilon(1e-12));
  CHECK(step.report.pass_rate == 1.0);
  CHECK(step.report.l3 > 0.0);
}

TEST_CASE("objective: pseudo labels take the argmax with its softmax confidence") {
  Tensor logits({3, 3}, {2.0, -1.0, 0.5, 0.0, 0.0, 0.0, -3.0, 4.0, 4.0});
  const PseudoLabels pl = pseudo_from_logits(logits);
  REQUIRE(pl.label.size() == 3);
  CHECK(pl.label[0] == 0);
  CHECK(pl.label[1] == 0);  // exact tie -> lowest index
  CHECK(pl.label[2] == 1);  // tie between classes 1 and 2 -> lower one
  CHECK(pl.confidence[0] == doctest::Approx(0.7855970345892759).epsilon(1e-12));
  CHECK(pl.confidence[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(pl.confidence[2] == doctest::Approx(0.49977213340233185).epsilon(1e-12));
}

TEST_CASE("objective: dropout stores couple the two training views") {
  const TabularDataset ds = toy_dataset(10, 15);
  const MirramsModel m = toy_model(ds, 16, /*dropout=*/0.3);
  const BatchView batch = full_batch(ds);

  LossConfig cfg;
  cfg.lambda1 = 1;
  cfg.lambda2 = 1;
  cfg.tau = 0.01;
  cfg.r = 0.3;

  auto run = [&](std::uint64_t drop_seed) {
    Graph g;
    const std::vector<int> leaves = m.bind(g);
    Rng mask_rng(5);
    Rng drop_rng(drop_seed);
    std::vector<Tensor> dl, du;
    return build_total_loss(g, m, leaves, cfg, batch, nullptr, mask_rng, &dl, &du, &drop_rng).report;
  };
  const LossReport a = run(1);
  const LossReport b = run(1);
  const LossReport c = run(2);
  CHECK(a.total == b.total);   // same seeds, same loss
  CHECK(a.total != c.total);   // dropout draws actually matter
}
