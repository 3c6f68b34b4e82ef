#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mirrams/model.hpp"
#include "support.hpp"

using namespace mirrams;

namespace {

// small mixed dataset with a fully observed base mask
TabularDataset toy_dataset(std::size_t n, std::uint64_t seed) {
  TabularDataset ds;
  ds.cont_names = {"a", "b"};
  ds.cat_names = {"c"};
  ds.xcont = Tensor::zeros({n, 2});
  ds.xcat.assign(1, std::vector<std::int32_t>(n, 0));
  ds.labels.assign(n, 0);
  ds.num_classes = 2;
  ds.mask = MaskMatrix::ones(n, 3);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    ds.xcont.at(i, 0) = rng.normal();
    ds.xcont.at(i, 1) = rng.normal();
    ds.xcat[0][i] = static_cast<std::int32_t>(rng.below(3));
    ds.labels[i] = static_cast<int>(rng.below(2));
  }
  return ds;
}

EncoderConfig tiny_encoder() {
  EncoderConfig enc;
  enc.d = 8;
  enc.depth = 1;
  enc.heads = 2;
  enc.ff_mult = 2;
  enc.dropout = 0.0;
  enc.embed_hidden = 6;
  return enc;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<double> as_vec(const Tensor& t) { return {t.data(), t.data() + t.size()}; }

}  // namespace

TEST_CASE("model: presets have the documented shapes") {
  const EncoderConfig paper = preset_config("paper");
  CHECK(paper.d == 32);
  CHECK(paper.depth == 6);
  CHECK(paper.heads == 8);

  const EncoderConfig hd = preset_config("paper-highdim");
  CHECK(hd.d == 4);

  const EncoderConfig desk = preset_config("desk");
  CHECK(desk.d < paper.d);
  CHECK(desk.depth < paper.depth);

  CHECK_THROWS_AS(preset_config("nope"), ModelError);
}

TEST_CASE("model: spec_for mirrors the dataset with an unknown slot per vocabulary") {
  TabularDataset ds = toy_dataset(5, 1);
  ds.xcat[0][0] = 2;  // make the largest code explicit
  const ModelSpec spec = spec_for(ds, tiny_encoder());
  CHECK(spec.p_cont == 2);
  REQUIRE(spec.cat_vocab.size() == 1);
  CHECK(spec.cat_vocab[0] == 4);  // codes 0..2 seen in data, plus the unknown slot
  CHECK(spec.num_classes == 2);
  CHECK(spec.p() == 3);
}

TEST_CASE("model: prediction shape and normalization") {
  TabularDataset ds = toy_dataset(7, 2);
  MirramsModel model(spec_for(ds, tiny_encoder()), 5);
  const Prediction pr = model.predict(ds, all_rows(7), ds.mask);
  REQUIRE(pr.probs.shape() == Shape{7, 2});
  REQUIRE(pr.label.size() == 7);
  REQUIRE(pr.confidence.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    const double row = pr.probs.at(i, 0) + pr.probs.at(i, 1);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pr.confidence[i] >= 0.5);
    CHECK(pr.probs.at(i, static_cast<std::size_t>(pr.label[i])) == doctest::Approx(pr.confidence[i]));
  }
}

TEST_CASE("model: evaluation batching does not change predictions") {
  TabularDataset ds = toy_dataset(9, 3);
  MirramsModel model(spec_for(ds, tiny_encoder()), 6);
  const Prediction big = model.predict(ds, all_rows(9), ds.mask, 512);
  const Prediction small = model.predict(ds, all_rows(9), ds.mask, 3);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(big.probs.at(i, k) == small.probs.at(i, k));
  CHECK(big.label == small.label);
}

TEST_CASE("model: masked cells never influence the output") {
  TabularDataset ds = toy_dataset(6, 4);
  MaskMatrix view = ds.mask;
  view.set(0, 0, 0);  // hide a continuous cell
  view.set(2, 2, 0);  // hide a categorical cell

  MirramsModel model(spec_for(ds, tiny_encoder()), 7);
  const Prediction before = model.predict(ds, all_rows(6), view);

  TabularDataset mutated = ds;
  mutated.xcont.at(0, 0) = 1e6;
  mutated.xcat[0][2] = 1;
  const Prediction after = model.predict(mutated, all_rows(6), view);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(before.probs.at(i, k) == after.probs.at(i, k));

  // hiding a cell that previously carried signal must change that row
  const Prediction open = model.predict(ds, all_rows(6), ds.mask);
  CHECK(open.probs.at(0, 0) != before.probs.at(0, 0));
}

TEST_CASE("model: save/load round trip is bit exact") {
  TabularDataset ds = toy_dataset(5, 8);
  MirramsModel model(spec_for(ds, tiny_encoder()), 9);
  const std::string path = testsup::tmp_file("model.ckpt");
  model.save(path);
  const MirramsModel back = MirramsModel::load(path);

  REQUIRE(back.param_count() == model.param_count());
  for (std::size_t i = 0; i < model.param_count(); ++i) {
    CHECK(back.param_name(i) == model.param_name(i));
    CHECK(back.param(i).shape() == model.param(i).shape());
    CHECK(as_vec(back.param(i)) == as_vec(model.param(i)));
  }
  CHECK(back.spec().cat_vocab == model.spec().cat_vocab);
  CHECK(back.spec().enc.d == model.spec().enc.d);

  const Prediction a = model.predict(ds, all_rows(5), ds.mask);
  const Prediction b = back.predict(ds, all_rows(5), ds.mask);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(a.probs.at(i, k) == b.probs.at(i, k));
}

TEST_CASE("model: loading garbage raises ModelError") {
  CHECK_THROWS_AS(MirramsModel::load(testsup::tmp_file("absent.ckpt")), ModelError);
  const std::string path = testsup::tmp_file("garbage.ckpt");
  std::ofstream(path) << "not a checkpoint\n";
  CHECK_THROWS_AS(MirramsModel::load(path), ModelError);
}

TEST_CASE("model: seeds control initialization") {
  TabularDataset ds = toy_dataset(4, 10);
  const ModelSpec spec = spec_for(ds, tiny_encoder());
  MirramsModel a(spec, 1), b(spec, 1), c(spec, 2);
  CHECK(as_vec(a.param(0)) == as_vec(b.param(0)));
  bool any_diff = false;
  for (std::size_t i = 0; i < a.param_count() && !any_diff; ++i)
    any_diff = as_vec(a.param(i)) != as_vec(c.param(i));
  CHECK(any_diff);
}

TEST_CASE("model: dropout draw store replays identically and guards exhaustion") {
  TabularDataset ds = toy_dataset(6, 11);
  EncoderConfig enc = tiny_encoder();
  enc.dropout = 0.4;
  MirramsModel dropmodel(spec_for(ds, enc), 12);

  const std::vector<std::size_t> rows = all_rows(6);
  auto run = [&](std::vector<Tensor>* store, Rng* rng) {
    Graph g;
    const std::vector<int> leaves = dropmodel.bind(g);
    const int logits = dropmodel.forward_logits(g, leaves, ds, rows, ds.mask, store, rng);
    return as_vec(g.value(logits));
  };

  std::vector<Tensor> store;
  Rng rng(3);
  const std::vector<double> first = run(&store, &rng);
  REQUIRE(!store.empty());
  const std::vector<double> replay = run(&store, nullptr);   // replays without an rng
  const std::vector<double> replay2 = run(&store, &rng);     // rng present but untouched
  CHECK(first == replay);
  CHECK(first == replay2);

  // a fresh empty store without an rng cannot be filled
  std::vector<Tensor> empty;
  CHECK_THROWS_AS(run(&empty, nullptr), ModelError);

  // evaluation semantics: no dropout noise at all
  const Prediction a = dropmodel.predict(ds, rows, ds.mask);
  const Prediction b = dropmodel.predict(ds, rows, ds.mask);
  CHECK(as_vec(a.probs) == as_vec(b.probs));
}

TEST_CASE("model: forward rejects inconsistent inputs") {
  TabularDataset ds = toy_dataset(4, 13);
  MirramsModel model(spec_for(ds, tiny_encoder()), 14);
  Graph g;
  const std::vector<int> leaves = model.bind(g);
  const MaskMatrix wrong(4, 2);
  CHECK_THROWS_AS(model.forward_logits(g, leaves, ds, all_rows(4), wrong), ModelError);

  // view must cover the requested rows
  const MaskMatrix shortview(2, 3);
  CHECK_THROWS_AS(model.forward_logits(g, leaves, ds, all_rows(4), shortview), ModelError);
}
