#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "mirrams/data.hpp"
#include "support.hpp"

using namespace mirrams;

namespace {

Schema demo_schema() {
  Schema sc;
  sc.columns.push_back({"age", ColumnKind::Continuous, {}, ""});
  sc.columns.push_back({"color", ColumnKind::Categorical, {"red", "blue"}, ""});
  sc.columns.push_back({"label", ColumnKind::Label, {"no", "yes"}, "yes"});
  return sc;
}

std::string demo_csv(const std::string& leaf) {
  const std::string path = testsup::tmp_file(leaf);
  std::ofstream(path) << "age,color,label\n"
                         "1.5,red,yes\n"
                         "2.5,blue,no\n"
                         "NA,red,yes\n"
                         "3.5,?,no\n";
  return path;
}

}  // namespace

TEST_CASE("data: schema file round trip") {
  Schema sc = demo_schema();
  sc.na_tokens = {"", "NA", "?", "missing"};
  const std::string path = testsup::tmp_file("schema_rt.schema");
  write_schema(path, sc);
  const Schema r = read_schema(path);
  REQUIRE(r.columns.size() == 3);
  CHECK(r.columns[0].name == "age");
  CHECK(r.columns[0].kind == ColumnKind::Continuous);
  CHECK(r.columns[1].values == std::vector<std::string>{"red", "blue"});
  CHECK(r.columns[2].kind == ColumnKind::Label);
  CHECK(r.columns[2].positive == "yes");
  CHECK(r.na_tokens == sc.na_tokens);
  CHECK(r.label_index() == 2);
}

TEST_CASE("data: schema validation catches broken declarations") {
  Schema none = demo_schema();
  none.columns.pop_back();  // no label column
  CHECK_THROWS_AS(none.validate(), DataError);

  Schema two = demo_schema();
  two.columns.push_back({"label2", ColumnKind::Label, {"a", "b"}, "a"});
  CHECK_THROWS_AS(two.validate(), DataError);

  Schema dupval = demo_schema();
  dupval.columns[1].values = {"red", "red"};
  CHECK_THROWS_AS(dupval.validate(), DataError);

  Schema oneclass = demo_schema();
  oneclass.columns[2].values = {"yes"};
  CHECK_THROWS_AS(oneclass.validate(), DataError);

  Schema badpos = demo_schema();
  badpos.columns[2].positive = "maybe";
  CHECK_THROWS_AS(badpos.validate(), DataError);

  Schema emptycat = demo_schema();
  emptycat.columns[1].values.clear();
  CHECK_THROWS_AS(emptycat.validate(), DataError);
}

TEST_CASE("data: csv loading maps values, missingness, and labels") {
  Schema sc = demo_schema();
  const TabularDataset ds = load_csv(demo_csv("load.csv"), sc);
  REQUIRE(ds.n() == 4);
  CHECK(ds.p_cont() == 1);
  CHECK(ds.p_cat() == 1);
  CHECK(ds.p() == 2);
  CHECK(ds.num_classes == 2);

  // feature order: continuous first, then categoricals
  CHECK(ds.feature_names() == std::vector<std::string>{"age", "color"});
  CHECK(ds.xcont.at(0, 0) == 1.5);
  CHECK(ds.xcont.at(3, 0) == 3.5);
  CHECK(std::isnan(ds.xcont.at(2, 0)));  // masked cells hold NaN

  CHECK(ds.mask.at(2, 0) == 0);
  CHECK(ds.mask.at(3, 1) == 0);
  CHECK(ds.mask.at(0, 0) == 1);
  CHECK(ds.mask.at(0, 1) == 1);

  CHECK(ds.xcat[0][0] == 0);  // red
  CHECK(ds.xcat[0][1] == 1);  // blue
  CHECK(ds.labels == std::vector<int>{1, 0, 1, 0});
  CHECK(ds.positive_ratio() == doctest::Approx(0.5));
}

TEST_CASE("data: unknown categories extend the vocabulary only in training mode") {
  const std::string path = testsup::tmp_file("unknown.csv");
  std::ofstream(path) << "age,color,label\n1.0,green,yes\n2.0,red,no\n";

  Schema eval_sc = demo_schema();
  const TabularDataset ev = load_csv(path, eval_sc, /*training=*/false);
  CHECK(eval_sc.columns[1].values.size() == 2);   // schema untouched
  CHECK(ev.xcat[0][0] == 2);                      // reserved unknown slot = vocab size
  CHECK(ev.mask.at(0, 1) == 1);                   // unknown is observed, not missing

  Schema tr_sc = demo_schema();
  const TabularDataset tr = load_csv(path, tr_sc, /*training=*/true);
  CHECK(tr_sc.columns[1].values == std::vector<std::string>{"red", "blue", "green"});
  CHECK(tr.xcat[0][0] == 2);
}

TEST_CASE("data: csv write/load round trip is lossless") {
  Schema sc = demo_schema();
  const TabularDataset a = load_csv(demo_csv("rt.csv"), sc);
  const std::string out = testsup::tmp_file("rt_out.csv");
  write_csv(out, a, sc);
  Schema sc2 = demo_schema();
  const TabularDataset b = load_csv(out, sc2);

  REQUIRE(a.n() == b.n());
  CHECK(a.labels == b.labels);
  CHECK(a.mask.data() == b.mask.data());
  CHECK(a.xcat == b.xcat);
  for (std::size_t i = 0; i < a.n(); ++i) {
    if (!a.mask.at(i, 0)) continue;
    CHECK(a.xcont.at(i, 0) == b.xcont.at(i, 0));
  }
}

TEST_CASE("data: malformed csv inputs raise DataError") {
  Schema sc = demo_schema();
  CHECK_THROWS_AS(load_csv(testsup::tmp_file("missing_file.csv"), sc), DataError);

  const std::string wrong_header = testsup::tmp_file("bad1.csv");
  std::ofstream(wrong_header) << "age,colour,label\n1.0,red,yes\n";
  CHECK_THROWS_AS(load_csv(wrong_header, sc), DataError);

  const std::string short_row = testsup::tmp_file("bad2.csv");
  std::ofstream(short_row) << "age,color,label\n1.0,red\n";
  CHECK_THROWS_AS(load_csv(short_row, sc), DataError);

  const std::string bad_number = testsup::tmp_file("bad3.csv");
  std::ofstream(bad_number) << "age,color,label\nxyz,red,yes\n";
  CHECK_THROWS_AS(load_csv(bad_number, sc), DataError);

  const std::string bad_label = testsup::tmp_file("bad4.csv");
  std::ofstream(bad_label) << "age,color,label\n1.0,red,maybe\n";
  CHECK_THROWS_AS(load_csv(bad_label, sc), DataError);

  const std::string na_label = testsup::tmp_file("bad5.csv");
  std::ofstream(na_label) << "age,color,label\n1.0,red,NA\n";
  CHECK_THROWS_AS(load_csv(na_label, sc), DataError);
}

TEST_CASE("data: take_rows subsets every field coherently") {
  Schema sc = demo_schema();
  const TabularDataset ds = load_csv(demo_csv("take.csv"), sc);
  const TabularDataset sub = ds.take_rows({3, 0});
  REQUIRE(sub.n() == 2);
  CHECK(sub.labels == std::vector<int>{0, 1});
  CHECK(sub.xcont.at(1, 0) == 1.5);
  CHECK(sub.mask.at(0, 1) == 0);
  CHECK(sub.xcat[0][1] == 0);
}

TEST_CASE("data: stratified split covers everything with the requested ratios") {
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(0);
  for (int i = 0; i < 40; ++i) labels.push_back(1);

  SplitSpec spec;  // 0.65 / 0.15 / 0.2
  spec.seed = 9;
  const SplitIndices idx = split_indices(labels, spec);
  CHECK(idx.train.size() == 65);
  CHECK(idx.val.size() == 15);
  CHECK(idx.test.size() == 20);

  std::set<std::size_t> seen;
  auto pos_count = [&](const std::vector<std::size_t>& part) {
    std::size_t pos = 0;
    for (std::size_t i : part) {
      seen.insert(i);
      pos += labels[i] == 1;
    }
    return pos;
  };
  const std::size_t ptr = pos_count(idx.train), pva = pos_count(idx.val), pte = pos_count(idx.test);
  CHECK(seen.size() == 100);  // disjoint cover
  CHECK(ptr == 26);           // stratification: 40 positives split 0.65/0.15/0.2
  CHECK(pva == 6);
  CHECK(pte == 8);
}

TEST_CASE("data: splits are deterministic in the seed") {
  std::vector<int> labels(50, 0);
  for (int i = 0; i < 20; ++i) labels[static_cast<std::size_t>(i) * 2] = 1;
  SplitSpec spec;
  spec.seed = 3;
  const SplitIndices a = split_indices(labels, spec);
  const SplitIndices b = split_indices(labels, spec);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  spec.seed = 4;
  const SplitIndices c = split_indices(labels, spec);
  CHECK(a.train != c.train);
}

TEST_CASE("data: split ratios must form a sane partition") {
  std::vector<int> labels(10, 0);
  labels[0] = labels[1] = 1;
  SplitSpec bad;
  bad.train = 0.9;
  bad.val = 0.3;
  bad.test = 0.2;
  CHECK_THROWS_AS(split_indices(labels, bad), DataError);
}

TEST_CASE("data: indices file round trip") {
  const std::string path = testsup::tmp_file("indices.csv");
  const std::vector<std::size_t> idx{4, 0, 17, 3};
  write_indices(path, idx);
  CHECK(read_indices(path) == idx);
  CHECK_THROWS_AS(read_indices(path + ".missing"), DataError);
}

TEST_CASE("data: preprocessor standardizes observed cells with population stats") {
  Schema sc = demo_schema();
  TabularDataset ds = load_csv(demo_csv("pre.csv"), sc);
  const Preprocessor pre = fit_preprocessor(ds);
  REQUIRE(pre.mean.size() == 1);
  CHECK(pre.mean[0] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(pre.stdev[0] == doctest::Approx(0.816496580927726).epsilon(1e-12));

  apply_preprocessor(pre, ds);
  CHECK(ds.xcont.at(0, 0) == doctest::Approx(-1.224744871391589).epsilon(1e-12));
  CHECK(ds.xcont.at(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ds.xcont.at(3, 0) == doctest::Approx(1.224744871391589).epsilon(1e-12));
  CHECK(std::isnan(ds.xcont.at(2, 0)));  // masked cell stays untouched
}

TEST_CASE("data: zero-variance columns get unit scale") {
  Schema sc;
  sc.columns.push_back({"c", ColumnKind::Continuous, {}, ""});
  sc.columns.push_back({"label", ColumnKind::Label, {"no", "yes"}, "yes"});
  const std::string path = testsup::tmp_file("const.csv");
  std::ofstream(path) << "c,label\n5.0,yes\n5.0,no\n5.0,yes\n";
  TabularDataset ds = load_csv(path, sc);
  const Preprocessor pre = fit_preprocessor(ds);
  CHECK(pre.stdev[0] == 1.0);
  apply_preprocessor(pre, ds);
  CHECK(ds.xcont.at(0, 0) == 0.0);
}

TEST_CASE("data: preprocessor file round trip is exact") {
  Preprocessor pre;
  pre.mean = {0.1, -3.7e-9, 12345.678901234567};
  pre.stdev = {1.0, 0.333333333333333314, 42.0};
  const std::string path = testsup::tmp_file("pre.txt");
  write_preprocessor(path, pre);
  const Preprocessor r = read_preprocessor(path);
  REQUIRE(r.mean.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.mean[i] == pre.mean[i]);
    CHECK(r.stdev[i] == pre.stdev[i]);
  }
}
