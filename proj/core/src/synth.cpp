#include "mirrams/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "mirrams/rng.hpp"

namespace mirrams {

namespace {

struct FactorRecipe {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t k = 0;        // latent factor count
  double positive_rate = 0.5;
  double flip_rate = 0.0;   // fraction of positives swapped with negatives
  double feature_noise = 0.3;
  double cross_lo = 0.0, cross_hi = 0.0;  // secondary-factor loading range
  double pair_lo = 0.0, pair_hi = 0.0;    // factor-product loading range
};

// Deterministic per-feature loadings, then rows. The label is the score's
// upper quantile at exactly round(positive_rate * n) rows; swap flips keep
// that count exact while capping attainable separation.
TabularDataset assemble(const FactorRecipe& rc, std::uint64_t seed,
                        const std::vector<std::string>& names,
                        double (*score_fn)(const double*, double)) {
  Rng root(seed);
  Rng coef = root.derive(1);
  Rng rows = root.derive(2);
  Rng flip = root.derive(3);

  const std::size_t n = rc.n, p = rc.p, k = rc.k;
  std::vector<double> a(p), b(p), c(p);
  std::vector<std::size_t> f1(p), f2(p);
  for (std::size_t j = 0; j < p; ++j) {
    f1[j] = j % k;
    f2[j] = (2 * j + 3) % k;
    if (f2[j] == f1[j]) f2[j] = (f1[j] + 1) % k;
    a[j] = 0.7 + 0.6 * coef.uniform();
    b[j] = rc.cross_lo + (rc.cross_hi - rc.cross_lo) * coef.uniform();
    c[j] = rc.pair_lo + (rc.pair_hi - rc.pair_lo) * coef.uniform();
  }

  TabularDataset ds;
  ds.cont_names = names;
  ds.xcont = Tensor::zeros({n, p});
  ds.num_classes = 2;
  ds.mask = MaskMatrix::ones(n, p);
  ds.labels.assign(n, 0);

  std::vector<double> z(k), score(n);
  double* x = ds.xcont.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t) z[t] = rows.normal();
    for (std::size_t j = 0; j < p; ++j) {
      x[i * p + j] = a[j] * z[f1[j]] + b[j] * z[f2[j]] + c[j] * z[f1[j]] * z[f2[j]] +
                     rc.feature_noise * rows.normal();
    }
    score[i] = score_fn(z.data(), rows.normal());
  }

  const auto m = static_cast<std::size_t>(std::lround(rc.positive_rate * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t u, std::size_t v) {
    if (score[u] != score[v]) return score[u] > score[v];
    return u < v;
  });
  for (std::size_t i = 0; i < m; ++i) ds.labels[order[i]] = 1;

  const auto flips = static_cast<std::size_t>(std::lround(rc.flip_rate * static_cast<double>(m)));
  if (flips > 0) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (ds.labels[i] == 1 ? pos : neg).push_back(i);
    flip.shuffle(pos);
    flip.shuffle(neg);
    for (std::size_t i = 0; i < flips && i < pos.size() && i < neg.size(); ++i) {
      ds.labels[pos[i]] = 0;
      ds.labels[neg[i]] = 1;
    }
  }
  return ds;
}

Schema schema_for(const TabularDataset& ds, const std::string& neg, const std::string& pos) {
  Schema s;
  for (const auto& name : ds.cont_names) s.columns.push_back({name, ColumnKind::Continuous, {}, ""});
  s.columns.push_back({"label", ColumnKind::Label, {neg, pos}, pos});
  s.validate();
  return s;
}

std::vector<std::string> numbered(const char* stem, std::size_t p) {
  std::vector<std::string> names(p);
  for (std::size_t j = 0; j < p; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%02zu", stem, j + 1);
    names[j] = buf;
  }
  return names;
}

double qsar_score(const double* z, double eps) {
  return z[0] + 0.8 * z[1] + 1.6 * z[2] * z[3] + 1.1 * (z[4] * z[4] - 1.0) + 0.25 * eps;
}

double htru_score(const double* z, double eps) {
  return 0.9 * z[0] + 1.6 * (z[1] * z[1] - 1.0) + 0.2 * eps;
}

double demo_score(const double* z, double eps) {
  return z[0] + 1.2 * (z[1] * z[1] - 1.0) + 0.2 * eps;
}

}  // namespace

SynthResult make_synthetic(const std::string& name, std::size_t n, std::uint64_t seed) {
  if (name == "qsar_bio") {
    FactorRecipe rc;
    rc.n = n ? n : 1055;
    rc.p = 41;
    rc.k = 5;
    rc.positive_rate = 0.3374;
    rc.flip_rate = 0.06;
    rc.feature_noise = 0.4;
    rc.cross_lo = 0.25;
    rc.cross_hi = 0.6;
    rc.pair_lo = 0.2;
    rc.pair_hi = 0.8;
    auto ds = assemble(rc, seed, numbered("f", rc.p), qsar_score);
    return {schema_for(ds, "NRB", "RB"), std::move(ds)};
  }
  if (name == "htru2") {
    FactorRecipe rc;
    rc.n = n ? n : 17898;
    rc.p = 8;
    rc.k = 2;
    rc.positive_rate = 0.0916;
    rc.flip_rate = 0.03;
    rc.feature_noise = 0.3;
    rc.cross_lo = 0.15;
    rc.cross_hi = 0.4;
    rc.pair_lo = 0.1;
    rc.pair_hi = 0.35;
    std::vector<std::string> names = {"prof_mean", "prof_std",  "prof_kurt", "prof_skew",
                                      "dm_mean",   "dm_std",    "dm_kurt",   "dm_skew"};
    auto ds = assemble(rc, seed, names, htru_score);
    return {schema_for(ds, "0", "1"), std::move(ds)};
  }
  if (name == "demo") {
    FactorRecipe rc;
    rc.n = n ? n : 400;
    rc.p = 6;
    rc.k = 2;
    rc.positive_rate = 0.4;
    rc.flip_rate = 0.04;
    rc.feature_noise = 0.3;
    rc.cross_lo = 0.2;
    rc.cross_hi = 0.5;
    rc.pair_lo = 0.0;
    rc.pair_hi = 0.3;
    auto ds = assemble(rc, seed, numbered("x", rc.p), demo_score);
    return {schema_for(ds, "no", "yes"), std::move(ds)};
  }
  throw DataError("make_synthetic: unknown dataset '" + name + "' (expected qsar_bio, htru2, or demo)");
}

SynthResult make_linear_toy(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TabularDataset ds;
  ds.cont_names = {"u", "v"};
  ds.xcont = Tensor::zeros({n, 2});
  ds.num_classes = 2;
  ds.mask = MaskMatrix::ones(n, 2);
  ds.labels.assign(n, 0);
  double* x = ds.xcont.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.normal(), v = rng.normal();
    x[i * 2 + 0] = u;
    x[i * 2 + 1] = v;
    ds.labels[i] = (u + 0.5 * v > 0.0) ? 1 : 0;
  }
  return {schema_for(ds, "a", "b"), std::move(ds)};
}

}  // namespace mirrams
