#include "mirrams/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

namespace mirrams {

EncoderConfig resolve_encoder(const std::string& preset, std::size_t p) {
  if (preset == "paper" && p > 100) return preset_config("paper-highdim");
  return preset_config(preset);
}

std::size_t resolve_batch(std::size_t batch, std::size_t p) { return p > 100 ? std::min<std::size_t>(batch, 64) : batch; }

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

class StepLogFile {
 public:
  explicit StepLogFile(const std::string& path) {
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw TrainError("cannot open step log " + path);
    out_ << "epoch,step,l1,l2,l3,pass_rate,total,val_auc\n";
  }
  void step(std::size_t epoch, std::size_t step, const LossReport& r) {
    if (!out_.is_open()) return;
    out_ << epoch << ',' << step << ',' << fmt(r.l1) << ',' << fmt(r.l2) << ',' << fmt(r.l3) << ','
         << fmt(r.pass_rate) << ',' << fmt(r.total) << ",\n";
  }
  void epoch(const EpochLog& e) {
    if (!out_.is_open()) return;
    out_ << e.epoch << ",end," << fmt(e.l1) << ',' << fmt(e.l2) << ',' << fmt(e.l3) << ',' << fmt(e.pass_rate) << ','
         << fmt(e.total) << ',' << fmt(e.val_auc) << "\n";
    out_.flush();
  }
  void abort_note(std::size_t epoch, std::size_t step, const std::string& what) {
    if (!out_.is_open()) return;
    out_ << "# aborted at epoch " << epoch << " step " << step << ": " << what << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct EpochAccum {
  double l1 = 0, l2 = 0, l3 = 0, pass = 0, total = 0;
  std::size_t steps = 0;
  void add(const LossReport& r) {
    l1 += r.l1;
    l2 += r.l2;
    l3 += r.l3;
    pass += r.pass_rate;
    total += r.total;
    ++steps;
  }
  EpochLog summarize(std::size_t epoch, double val_auc) const {
    EpochLog e;
    e.epoch = epoch;
    if (steps) {
      const double n = static_cast<double>(steps);
      e.l1 = l1 / n;
      e.l2 = l2 / n;
      e.l3 = l3 / n;
      e.pass_rate = pass / n;
      e.total = total / n;
    }
    e.val_auc = val_auc;
    return e;
  }
};

std::vector<Tensor> collect_grads(const Graph& g, const std::vector<int>& leaves) {
  std::vector<Tensor> grads;
  grads.reserve(leaves.size());
  for (int id : leaves) grads.push_back(g.grad_or_zero(id));
  return grads;
}

}  // namespace

EvalResult evaluate(const MirramsModel& m, const TabularDataset& ds, const MaskMatrix& view) {
  if (m.spec().num_classes != 2) throw TrainError("evaluate: AUC is defined for binary tasks only");
  std::vector<std::size_t> rows(ds.n());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const Prediction pred = m.predict(ds, rows, view);
  EvalResult out;
  out.scored.labels = ds.labels;
  out.scored.scores.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) out.scored.scores[i] = pred.probs.at(i, 1);
  out.auc = auc(out.scored);
  out.accuracy = accuracy(pred.label, ds.labels);
  return out;
}

TrainResult train(const TrainConfig& tc, const LossConfig& lc, const TabularDataset& tr, const MaskMatrix& tr_view,
                  const TabularDataset& va, const MaskMatrix& va_view, const std::string& step_log_path) {
  lc.validate();
  if (tr_view.rows() != tr.n() || va_view.rows() != va.n())
    throw TrainError("train: view row count does not match dataset");
  const std::size_t p = tr.p();
  const EncoderConfig enc = resolve_encoder(tc.preset, p);
  const std::size_t batch = resolve_batch(tc.batch, p);
  if (batch == 0) throw TrainError("train: batch size 0");

  MirramsModel model(spec_for(tr, enc), tc.seed);
  Adam adam(tc.adam);
  Rng root(tc.seed);
  Rng shuffle_rng = root.derive(1);
  Rng mask_rng = root.derive(2);
  Rng drop_rng = root.derive(3);
  Rng ssl_rng = root.derive(4);

  // SSL partitions: a stratified labeled subset, the rest unlabeled
  std::vector<std::size_t> lab_rows(tr.n()), unlab_rows;
  std::iota(lab_rows.begin(), lab_rows.end(), std::size_t{0});
  if (tc.ssl) {
    if (!(tc.labeled_frac > 0.0 && tc.labeled_frac < 1.0))
      throw TrainError("train: SSL labeled fraction must be in (0,1)");
    lab_rows = stratified_subset(tr.labels, tc.labeled_frac, ssl_rng);
    std::vector<std::uint8_t> is_lab(tr.n(), 0);
    for (std::size_t i : lab_rows) is_lab[i] = 1;
    for (std::size_t i = 0; i < tr.n(); ++i)
      if (!is_lab[i]) unlab_rows.push_back(i);
    if (unlab_rows.empty()) throw TrainError("train: SSL needs a non-empty unlabeled partition");
  }
  // per-step mini-batch sizes, proportional in SSL mode
  std::size_t batch_l = batch, batch_u = 0;
  if (tc.ssl) {
    if (batch < 2) throw TrainError("train: SSL needs batch size >= 2");
    const double frac = static_cast<double>(lab_rows.size()) /
                        static_cast<double>(lab_rows.size() + unlab_rows.size());
    batch_l = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frac * static_cast<double>(batch))));
    batch_l = std::min(batch_l, batch - 1);
    batch_u = batch - batch_l;
  }

  StepLogFile slog(step_log_path);
  TrainResult result{model, 0.0, 0, 0, {}};
  result.best_val_auc = evaluate(model, va, va_view).auc;
  if (tc.max_epochs == 0) return result;

  std::vector<std::size_t> lab_order = lab_rows, unlab_order = unlab_rows;
  std::size_t lab_at = lab_order.size();  // force reshuffle on first use
  std::vector<Tensor> drop_lab, drop_unlab;
  std::size_t bad_epochs = 0;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    EpochAccum acc;
    const std::size_t n_drive = tc.ssl ? unlab_order.size() : lab_order.size();
    const std::size_t drive_batch = tc.ssl ? batch_u : batch_l;
    if (tc.ssl)
      shuffle_rng.shuffle(unlab_order);
    else
      shuffle_rng.shuffle(lab_order);
    std::size_t stepno = 0;
    for (std::size_t start = 0; start < n_drive; start += drive_batch, ++stepno) {
      const std::size_t take = std::min(drive_batch, n_drive - start);
      try {
        Graph g;
        const auto leaves = model.bind(g);
        drop_lab.clear();
        drop_unlab.clear();
        StepLoss sl;
        if (tc.ssl) {
          std::vector<std::size_t> urows(unlab_order.begin() + static_cast<std::ptrdiff_t>(start),
                                         unlab_order.begin() + static_cast<std::ptrdiff_t>(start + take));
          std::vector<std::size_t> lrows;
          lrows.reserve(batch_l);
          for (std::size_t k = 0; k < batch_l; ++k) {
            if (lab_at == lab_order.size()) {
              shuffle_rng.shuffle(lab_order);
              lab_at = 0;
            }
            lrows.push_back(lab_order[lab_at++]);
          }
          BatchView lab{&tr, lrows, tr_view.take_rows(lrows)};
          BatchView unlab{&tr, urows, tr_view.take_rows(urows)};
          sl = build_total_loss(g, model, leaves, lc, lab, &unlab, mask_rng, &drop_lab, &drop_unlab, &drop_rng);
        } else {
          std::vector<std::size_t> rows(lab_order.begin() + static_cast<std::ptrdiff_t>(start),
                                        lab_order.begin() + static_cast<std::ptrdiff_t>(start + take));
          BatchView lab{&tr, rows, tr_view.take_rows(rows)};
          sl = build_total_loss(g, model, leaves, lc, lab, nullptr, mask_rng, &drop_lab, nullptr, &drop_rng);
        }
        g.backward(sl.node);
        const auto grads = collect_grads(g, leaves);
        adam.step(model.param_ptrs(), grads);
        acc.add(sl.report);
        slog.step(epoch, stepno, sl.report);
      } catch (const std::exception& e) {
        slog.abort_note(epoch, stepno, e.what());
        throw TrainError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(stepno) +
                         ": " + e.what());
      }
    }
    const double val_auc = evaluate(model, va, va_view).auc;
    const EpochLog elog = acc.summarize(epoch, val_auc);
    result.log.push_back(elog);
    slog.epoch(elog);
    result.epochs_run = epoch;
    if (val_auc > result.best_val_auc) {
      result.best_val_auc = val_auc;
      result.best_epoch = epoch;
      result.model = model;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (tc.patience > 0 && bad_epochs >= tc.patience) break;
    }
  }
  return result;
}

TrainResult train_plain_ce(const TrainConfig& tc, const TabularDataset& tr, const MaskMatrix& tr_view,
                           const TabularDataset& va, const MaskMatrix& va_view, const std::string& step_log_path) {
  if (tc.ssl) throw TrainError("plain CE loop has no SSL mode");
  const std::size_t p = tr.p();
  MirramsModel model(spec_for(tr, resolve_encoder(tc.preset, p)), tc.seed);
  const std::size_t batch = resolve_batch(tc.batch, p);
  Adam adam(tc.adam);
  Rng root(tc.seed);
  Rng shuffle_rng = root.derive(1);
  Rng drop_rng = root.derive(3);

  StepLogFile slog(step_log_path);
  TrainResult result{model, 0.0, 0, 0, {}};
  result.best_val_auc = evaluate(model, va, va_view).auc;
  if (tc.max_epochs == 0) return result;

  std::vector<std::size_t> order(tr.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> drops;
  std::size_t bad_epochs = 0;
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochAccum acc;
    std::size_t stepno = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++stepno) {
      const std::size_t take = std::min(batch, order.size() - start);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(start + take));
      Graph g;
      const auto leaves = model.bind(g);
      drops.clear();
      const int logits = model.forward_logits(g, leaves, tr, rows, tr_view.take_rows(rows), &drops, &drop_rng);
      std::vector<std::int32_t> labels(take);
      for (std::size_t i = 0; i < take; ++i) labels[i] = tr.labels[rows[i]];
      const int loss = g.mean_rows(g.log_softmax_nll(logits, std::move(labels)));
      g.backward(loss);
      adam.step(model.param_ptrs(), collect_grads(g, leaves));
      LossReport r;
      r.l1 = r.total = g.value(loss).item();
      acc.add(r);
      slog.step(epoch, stepno, r);
    }
    const double val_auc = evaluate(model, va, va_view).auc;
    const EpochLog elog = acc.summarize(epoch, val_auc);
    result.log.push_back(elog);
    slog.epoch(elog);
    result.epochs_run = epoch;
    if (val_auc > result.best_val_auc) {
      result.best_val_auc = val_auc;
      result.best_epoch = epoch;
      result.model = model;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (tc.patience > 0 && bad_epochs >= tc.patience) break;
    }
  }
  return result;
}

GridOutcome grid_search(const TrainConfig& base, const GridSpec& grid, const TabularDataset& tr,
                        const MaskMatrix& tr_view, const TabularDataset& va, const MaskMatrix& va_view,
                        std::size_t threads) {
  if (grid.r.empty() || grid.lambda1.empty() || grid.lambda2.empty() || grid.tau.empty())
    throw TrainError("grid search: empty grid");
  std::vector<GridCell> cells;
  for (double r : grid.r)
    for (double l1 : grid.lambda1)
      for (double l2 : grid.lambda2)
        for (double tau : grid.tau) {
          GridCell cell;
          cell.cfg = LossConfig{l1, l2, tau, r};
          cells.push_back(cell);
        }

  std::vector<std::optional<TrainResult>> results(cells.size());
  Rng root(base.seed);
  std::vector<std::uint64_t> cell_seeds(cells.size());
  for (std::size_t i = 0; i < cell_seeds.size(); ++i) cell_seeds[i] = root.derive(1000 + i).next_u64();

  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      TrainConfig tc = base;
      tc.seed = cell_seeds[i];
      try {
        results[i] = train(tc, cells[i].cfg, tr, tr_view, va, va_view);
        cells[i].val_auc = results[i]->best_val_auc;
        cells[i].ok = true;
      } catch (const std::exception& e) {
        cells[i].ok = false;
        cells[i].error = e.what();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, cells.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  bool any = false;
  std::size_t best = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].ok) continue;
    if (!any || cells[i].val_auc > cells[best].val_auc) {
      best = i;
      any = true;
    }
  }
  if (!any) throw TrainError("grid search: every cell failed");
  return GridOutcome{std::move(cells), best, std::move(*results[best])};
}

std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, double frac, Rng& rng) {
  if (!(frac > 0.0 && frac <= 1.0)) throw TrainError("stratified subset: fraction must be in (0,1]");
  std::vector<int> classes;
  for (int y : labels)
    if (std::find(classes.begin(), classes.end(), y) == classes.end()) classes.push_back(y);
  std::sort(classes.begin(), classes.end());
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == classes[c]) members.push_back(i);
    Rng crng = rng.derive(c + 1);
    crng.shuffle(members);
    const auto want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(frac * static_cast<double>(members.size()))));
    for (std::size_t k = 0; k < std::min(want, members.size()); ++k) picked.push_back(members[k]);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

ExperimentData prepare_experiment(const TabularDataset& full, const SplitSpec& split, double rho, double alpha_tr,
                                  double alpha_ts, std::uint64_t scenario_seed) {
  ExperimentData ed;
  ed.scenario = make_scenario(full.p(), rho, alpha_tr, alpha_ts, scenario_seed);
  ed.splits = split_indices(full.labels, split);
  ed.train = full.take_rows(ed.splits.train);
  ed.val = full.take_rows(ed.splits.val);
  ed.test = full.take_rows(ed.splits.test);
  ed.pre = fit_preprocessor(ed.train);
  apply_preprocessor(ed.pre, ed.train);
  apply_preprocessor(ed.pre, ed.val);
  apply_preprocessor(ed.pre, ed.test);
  const Ar1Copula ctr = train_copula(ed.scenario);
  Rng rtr(ctr.seed);
  const MaskMatrix mtr = sample_shift_masks(ctr, ed.train.n(), rtr);
  const MaskMatrix mva = sample_shift_masks(ctr, ed.val.n(), rtr);  // validation continues the training stream
  ed.train_view = compose_masks(mtr, ed.train.mask);
  ed.val_view = compose_masks(mva, ed.val.mask);
  return ed;
}

MaskMatrix make_test_view(const ExperimentData& ed, double alpha_ts) {
  const Ar1Copula cts = test_copula(ed.scenario, alpha_ts);
  Rng r(cts.seed);
  const MaskMatrix mts = sample_shift_masks(cts, ed.test.n(), r);
  return compose_masks(mts, ed.test.mask);
}

namespace {

Tensor logistic_features(const TabularDataset& ds, const MaskMatrix& view, std::size_t p_cont,
                         const std::vector<std::size_t>& cat_vocab) {
  std::size_t dim = p_cont;
  for (std::size_t v : cat_vocab) dim += v;
  Tensor x({ds.n(), dim});
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < p_cont; ++j) x.at(i, j) = view.at(i, j) ? ds.xcont.at(i, j) : 0.0;
    std::size_t off = p_cont;
    for (std::size_t j = 0; j < cat_vocab.size(); ++j) {
      if (view.at(i, p_cont + j)) {
        auto v = static_cast<std::size_t>(ds.xcat[j][i]);
        if (v >= cat_vocab[j]) v = cat_vocab[j] - 1;  // fold overflow into the unknown slot
        x.at(i, off + v) = 1.0;
      }
      off += cat_vocab[j];
    }
  }
  return x;
}

}  // namespace

LogisticModel train_logistic(const TabularDataset& tr, const MaskMatrix& view, std::uint64_t seed,
                             std::size_t epochs, double lr) {
  LogisticModel lm;
  lm.p_cont = tr.p_cont();
  for (std::size_t j = 0; j < tr.p_cat(); ++j) {
    std::int32_t hi = 0;
    for (std::int32_t v : tr.xcat[j]) hi = std::max(hi, v);
    lm.cat_vocab.push_back(static_cast<std::size_t>(hi) + 2);
  }
  lm.num_classes = tr.num_classes;
  std::size_t dim = lm.p_cont;
  for (std::size_t v : lm.cat_vocab) dim += v;
  lm.w = Tensor({dim, lm.num_classes});
  lm.b = Tensor({1, lm.num_classes});
  lm.w.requires_grad = true;
  lm.b.requires_grad = true;
  (void)seed;  // convex objective from a zero start; kept for interface stability

  const Tensor x = logistic_features(tr, view, lm.p_cont, lm.cat_vocab);
  std::vector<std::int32_t> labels(tr.labels.begin(), tr.labels.end());
  AdamConfig ac;
  ac.lr = lr;
  Adam adam(ac);
  for (std::size_t e = 0; e < epochs; ++e) {
    Graph g;
    const int xw = g.matmul(g.constant(x), g.leaf(lm.w, "w"));
    const int logits = g.add(xw, g.leaf(lm.b, "b"));
    const int loss = g.mean_rows(g.log_softmax_nll(logits, labels));
    g.backward(loss);
    std::vector<Tensor> grads;
    for (const auto& [name, id] : g.params()) grads.push_back(g.grad_or_zero(id));
    std::vector<Tensor*> ps{&lm.w, &lm.b};
    adam.step(ps, grads);
  }
  return lm;
}

EvalResult evaluate_logistic(const LogisticModel& lm, const TabularDataset& ds, const MaskMatrix& view) {
  const Tensor x = logistic_features(ds, view, lm.p_cont, lm.cat_vocab);
  const std::size_t k = lm.num_classes;
  EvalResult out;
  out.scored.labels = ds.labels;
  out.scored.scores.resize(ds.n());
  std::vector<int> pred(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    std::vector<double> z(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      double s = lm.b[c];
      for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * lm.w.at(j, c);
      z[c] = s;
    }
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - m);
      sum += v;
    }
    for (double& v : z) v /= sum;
    out.scored.scores[i] = z.size() > 1 ? z[1] : z[0];
    pred[i] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  out.auc = auc(out.scored);
  out.accuracy = accuracy(pred, ds.labels);
  return out;
}

}  // namespace mirrams
