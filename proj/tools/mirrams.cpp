#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mirrams/data.hpp"
#include "mirrams/manifest.hpp"
#include "mirrams/metrics.hpp"
#include "mirrams/milab.hpp"
#include "mirrams/missingness.hpp"
#include "mirrams/svg.hpp"
#include "mirrams/synth.hpp"
#include "mirrams/trainer.hpp"

namespace fs = std::filesystem;
using namespace mirrams;

namespace {

struct Opt {
  // files
  std::string dataset, schema, out_dir = ".", checkpoint, preprocessor, indices, mask;
  std::vector<std::string> runs;
  std::vector<std::string> labels;
  std::string name = "demo";
  std::string manifest;
  // scenario
  double rho = 0.7, alpha_tr = 0.1;
  std::vector<double> alpha_ts;
  double alpha_both = -1.0;
  std::uint64_t scenario_seed = 7, split_seed = 0, seed = 1, gen_seed = 20260801;
  std::size_t n = 0, p = 8;
  double train_frac = 0.65, val_frac = 0.15, test_frac = 0.2;
  // objective
  double r = 0.3, lambda1 = 10.0, lambda2 = 10.0, tau = 0.9, labeled_frac = 0.1;
  // optimization
  std::string preset = "paper";
  std::size_t epochs = 200, batch = 256, patience = 30;
  double lr = 1e-4;
  // grid
  std::vector<double> r_grid{0.0, 0.1, 0.2, 0.3, 0.4};
  std::vector<double> l1_grid{0, 1, 5, 10, 15, 20};
  std::vector<double> l2_grid{0, 1, 5, 10, 15, 20};
  std::vector<double> tau_grid{0.8, 0.9, 0.95, 0.99};
  std::size_t threads = 0;
  // theory
  std::size_t systems = 200, umax = 8, vmax = 6;
  std::string title = "Test AUC under missingness shift";
};

std::size_t env_threads() {
  const char* v = std::getenv("MIRRAMS_THREADS");
  if (!v || !*v) return 0;
  const long n = std::strtol(v, nullptr, 10);
  return n > 0 ? static_cast<std::size_t>(n) : 0;
}

std::string joined(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += " ";
    s += format_exact(v[i]);
  }
  return s;
}

std::string join_str(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += " ";
    s += v[i];
  }
  return s;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir + "': " + ec.message());
}

std::string opath(const Opt& o, const std::string& leaf) { return (fs::path(o.out_dir) / leaf).string(); }

void write_failed_marker(const std::string& dir, const std::string& what) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return;
  std::ofstream f(fs::path(dir) / "FAILED");
  f << what << "\n";
}

// every runner records the exact flag set needed to reproduce itself
void finish_manifest(RunManifest& m, const Opt& o) {
  write_manifest(opath(o, "run.manifest"), m);
}

struct LoadedData {
  Schema schema;
  TabularDataset data;
};

LoadedData load_training_data(const Opt& o, RunManifest& m) {
  if (o.dataset.empty()) throw std::runtime_error("--dataset is required");
  if (o.schema.empty()) throw std::runtime_error("--schema is required");
  m.add_input(o.dataset);
  m.add_input(o.schema);
  Schema sc = read_schema(o.schema);
  TabularDataset ds = load_csv(o.dataset, sc, /*training=*/true);
  return {std::move(sc), std::move(ds)};
}

void record_scenario(RunManifest& m, const Opt& o) {
  m.set("rho", format_exact(o.rho));
  m.set("alpha-tr", format_exact(o.alpha_tr));
  m.set("alpha-ts", joined(o.alpha_ts));
  m.set("scenario-seed", std::to_string(o.scenario_seed));
  m.set("split-seed", std::to_string(o.split_seed));
}

void record_fit(RunManifest& m, const Opt& o) {
  m.set("preset", o.preset);
  m.set("epochs", std::to_string(o.epochs));
  m.set("batch", std::to_string(o.batch));
  m.set("patience", std::to_string(o.patience));
  m.set("lr", format_exact(o.lr));
  m.set("seed", std::to_string(o.seed));
}

TrainConfig fit_config(const Opt& o) {
  TrainConfig tc;
  tc.preset = o.preset;
  tc.max_epochs = o.epochs;
  tc.batch = o.batch;
  tc.patience = o.patience;
  tc.adam.lr = o.lr;
  tc.seed = o.seed;
  return tc;
}

SplitSpec split_spec(const Opt& o) {
  SplitSpec sp;
  sp.train = o.train_frac;
  sp.val = o.val_frac;
  sp.test = o.test_frac;
  sp.seed = o.split_seed;
  return sp;
}

void write_eval_csv(const std::string& path, const std::vector<std::array<double, 4>>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << "alpha_tr,alpha_ts,auc,accuracy\n";
  for (const auto& r : rows)
    f << format_exact(r[0]) << "," << format_exact(r[1]) << "," << format_exact(r[2]) << ","
      << format_exact(r[3]) << "\n";
}

// ---------------------------------------------------------------- synth

void run_synth(const Opt& o) {
  ensure_dir(o.out_dir);
  auto res = make_synthetic(o.name, o.n, o.gen_seed);
  const std::string csv = opath(o, o.name + ".csv");
  const std::string sch = opath(o, o.name + ".schema");
  write_csv(csv, res.data, res.schema);
  write_schema(sch, res.schema);
  RunManifest m;
  m.command = "synth";
  m.set("name", o.name);
  m.set("n", std::to_string(o.n));
  m.set("gen-seed", std::to_string(o.gen_seed));
  m.set("out-dir", o.out_dir);
  m.add_output(csv);
  m.add_output(sch);
  finish_manifest(m, o);
  std::printf("synth: wrote %s (%zu rows, %zu features, %.2f%% positive)\n", csv.c_str(), res.data.n(),
              res.data.p(), 100.0 * res.data.positive_ratio());
}

// ---------------------------------------------------------------- prepare

void run_prepare(const Opt& o) {
  ensure_dir(o.out_dir);
  RunManifest m;
  m.command = "prepare";
  auto in = load_training_data(o, m);
  m.set("dataset", o.dataset);
  m.set("schema", o.schema);
  m.set("split-seed", std::to_string(o.split_seed));
  m.set("train-frac", format_exact(o.train_frac));
  m.set("val-frac", format_exact(o.val_frac));
  m.set("test-frac", format_exact(o.test_frac));
  m.set("out-dir", o.out_dir);

  auto idx = split_indices(in.data.labels, split_spec(o));
  auto tr = in.data.take_rows(idx.train);
  auto pre = fit_preprocessor(tr);

  const std::string ftr = opath(o, "train_idx.csv"), fva = opath(o, "val_idx.csv"),
                    fte = opath(o, "test_idx.csv"), fpre = opath(o, "preprocessor.txt"),
                    fsch = opath(o, "schema.txt");
  write_indices(ftr, idx.train);
  write_indices(fva, idx.val);
  write_indices(fte, idx.test);
  write_preprocessor(fpre, pre);
  write_schema(fsch, in.schema);
  for (const auto& f : {ftr, fva, fte, fpre, fsch}) m.add_output(f);
  finish_manifest(m, o);
  std::printf("prepare: %zu train / %zu val / %zu test rows; stats over observed train cells\n",
              idx.train.size(), idx.val.size(), idx.test.size());
}

// ---------------------------------------------------------------- simulate

void run_simulate(Opt o) {
  ensure_dir(o.out_dir);
  if (o.n == 0) throw std::runtime_error("simulate: --n (rows) must be positive");
  if (o.alpha_ts.empty()) o.alpha_ts = {o.alpha_tr};
  RunManifest m;
  m.command = "simulate";
  m.set("n", std::to_string(o.n));
  m.set("p", std::to_string(o.p));
  record_scenario(m, o);
  m.set("out-dir", o.out_dir);

  auto sc = make_scenario(o.p, o.rho, o.alpha_tr, o.alpha_ts[0], o.scenario_seed);
  auto ctr = train_copula(sc);
  Rng tr_rng(ctr.seed);
  auto mtr = sample_shift_masks(ctr, o.n, tr_rng);
  const std::string ftr = opath(o, "mask_train.csv");
  write_mask_csv(ftr, mtr);
  m.add_output(ftr);
  std::printf("simulate: train mask %zux%zu missing %.4f -> %s\n", mtr.rows(), mtr.cols(),
              mtr.missing_rate(), ftr.c_str());
  for (double a : o.alpha_ts) {
    auto cts = test_copula(sc, a);
    Rng ts_rng(cts.seed);
    auto mts = sample_shift_masks(cts, o.n, ts_rng);
    char leaf[64];
    std::snprintf(leaf, sizeof leaf, "mask_test_a%.2f.csv", a);
    const std::string fts = opath(o, leaf);
    write_mask_csv(fts, mts);
    m.add_output(fts);
    std::printf("simulate: test mask alpha=%.2f missing %.4f -> %s\n", a, mts.missing_rate(),
                fts.c_str());
  }
  finish_manifest(m, o);
}

// ---------------------------------------------------------------- train / ssl

void run_train(Opt o, bool ssl) {
  ensure_dir(o.out_dir);
  if (o.alpha_ts.empty()) o.alpha_ts = {o.alpha_tr};
  RunManifest m;
  m.command = ssl ? "ssl" : "train";
  auto in = load_training_data(o, m);
  m.set("dataset", o.dataset);
  m.set("schema", o.schema);
  record_scenario(m, o);
  record_fit(m, o);
  m.set("r", format_exact(o.r));
  m.set("lambda1", format_exact(o.lambda1));
  m.set("lambda2", format_exact(o.lambda2));
  m.set("tau", format_exact(o.tau));
  if (ssl) m.set("labeled-frac", format_exact(o.labeled_frac));
  m.set("out-dir", o.out_dir);

  const std::vector<double>& alphas = o.alpha_ts;
  auto ed = prepare_experiment(in.data, split_spec(o), o.rho, o.alpha_tr, alphas[0], o.scenario_seed);

  TrainConfig tc = fit_config(o);
  tc.ssl = ssl;
  tc.labeled_frac = o.labeled_frac;
  LossConfig lc;
  lc.r = o.r;
  lc.lambda1 = o.lambda1;
  lc.lambda2 = o.lambda2;
  lc.tau = o.tau;
  lc.validate();

  const std::string fsteps = opath(o, "steps.csv");
  auto res = train(tc, lc, ed.train, ed.train_view, ed.val, ed.val_view, fsteps);

  const std::string fckpt = opath(o, "model.ckpt"), feval = opath(o, "eval.csv"),
                    fpre = opath(o, "preprocessor.txt"), fsch = opath(o, "schema.txt");
  res.model.save(fckpt);
  write_preprocessor(fpre, ed.pre);
  write_schema(fsch, in.schema);

  std::vector<std::array<double, 4>> rows;
  std::printf("%s: best val AUC %.4f at epoch %zu (%zu epochs run)\n", m.command.c_str(),
              res.best_val_auc, res.best_epoch, res.epochs_run);
  for (double a : alphas) {
    auto view = make_test_view(ed, a);
    auto ev = evaluate(res.model, ed.test, view);
    rows.push_back({o.alpha_tr, a, ev.auc, ev.accuracy});
    std::printf("  test alpha_ts=%.2f: AUC %.4f acc %.4f\n", a, ev.auc, ev.accuracy);
  }
  write_eval_csv(feval, rows);
  for (const auto& f : {fckpt, feval, fpre, fsch, fsteps}) m.add_output(f);
  finish_manifest(m, o);
}

// ---------------------------------------------------------------- grid

void run_grid(Opt o) {
  ensure_dir(o.out_dir);
  if (o.alpha_ts.empty()) o.alpha_ts = {o.alpha_tr};
  RunManifest m;
  m.command = "grid";
  auto in = load_training_data(o, m);
  m.set("dataset", o.dataset);
  m.set("schema", o.schema);
  record_scenario(m, o);
  record_fit(m, o);
  m.set("r-grid", joined(o.r_grid));
  m.set("lambda1-grid", joined(o.l1_grid));
  m.set("lambda2-grid", joined(o.l2_grid));
  m.set("tau-grid", joined(o.tau_grid));
  m.set("out-dir", o.out_dir);

  auto ed = prepare_experiment(in.data, split_spec(o), o.rho, o.alpha_tr, o.alpha_ts[0], o.scenario_seed);

  GridSpec gs;
  gs.r = o.r_grid;
  gs.lambda1 = o.l1_grid;
  gs.lambda2 = o.l2_grid;
  gs.tau = o.tau_grid;
  std::size_t threads = o.threads ? o.threads : 1;
  if (std::size_t cap = env_threads(); cap && threads > cap) threads = cap;

  auto go = grid_search(fit_config(o), gs, ed.train, ed.train_view, ed.val, ed.val_view, threads);

  const std::string fgrid = opath(o, "grid.csv"), fckpt = opath(o, "model.ckpt");
  std::ofstream f(fgrid, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + fgrid + "'");
  f << "r,lambda1,lambda2,tau,val_auc,selected,error\n";
  for (std::size_t i = 0; i < go.cells.size(); ++i) {
    const auto& c = go.cells[i];
    std::string err = c.error;
    for (auto& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    f << format_exact(c.cfg.r) << "," << format_exact(c.cfg.lambda1) << ","
      << format_exact(c.cfg.lambda2) << "," << format_exact(c.cfg.tau) << ","
      << (c.ok ? format_exact(c.val_auc) : "") << "," << (i == go.best_index ? "1" : "0") << ","
      << err << "\n";
  }
  f.close();
  go.best.model.save(fckpt);
  m.add_output(fgrid);
  m.add_output(fckpt);
  finish_manifest(m, o);
  const auto& bc = go.cells[go.best_index].cfg;
  std::printf("grid: %zu cells, selected r=%g lambda1=%g lambda2=%g tau=%g (val AUC %.4f)\n",
              go.cells.size(), bc.r, bc.lambda1, bc.lambda2, bc.tau,
              go.cells[go.best_index].val_auc);
}

// ---------------------------------------------------------------- eval

void run_eval(const Opt& o) {
  ensure_dir(o.out_dir);
  if (o.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
  RunManifest m;
  m.command = "eval";
  m.add_input(o.checkpoint);
  auto model = MirramsModel::load(o.checkpoint);

  if (o.dataset.empty() || o.schema.empty())
    throw std::runtime_error("--dataset and --schema are required");
  m.add_input(o.dataset);
  m.add_input(o.schema);
  Schema sc = read_schema(o.schema);
  TabularDataset ds = load_csv(o.dataset, sc, /*training=*/false);

  m.set("checkpoint", o.checkpoint);
  m.set("dataset", o.dataset);
  m.set("schema", o.schema);
  m.set("alpha-tr", format_exact(o.alpha_tr));
  m.set("out-dir", o.out_dir);

  if (!o.indices.empty()) {
    m.add_input(o.indices);
    m.set("indices", o.indices);
    ds = ds.take_rows(read_indices(o.indices));
  }
  if (!o.preprocessor.empty()) {
    m.add_input(o.preprocessor);
    m.set("preprocessor", o.preprocessor);
    apply_preprocessor(read_preprocessor(o.preprocessor), ds);
  }

  MaskMatrix view;
  double alpha_col = 0.0;
  if (!o.mask.empty()) {
    m.add_input(o.mask);
    m.set("mask", o.mask);
    view = compose_masks(ds.mask, read_mask_csv(o.mask));
  } else if (!o.alpha_ts.empty()) {
    m.set("alpha-ts", joined(o.alpha_ts));
    m.set("rho", format_exact(o.rho));
    m.set("scenario-seed", std::to_string(o.scenario_seed));
    auto scn = make_scenario(ds.p(), o.rho, o.alpha_ts[0], o.alpha_ts[0], o.scenario_seed);
    auto cop = test_copula(scn, o.alpha_ts[0]);
    Rng rng(cop.seed);
    view = compose_masks(ds.mask, sample_shift_masks(cop, ds.n(), rng));
    alpha_col = o.alpha_ts[0];
  } else {
    view = ds.mask;
  }

  auto ev = evaluate(model, ds, view);
  const std::string feval = opath(o, "eval.csv");
  write_eval_csv(feval, {{o.alpha_tr, alpha_col, ev.auc, ev.accuracy}});
  m.add_output(feval);
  finish_manifest(m, o);
  std::printf("eval: AUC %.4f acc %.4f on %zu rows (missing %.4f)\n", ev.auc, ev.accuracy, ds.n(),
              view.missing_rate());
}

// ---------------------------------------------------------------- verify-theory

void run_verify_theory(const Opt& o) {
  Rng root(o.seed);
  std::size_t pass = 0;
  std::ostringstream rowsout;
  rowsout << "system,nu,nv,mi_uv,mi_xi_v,delta,expected_kl,max_kl,holds\n";
  for (std::size_t s = 0; s < o.systems; ++s) {
    Rng sys = root.derive(s + 1);
    const std::size_t nu = 2 + sys.below(o.umax - 1), nv = 2 + sys.below(o.vmax - 1);
    auto joint = DiscreteJoint::random(nu, nv, sys);
    std::vector<std::size_t> xi(nu);
    const std::size_t nq = 1 + sys.below(nu);
    for (auto& q : xi) q = sys.below(nq);
    auto rep = verify_proposition(joint, xi);
    const bool ok = rep.holds(1e-10);
    pass += ok;
    rowsout << s << "," << nu << "," << nv << "," << format_exact(rep.mi_uv) << ","
            << format_exact(rep.mi_xi_v) << "," << format_exact(rep.delta) << ","
            << format_exact(rep.expected_kl) << "," << format_exact(rep.max_kl) << ","
            << (ok ? 1 : 0) << "\n";
  }
  if (!o.out_dir.empty() && o.out_dir != ".") {
    ensure_dir(o.out_dir);
    const std::string fcsv = opath(o, "theory.csv");
    std::ofstream f(fcsv, std::ios::binary);
    f << rowsout.str();
    f.close();
    RunManifest m;
    m.command = "verify-theory";
    m.set("systems", std::to_string(o.systems));
    m.set("seed", std::to_string(o.seed));
    m.set("umax", std::to_string(o.umax));
    m.set("vmax", std::to_string(o.vmax));
    m.set("out-dir", o.out_dir);
    m.add_output(fcsv);
    finish_manifest(m, o);
  }
  std::printf("%zu/%zu pass\n", pass, o.systems);
  if (pass != o.systems) throw std::runtime_error("theory verification failed");
}

// ---------------------------------------------------------------- report

struct EvalRow {
  double alpha_tr, alpha_ts, auc, accuracy;
};

std::vector<EvalRow> read_eval_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty eval file '" + path + "'");
  std::vector<EvalRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    EvalRow r{};
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &r.alpha_tr, &r.alpha_ts, &r.auc, &r.accuracy) != 4)
      throw std::runtime_error("malformed eval row in '" + path + "': " + line);
    rows.push_back(r);
  }
  return rows;
}

void run_report(const Opt& o) {
  if (o.runs.empty()) throw std::runtime_error("report: pass at least one eval.csv via --runs");
  ensure_dir(o.out_dir);
  RunManifest m;
  m.command = "report";
  m.set("runs", join_str(o.runs));
  if (!o.labels.empty()) m.set("labels", join_str(o.labels));
  m.set("title", o.title);
  m.set("out-dir", o.out_dir);

  std::vector<Series> series;
  std::vector<std::vector<EvalRow>> all;
  for (std::size_t i = 0; i < o.runs.size(); ++i) {
    m.add_input(o.runs[i]);
    auto rows = read_eval_csv(o.runs[i]);
    Series s;
    s.label = i < o.labels.size() ? o.labels[i] : fs::path(o.runs[i]).parent_path().filename().string();
    if (s.label.empty()) s.label = fs::path(o.runs[i]).stem().string();
    for (const auto& r : rows) {
      s.x.push_back(r.alpha_ts);
      s.y.push_back(r.auc);
    }
    series.push_back(std::move(s));
    all.push_back(std::move(rows));
  }

  // table: one column per (alpha_tr, alpha_ts) pair, one row per run
  std::vector<std::pair<double, double>> cols;
  for (const auto& rows : all)
    for (const auto& r : rows) {
      std::pair<double, double> key{r.alpha_tr, r.alpha_ts};
      bool seen = false;
      for (const auto& c : cols) seen = seen || c == key;
      if (!seen) cols.push_back(key);
    }
  std::sort(cols.begin(), cols.end());

  const std::string ftab = opath(o, "table.csv"), fsvg = opath(o, "chart.svg");
  std::ofstream f(ftab, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + ftab + "'");
  f << "run";
  char head[64];
  for (const auto& c : cols) {
    std::snprintf(head, sizeof head, ",auc(atr=%g;ats=%g)", c.first, c.second);
    f << head;
  }
  f << "\n";
  for (std::size_t i = 0; i < all.size(); ++i) {
    f << series[i].label;
    for (const auto& c : cols) {
      f << ",";
      for (const auto& r : all[i])
        if (r.alpha_tr == c.first && r.alpha_ts == c.second) {
          f << format_exact(r.auc);
          break;
        }
    }
    f << "\n";
  }
  f.close();

  write_line_chart_svg(fsvg, o.title, "alpha_ts (test missingness level)", "test AUC", series);
  m.add_output(ftab);
  m.add_output(fsvg);
  finish_manifest(m, o);
  std::printf("report: %zu runs, %zu scenario columns -> %s, %s\n", all.size(), cols.size(),
              ftab.c_str(), fsvg.c_str());
}

// ---------------------------------------------------------------- replay

int dispatch_args(const std::vector<std::string>& args);

void run_replay(const Opt& o) {
  if (o.manifest.empty()) throw std::runtime_error("--manifest is required");
  RunManifest m = read_manifest(o.manifest);
  for (const auto& [path, hash] : m.inputs) {
    const std::string now = sha256_file(path);
    if (now != hash)
      throw std::runtime_error("replay: input '" + path + "' changed since the recorded run (" + now +
                               " != " + hash + ")");
  }
  std::vector<std::string> args{m.command};
  for (const auto& [k, v] : m.config) {
    if (k == "out-dir" && !o.out_dir.empty() && o.out_dir != ".") continue;
    if (v.empty()) continue;
    const bool multi = k == "alpha-ts" || k == "runs" || k == "labels" ||
                       (k.size() > 5 && k.substr(k.size() - 5) == "-grid");
    if (multi) {
      std::istringstream iss(v);
      std::string tok;
      args.push_back("--" + k);
      while (iss >> tok) args.push_back(tok);
    } else {
      args.push_back("--" + k);
      args.push_back(v);
    }
  }
  if (!o.out_dir.empty() && o.out_dir != ".") {
    args.push_back("--out-dir");
    args.push_back(o.out_dir);
  }
  const int rc = dispatch_args(args);
  if (rc != 0) throw std::runtime_error("replayed command failed");
}

// ---------------------------------------------------------------- app wiring

int dispatch_args(const std::vector<std::string>& args) {
  CLI::App app{"training tabular classifiers that stay calibrated when the missingness pattern shifts"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "plain-text config file with key = value lines under a [subcommand] section; "
                 "command-line flags override it");
  auto o = std::make_shared<Opt>();

  auto add_data = [&](CLI::App* c) {
    c->add_option("--dataset", o->dataset, "input CSV");
    c->add_option("--schema", o->schema, "schema file describing the CSV columns");
  };
  auto add_scenario = [&](CLI::App* c) {
    c->add_option("--rho", o->rho, "AR(1) mask correlation")->capture_default_str();
    c->add_option("--alpha-tr", o->alpha_tr, "training missingness level")->capture_default_str();
    c->add_option("--alpha-ts", o->alpha_ts, "test missingness levels")->expected(-1);
    c->add_option("--scenario-seed", o->scenario_seed, "mask generator seed")->capture_default_str();
    c->add_option("--split-seed", o->split_seed, "train/val/test split seed")->capture_default_str();
  };
  auto add_fit = [&](CLI::App* c) {
    c->add_option("--preset", o->preset, "encoder preset: paper, paper-highdim, desk")
        ->capture_default_str();
    c->add_option("--epochs", o->epochs, "max training epochs")->capture_default_str();
    c->add_option("--batch", o->batch, "batch size")->capture_default_str();
    c->add_option("--patience", o->patience, "early-stopping patience in epochs")->capture_default_str();
    c->add_option("--lr", o->lr, "Adam learning rate")->capture_default_str();
    c->add_option("--seed", o->seed, "training seed")->capture_default_str();
  };
  auto add_loss = [&](CLI::App* c) {
    c->add_option("--r", o->r, "additional-mask probability")->capture_default_str();
    c->add_option("--lambda1", o->lambda1, "masked-view loss weight")->capture_default_str();
    c->add_option("--lambda2", o->lambda2, "consistency loss weight")->capture_default_str();
    c->add_option("--tau", o->tau, "pseudo-label confidence threshold")->capture_default_str();
  };
  auto add_out = [&](CLI::App* c) {
    c->add_option("--out-dir", o->out_dir, "output directory")->capture_default_str();
  };

  auto* c_synth = app.add_subcommand("synth", "generate a bundled synthetic dataset");
  c_synth->add_option("--name", o->name, "qsar_bio, htru2, or demo")->capture_default_str();
  c_synth->add_option("--n", o->n, "row count (0 = canonical size)")->capture_default_str();
  c_synth->add_option("--gen-seed", o->gen_seed, "generator seed")->capture_default_str();
  add_out(c_synth);

  auto* c_prep = app.add_subcommand("prepare", "split a dataset and fit preprocessing statistics");
  add_data(c_prep);
  c_prep->add_option("--split-seed", o->split_seed, "split seed")->capture_default_str();
  c_prep->add_option("--train-frac", o->train_frac, "train fraction")->capture_default_str();
  c_prep->add_option("--val-frac", o->val_frac, "validation fraction")->capture_default_str();
  c_prep->add_option("--test-frac", o->test_frac, "test fraction")->capture_default_str();
  add_out(c_prep);

  auto* c_sim = app.add_subcommand("simulate", "sample correlated missingness masks");
  c_sim->add_option("--n", o->n, "rows to sample");
  c_sim->add_option("--p", o->p, "columns")->capture_default_str();
  add_scenario(c_sim);
  c_sim->add_option("--alpha", o->alpha_both, "shorthand: set alpha-tr and the single alpha-ts");
  add_out(c_sim);

  auto* c_train = app.add_subcommand("train", "train a shift-robust classifier");
  add_data(c_train);
  add_scenario(c_train);
  add_fit(c_train);
  add_loss(c_train);
  add_out(c_train);

  auto* c_ssl = app.add_subcommand("ssl", "train with a labeled fraction plus unlabeled consistency");
  add_data(c_ssl);
  add_scenario(c_ssl);
  add_fit(c_ssl);
  add_loss(c_ssl);
  c_ssl->add_option("--labeled-frac", o->labeled_frac, "fraction of training rows with labels")
      ->capture_default_str();
  add_out(c_ssl);

  auto* c_grid = app.add_subcommand("grid", "hyperparameter grid search selected on validation AUC");
  add_data(c_grid);
  add_scenario(c_grid);
  add_fit(c_grid);
  c_grid->add_option("--r-grid", o->r_grid, "additional-mask grid")->expected(-1);
  c_grid->add_option("--lambda1-grid", o->l1_grid, "lambda1 grid")->expected(-1);
  c_grid->add_option("--lambda2-grid", o->l2_grid, "lambda2 grid")->expected(-1);
  c_grid->add_option("--tau-grid", o->tau_grid, "tau grid")->expected(-1);
  c_grid->add_option("--threads", o->threads, "worker threads (MIRRAMS_THREADS caps this)");
  add_out(c_grid);

  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint under a missingness view");
  c_eval->add_option("--checkpoint", o->checkpoint, "model checkpoint");
  add_data(c_eval);
  c_eval->add_option("--indices", o->indices, "optional row-subset file");
  c_eval->add_option("--preprocessor", o->preprocessor, "standardization statistics file");
  c_eval->add_option("--mask", o->mask, "mask CSV to compose with native missingness");
  c_eval->add_option("--alpha-ts", o->alpha_ts, "sample a test mask at this level instead")->expected(-1);
  c_eval->add_option("--alpha-tr", o->alpha_tr, "training level recorded in the output row")
      ->capture_default_str();
  c_eval->add_option("--rho", o->rho, "AR(1) mask correlation")->capture_default_str();
  c_eval->add_option("--scenario-seed", o->scenario_seed, "mask generator seed")->capture_default_str();
  add_out(c_eval);

  auto* c_theory = app.add_subcommand("verify-theory",
                                      "check the information-loss identity on random discrete systems");
  c_theory->add_option("--systems", o->systems, "number of random systems")->capture_default_str();
  c_theory->add_option("--seed", o->seed, "system generator seed")->capture_default_str();
  c_theory->add_option("--umax", o->umax, "max |U|")->capture_default_str();
  c_theory->add_option("--vmax", o->vmax, "max |V|")->capture_default_str();
  add_out(c_theory);

  auto* c_report = app.add_subcommand("report", "combine eval outputs into a table and chart");
  c_report->add_option("--runs", o->runs, "eval.csv files")->expected(-1);
  c_report->add_option("--labels", o->labels, "series labels, one per run")->expected(-1);
  c_report->add_option("--title", o->title, "chart title")->capture_default_str();
  add_out(c_report);

  auto* c_replay = app.add_subcommand("replay", "re-run a recorded manifest bit-exactly");
  c_replay->add_option("--manifest", o->manifest, "run.manifest to replay");
  add_out(c_replay);

  // CLI11 reads config files on the root app only; hoist the flag so it can
  // also be written after the subcommand name.
  std::vector<std::string> ordered, rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      ordered.push_back(args[i]);
      ordered.push_back(args[++i]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      ordered.push_back(args[i]);
    } else {
      rest.push_back(args[i]);
    }
  }
  ordered.insert(ordered.end(), rest.begin(), rest.end());

  std::vector<std::string> rev(ordered.rbegin(), ordered.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (c_sim->parsed() && o->alpha_both >= 0) {
    o->alpha_tr = o->alpha_both;
    o->alpha_ts = {o->alpha_both};
  }

  try {
    if (c_synth->parsed()) run_synth(*o);
    else if (c_prep->parsed()) run_prepare(*o);
    else if (c_sim->parsed()) run_simulate(*o);
    else if (c_train->parsed()) run_train(*o, false);
    else if (c_ssl->parsed()) run_train(*o, true);
    else if (c_grid->parsed()) run_grid(*o);
    else if (c_eval->parsed()) run_eval(*o);
    else if (c_theory->parsed()) run_verify_theory(*o);
    else if (c_report->parsed()) run_report(*o);
    else if (c_replay->parsed()) run_replay(*o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    write_failed_marker(o->out_dir, e.what());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch_args(args);
}
