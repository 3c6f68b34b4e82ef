#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mirrams/adam.hpp"
#include "mirrams/data.hpp"
#include "mirrams/metrics.hpp"
#include "mirrams/missingness.hpp"
#include "mirrams/model.hpp"
#include "mirrams/objective.hpp"

namespace mirrams {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  AdamConfig adam{};           // lr 1e-4 default
  std::size_t batch = 256;     // capped at 64 when p > 100
  std::size_t max_epochs = 200;
  std::size_t patience = 30;   // early stopping on validation AUC
  std::uint64_t seed = 0;
  std::string preset = "desk";
  bool ssl = false;
  double labeled_frac = 0.1;  // SSL only
};

EncoderConfig resolve_encoder(const std::string& preset, std::size_t p);
std::size_t resolve_batch(std::size_t batch, std::size_t p);

struct EpochLog {
  std::size_t epoch = 0;
  double l1 = 0, l2 = 0, l3 = 0, pass_rate = 0, total = 0;
  double val_auc = 0;
};

struct TrainResult {
  MirramsModel model;  // best-validation checkpoint, not the last epoch
  double best_val_auc = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<EpochLog> log;
};

TrainResult train(const TrainConfig& tc, const LossConfig& lc, const TabularDataset& tr, const MaskMatrix& tr_view,
                  const TabularDataset& va, const MaskMatrix& va_view, const std::string& step_log_path = "");

// Reference cross-entropy loop sharing the model and RNG discipline but none
// of the objective machinery; train() with lambda1 = lambda2 = 0 must match it
// bit-exactly under a shared seed.
TrainResult train_plain_ce(const TrainConfig& tc, const TabularDataset& tr, const MaskMatrix& tr_view,
                           const TabularDataset& va, const MaskMatrix& va_view,
                           const std::string& step_log_path = "");

struct EvalResult {
  double auc = 0.0;
  double accuracy = 0.0;
  ScoredLabels scored;
};

EvalResult evaluate(const MirramsModel& m, const TabularDataset& ds, const MaskMatrix& view);

struct GridSpec {
  std::vector<double> r{0.0, 0.1, 0.2, 0.3, 0.4};
  std::vector<double> lambda1{0, 1, 5, 10, 15, 20};
  std::vector<double> lambda2{0, 1, 5, 10, 15, 20};
  std::vector<double> tau{0.8, 0.9, 0.95, 0.99};
};

struct GridCell {
  LossConfig cfg;
  double val_auc = 0.0;
  bool ok = false;
  std::string error;
};

struct GridOutcome {
  std::vector<GridCell> cells;
  std::size_t best_index = 0;
  TrainResult best;
};

// One training run per grid point (derived seed per cell), selected by max
// validation AUC. A failed cell is recorded in its row, not fatal.
GridOutcome grid_search(const TrainConfig& base, const GridSpec& grid, const TabularDataset& tr,
                        const MaskMatrix& tr_view, const TabularDataset& va, const MaskMatrix& va_view,
                        std::size_t threads = 1);

// split + preprocess + scenario masks; validation masks continue the
// training-copula stream, test masks come from the test permutation and are
// regenerated per alpha_ts from a fixed seed (nested across rates).
struct ExperimentData {
  ShiftScenario scenario;
  SplitIndices splits;
  Preprocessor pre;
  TabularDataset train, val, test;
  MaskMatrix train_view, val_view;
};

ExperimentData prepare_experiment(const TabularDataset& full, const SplitSpec& split, double rho, double alpha_tr,
                                  double alpha_ts, std::uint64_t scenario_seed);
MaskMatrix make_test_view(const ExperimentData& ed, double alpha_ts);

std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, double frac, Rng& rng);

// Zero-imputation logistic baseline: masked continuous cells become 0, masked
// categoricals an all-zero one-hot block.
struct LogisticModel {
  Tensor w, b;
  std::size_t p_cont = 0;
  std::vector<std::size_t> cat_vocab;
  std::size_t num_classes = 2;
};

LogisticModel train_logistic(const TabularDataset& tr, const MaskMatrix& view, std::uint64_t seed,
                             std::size_t epochs = 500, double lr = 1e-2);
EvalResult evaluate_logistic(const LogisticModel& lm, const TabularDataset& ds, const MaskMatrix& view);

}  // namespace mirrams
