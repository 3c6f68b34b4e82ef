#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mirrams/data.hpp"
#include "mirrams/graph.hpp"
#include "mirrams/missingness.hpp"
#include "mirrams/rng.hpp"
#include "mirrams/tensor.hpp"

namespace mirrams {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderConfig {
  std::size_t d = 32;
  std::size_t depth = 6;
  std::size_t heads = 8;
  std::size_t ff_mult = 4;
  double dropout = 0.1;
  std::size_t embed_hidden = 100;  // hidden units of the per-feature value MLP
};

// "paper" (d=32/depth 6/heads 8), "paper-highdim" (d=4, for p > 100),
// "desk" (small config for minutes-scale runs)
EncoderConfig preset_config(const std::string& name);

struct ModelSpec {
  std::size_t p_cont = 0;
  std::vector<std::size_t> cat_vocab;  // per categorical feature, INCLUDING the unknown slot
  std::size_t num_classes = 2;
  EncoderConfig enc;

  std::size_t p() const { return p_cont + cat_vocab.size(); }
};

ModelSpec spec_for(const TabularDataset& ds, const EncoderConfig& enc);

struct Prediction {
  Tensor probs;                    // n x K
  std::vector<int> label;          // argmax, ties -> lowest index
  std::vector<double> confidence;  // max prob per row
};

// Per-feature embeddings with dedicated missing tokens, a CLS token, a
// pre-norm transformer encoder over the p+1 token positions, and a 2-layer
// head read off the CLS position.
class MirramsModel {
 public:
  MirramsModel(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::size_t param_count() const { return params_.size(); }
  std::size_t scalar_count() const;
  const std::string& param_name(std::size_t i) const { return params_[i].first; }
  Tensor& param(std::size_t i) { return params_[i].second; }
  const Tensor& param(std::size_t i) const { return params_[i].second; }
  std::vector<Tensor*> param_ptrs();

  // registers every parameter as a named graph leaf; returns ids in param order
  std::vector<int> bind(Graph& g) const;

  // One forward pass over the given rows under an observation view.
  // `view` is (rows.size() x p); masked cells never influence the output.
  // Training-time dropout: pass a draw store (shared across the views of one
  // step for bit-identical noise) plus an RNG that fills it on first use.
  // Leave both null for evaluation semantics.
  int forward_logits(Graph& g, const std::vector<int>& leaves, const TabularDataset& ds,
                     const std::vector<std::size_t>& rows, const MaskMatrix& view,
                     std::vector<Tensor>* drop_store = nullptr, Rng* drop_rng = nullptr) const;

  Prediction predict(const TabularDataset& ds, const std::vector<std::size_t>& rows, const MaskMatrix& view,
                     std::size_t eval_batch = 512) const;

  void save(const std::string& path) const;
  static MirramsModel load(const std::string& path);

 private:
  struct ContEmb {
    int w1, b1, w2, b2;
  };
  struct Block {
    int ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, ffw1, ffb1, ffw2, ffb2;
  };

  int add_param(const std::string& name, Tensor t);

  ModelSpec spec_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<ContEmb> cont_;
  std::vector<int> cat_;
  int missing_ = -1, cls_ = -1;
  std::vector<Block> blocks_;
  int flng_ = -1, flnb_ = -1;
  int hw1_ = -1, hb1_ = -1, hw2_ = -1, hb2_ = -1;
};

}  // namespace mirrams
