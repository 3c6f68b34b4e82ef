#include "mirrams/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace mirrams {

EncoderConfig preset_config(const std::string& name) {
  EncoderConfig c;
  if (name == "paper") {
    c = {32, 6, 8, 4, 0.1, 100};
  } else if (name == "paper-highdim") {
    c = {4, 6, 2, 4, 0.1, 100};
  } else if (name == "desk") {
    c = {16, 2, 4, 2, 0.1, 32};
  } else {
    throw ModelError("unknown preset '" + name + "' (want paper, paper-highdim, or desk)");
  }
  return c;
}

ModelSpec spec_for(const TabularDataset& ds, const EncoderConfig& enc) {
  ModelSpec s;
  s.p_cont = ds.p_cont();
  for (std::size_t j = 0; j < ds.p_cat(); ++j) {
    std::int32_t hi = 0;
    for (std::int32_t v : ds.xcat[j]) hi = std::max(hi, v);
    s.cat_vocab.push_back(static_cast<std::size_t>(hi) + 2);  // room for the unknown slot
  }
  s.num_classes = ds.num_classes;
  s.enc = enc;
  return s;
}

namespace {

Tensor trunc_normal(const Shape& shape, double sigma, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = rng.normal() * sigma;
    while (std::abs(v) > 2.0 * sigma) v = rng.normal() * sigma;
    t[i] = v;
  }
  return t;
}

Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t({fan_in, fan_out});
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

}  // namespace

int MirramsModel::add_param(const std::string& name, Tensor t) {
  t.requires_grad = true;
  params_.emplace_back(name, std::move(t));
  return static_cast<int>(params_.size()) - 1;
}

MirramsModel::MirramsModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  const auto& e = spec_.enc;
  if (e.d == 0 || e.heads == 0 || e.d % e.heads != 0)
    throw ModelError("encoder: dim " + std::to_string(e.d) + " not divisible by " + std::to_string(e.heads) +
                     " heads");
  if (e.depth == 0) throw ModelError("encoder: depth must be >= 1");
  if (spec_.num_classes < 2) throw ModelError("model: need at least 2 classes");
  Rng root(seed);
  Rng trng = root.derive(1);  // token-style params
  Rng wrng = root.derive(2);  // weight matrices

  const std::size_t d = e.d, h = e.embed_hidden, p = spec_.p();
  for (std::size_t i = 0; i < spec_.p_cont; ++i) {
    const std::string base = "emb.cont" + std::to_string(i) + ".";
    ContEmb ce;
    ce.w1 = add_param(base + "w1", kaiming_uniform(1, h, wrng));
    ce.b1 = add_param(base + "b1", Tensor({1, h}));
    ce.w2 = add_param(base + "w2", kaiming_uniform(h, d, wrng));
    ce.b2 = add_param(base + "b2", Tensor({1, d}));
    cont_.push_back(ce);
  }
  for (std::size_t j = 0; j < spec_.cat_vocab.size(); ++j)
    cat_.push_back(add_param("emb.cat" + std::to_string(j) + ".table",
                             trunc_normal({spec_.cat_vocab[j], d}, 0.02, trng)));
  missing_ = add_param("emb.missing", trunc_normal({p, d}, 0.02, trng));
  cls_ = add_param("emb.cls", trunc_normal({1, d}, 0.02, trng));

  Tensor lnone({1, d});
  lnone.fill(1.0);
  for (std::size_t b = 0; b < e.depth; ++b) {
    const std::string base = "blk" + std::to_string(b) + ".";
    Block blk;
    blk.ln1g = add_param(base + "ln1.g", lnone);
    blk.ln1b = add_param(base + "ln1.b", Tensor({1, d}));
    blk.wq = add_param(base + "wq", kaiming_uniform(d, d, wrng));
    blk.bq = add_param(base + "bq", Tensor({1, d}));
    blk.wk = add_param(base + "wk", kaiming_uniform(d, d, wrng));
    blk.bk = add_param(base + "bk", Tensor({1, d}));
    blk.wv = add_param(base + "wv", kaiming_uniform(d, d, wrng));
    blk.bv = add_param(base + "bv", Tensor({1, d}));
    blk.wo = add_param(base + "wo", kaiming_uniform(d, d, wrng));
    blk.bo = add_param(base + "bo", Tensor({1, d}));
    blk.ln2g = add_param(base + "ln2.g", lnone);
    blk.ln2b = add_param(base + "ln2.b", Tensor({1, d}));
    blk.ffw1 = add_param(base + "ff.w1", kaiming_uniform(d, e.ff_mult * d, wrng));
    blk.ffb1 = add_param(base + "ff.b1", Tensor({1, e.ff_mult * d}));
    blk.ffw2 = add_param(base + "ff.w2", kaiming_uniform(e.ff_mult * d, d, wrng));
    blk.ffb2 = add_param(base + "ff.b2", Tensor({1, d}));
    blocks_.push_back(blk);
  }
  flng_ = add_param("final_ln.g", lnone);
  flnb_ = add_param("final_ln.b", Tensor({1, d}));
  hw1_ = add_param("head.w1", kaiming_uniform(d, d, wrng));
  hb1_ = add_param("head.b1", Tensor({1, d}));
  hw2_ = add_param("head.w2", kaiming_uniform(d, spec_.num_classes, wrng));
  hb2_ = add_param("head.b2", Tensor({1, spec_.num_classes}));
}

std::size_t MirramsModel::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

std::vector<Tensor*> MirramsModel::param_ptrs() {
  std::vector<Tensor*> out;
  out.reserve(params_.size());
  for (auto& [name, t] : params_) out.push_back(&t);
  return out;
}

std::vector<int> MirramsModel::bind(Graph& g) const {
  std::vector<int> ids;
  ids.reserve(params_.size());
  for (const auto& [name, t] : params_) ids.push_back(g.leaf(t, name));
  return ids;
}

int MirramsModel::forward_logits(Graph& g, const std::vector<int>& L, const TabularDataset& ds,
                                 const std::vector<std::size_t>& rows, const MaskMatrix& view,
                                 std::vector<Tensor>* drop_store, Rng* drop_rng) const {
  const std::size_t nb = rows.size();
  const std::size_t p = spec_.p();
  if (ds.p_cont() != spec_.p_cont || ds.p_cat() != spec_.cat_vocab.size())
    throw ModelError("forward: dataset has " + std::to_string(ds.p()) + " features, model expects " +
                     std::to_string(p));
  if (view.rows() != nb || view.cols() != p)
    throw ModelError("forward: view is " + std::to_string(view.rows()) + "x" + std::to_string(view.cols()) +
                     ", expected " + std::to_string(nb) + "x" + std::to_string(p));

  const bool training = drop_store != nullptr && spec_.enc.dropout > 0.0;
  std::size_t drop_at = 0;
  const auto dropout = [&](int node) {
    if (!training) return node;
    const Tensor& shape_of = g.value(node);
    if (drop_at == drop_store->size()) {
      if (!drop_rng) throw ModelError("forward: dropout store exhausted and no RNG to extend it");
      Tensor w(shape_of.shape());
      const double q = spec_.enc.dropout, inv = 1.0 / (1.0 - q);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = drop_rng->uniform() < q ? 0.0 : inv;
      drop_store->push_back(std::move(w));
    } else if (!(*drop_store)[drop_at].same_shape(shape_of)) {
      throw ModelError("forward: dropout draw shape mismatch at site " + std::to_string(drop_at));
    }
    return g.cmul(node, (*drop_store)[drop_at++]);
  };

  // tokens: CLS first, then one embedding per feature (missing token when unobserved)
  std::vector<int> toks;
  toks.reserve(p + 1);
  toks.push_back(g.repeat_row(L[static_cast<std::size_t>(cls_)], nb));
  for (std::size_t i = 0; i < spec_.p_cont; ++i) {
    Tensor xcol({nb, 1});
    for (std::size_t r = 0; r < nb; ++r) xcol[r] = view.at(r, i) ? ds.xcont.at(rows[r], i) : 0.0;
    const auto& ce = cont_[i];
    const int emb = g.mlp1h(g.constant(std::move(xcol)), L[static_cast<std::size_t>(ce.w1)],
                            L[static_cast<std::size_t>(ce.b1)], L[static_cast<std::size_t>(ce.w2)],
                            L[static_cast<std::size_t>(ce.b2)], Activation::Relu);
    const int miss = g.gather_rows(L[static_cast<std::size_t>(missing_)], {static_cast<std::int32_t>(i)});
    toks.push_back(g.select_rows(view.column(i), emb, miss));
  }
  for (std::size_t j = 0; j < spec_.cat_vocab.size(); ++j) {
    const std::size_t f = spec_.p_cont + j;
    std::vector<std::int32_t> idx(nb);
    for (std::size_t r = 0; r < nb; ++r) {
      const std::int32_t v = view.at(r, f) ? ds.xcat[j][rows[r]] : 0;
      if (static_cast<std::size_t>(v) >= spec_.cat_vocab[j])
        throw ModelError("forward: category index " + std::to_string(v) + " out of range for feature " +
                         ds.cat_names[j]);
      idx[r] = v;
    }
    const int emb = g.gather_rows(L[static_cast<std::size_t>(cat_[j])], std::move(idx));
    const int miss = g.gather_rows(L[static_cast<std::size_t>(missing_)], {static_cast<std::int32_t>(f)});
    toks.push_back(g.select_rows(view.column(f), emb, miss));
  }
  int h = g.stack_tokens(toks);  // (nb, p+1, d)

  for (const auto& blk : blocks_) {
    const int a = g.layer_norm(h, L[static_cast<std::size_t>(blk.ln1g)], L[static_cast<std::size_t>(blk.ln1b)]);
    const int q = g.add(g.matmul(a, L[static_cast<std::size_t>(blk.wq)]), L[static_cast<std::size_t>(blk.bq)]);
    const int k = g.add(g.matmul(a, L[static_cast<std::size_t>(blk.wk)]), L[static_cast<std::size_t>(blk.bk)]);
    const int v = g.add(g.matmul(a, L[static_cast<std::size_t>(blk.wv)]), L[static_cast<std::size_t>(blk.bv)]);
    int att = g.attention(q, k, v, spec_.enc.heads);
    att = g.add(g.matmul(att, L[static_cast<std::size_t>(blk.wo)]), L[static_cast<std::size_t>(blk.bo)]);
    h = g.add(h, dropout(att));
    const int f = g.layer_norm(h, L[static_cast<std::size_t>(blk.ln2g)], L[static_cast<std::size_t>(blk.ln2b)]);
    const int ff = g.mlp1h(f, L[static_cast<std::size_t>(blk.ffw1)], L[static_cast<std::size_t>(blk.ffb1)],
                           L[static_cast<std::size_t>(blk.ffw2)], L[static_cast<std::size_t>(blk.ffb2)],
                           Activation::Gelu);
    h = g.add(h, dropout(ff));
  }
  h = g.layer_norm(h, L[static_cast<std::size_t>(flng_)], L[static_cast<std::size_t>(flnb_)]);
  const int cls_out = g.slice_tokens(h, 0, 1);  // (nb, 1, d)
  return g.mlp1h(cls_out, L[static_cast<std::size_t>(hw1_)], L[static_cast<std::size_t>(hb1_)],
                 L[static_cast<std::size_t>(hw2_)], L[static_cast<std::size_t>(hb2_)], Activation::Relu);
}

Prediction MirramsModel::predict(const TabularDataset& ds, const std::vector<std::size_t>& rows,
                                 const MaskMatrix& view, std::size_t eval_batch) const {
  const std::size_t n = rows.size(), k = spec_.num_classes;
  Prediction out;
  out.probs = Tensor({n, k});
  out.label.resize(n);
  out.confidence.resize(n);
  for (std::size_t at = 0; at < n; at += eval_batch) {
    const std::size_t take = std::min(eval_batch, n - at);
    std::vector<std::size_t> chunk(rows.begin() + static_cast<std::ptrdiff_t>(at),
                                   rows.begin() + static_cast<std::ptrdiff_t>(at + take));
    std::vector<std::size_t> vrows(take);
    for (std::size_t i = 0; i < take; ++i) vrows[i] = at + i;
    Graph g;
    const auto leaves = bind(g);
    const int logits = forward_logits(g, leaves, ds, chunk, view.take_rows(vrows));
    const int probs = g.softmax_last(logits);
    const Tensor& pv = g.value(probs);
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double p = pv[i * k + c];
        out.probs[(at + i) * k + c] = p;
        if (p > pv[i * k + best]) best = c;
      }
      out.label[at + i] = static_cast<int>(best);
      out.confidence[at + i] = pv[i * k + best];
    }
  }
  return out;
}

namespace {

void put_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_f64(std::ofstream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
double get_f64(std::ifstream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

constexpr char kMagic[8] = {'M', 'R', 'M', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void MirramsModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot open " + path + " for writing");
  out.write(kMagic, sizeof kMagic);
  put_u64(out, spec_.p_cont);
  put_u64(out, spec_.cat_vocab.size());
  for (std::size_t v : spec_.cat_vocab) put_u64(out, v);
  put_u64(out, spec_.num_classes);
  put_u64(out, spec_.enc.d);
  put_u64(out, spec_.enc.depth);
  put_u64(out, spec_.enc.heads);
  put_u64(out, spec_.enc.ff_mult);
  put_f64(out, spec_.enc.dropout);
  put_u64(out, spec_.enc.embed_hidden);
  put_u64(out, params_.size());
  for (const auto& [name, t] : params_) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.shape().size());
    for (std::size_t dsz : t.shape()) put_u64(out, dsz);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw ModelError("write failed for " + path);
}

MirramsModel MirramsModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ModelError(path + ": not a model checkpoint");
  ModelSpec spec;
  spec.p_cont = get_u64(in);
  spec.cat_vocab.resize(get_u64(in));
  for (auto& v : spec.cat_vocab) v = get_u64(in);
  spec.num_classes = get_u64(in);
  spec.enc.d = get_u64(in);
  spec.enc.depth = get_u64(in);
  spec.enc.heads = get_u64(in);
  spec.enc.ff_mult = get_u64(in);
  spec.enc.dropout = get_f64(in);
  spec.enc.embed_hidden = get_u64(in);
  MirramsModel m(spec, 0);
  const std::uint64_t np = get_u64(in);
  if (np != m.params_.size())
    throw ModelError(path + ": has " + std::to_string(np) + " params, config implies " +
                     std::to_string(m.params_.size()));
  for (std::uint64_t i = 0; i < np; ++i) {
    std::string name(get_u64(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(get_u64(in));
    for (auto& dsz : shape) dsz = get_u64(in);
    if (name != m.params_[i].first || shape != m.params_[i].second.shape())
      throw ModelError(path + ": param " + std::to_string(i) + " is '" + name + "', expected '" +
                       m.params_[i].first + "'");
    in.read(reinterpret_cast<char*>(m.params_[i].second.data()),
            static_cast<std::streamsize>(m.params_[i].second.size() * sizeof(double)));
  }
  if (!in) throw ModelError(path + ": truncated checkpoint");
  return m;
}

}  // namespace mirrams
