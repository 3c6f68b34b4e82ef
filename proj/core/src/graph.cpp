#include "mirrams/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

namespace mirrams {

namespace {

constexpr double kLnEps = 1e-5;           // layer-norm variance floor
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// C (M,N) += A (M,K) * B (K,N)
void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (M,N) += A (M,K) * B^T, with B stored as (N,K). B is transposed into
// scratch first so the inner loop is a vectorizable axpy; worthwhile whenever
// K*N is small next to M*K*N, which holds for every weight matrix here.
void gemm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* __restrict bp = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (K,N) += A^T * B, with A stored as (M,K), B as (M,N)
void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* __restrict cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

double gelu_fwd(double x) { return x * 0.5 * std::erfc(-x * 0.7071067811865475244); }

double gelu_bwd(double x) {
  const double phi = 0.5 * std::erfc(-x * 0.7071067811865475244);
  return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void apply_act(Activation act, const double* in, double* out, std::size_t n) {
  if (act == Activation::Relu) {
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = gelu_fwd(in[i]);
  }
}

void apply_act_grad(Activation act, const double* pre, double* grad, std::size_t n) {
  if (act == Activation::Relu) {
    for (std::size_t i = 0; i < n; ++i)
      if (pre[i] <= 0.0) grad[i] = 0.0;
  } else {
    for (std::size_t i = 0; i < n; ++i) grad[i] *= gelu_bwd(pre[i]);
  }
}

// Per-head attention kernels on contiguous (T, DK) scratch; DK fixed at
// compile time so the short per-channel loops fully unroll.
struct AttnScratch {
  std::vector<double> qh, kt, vh, srow;        // kt is (DK, T) transposed keys
  std::vector<double> doh, dqh, dkh, dvh, dp;  // backward
};

template <std::size_t DK>
void attn_head_fwd(const double* __restrict Q, const double* __restrict K, const double* __restrict V,
                   double* __restrict out, double* __restrict P, std::size_t T, std::size_t stride, double sc,
                   AttnScratch& ws) {
  double* __restrict qh = ws.qh.data();
  double* __restrict kt = ws.kt.data();
  double* __restrict vh = ws.vh.data();
  double* __restrict srow = ws.srow.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < DK; ++c) {
      qh[t * DK + c] = Q[t * stride + c];
      kt[c * T + t] = K[t * stride + c];
      vh[t * DK + c] = V[t * stride + c];
    }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u < T; ++u) srow[u] = 0.0;
    for (std::size_t c = 0; c < DK; ++c) {
      const double qc = qh[t * DK + c];
      const double* __restrict kc = kt + c * T;
      for (std::size_t u = 0; u < T; ++u) srow[u] += qc * kc[u];
    }
    double m = -1e300;
    for (std::size_t u = 0; u < T; ++u) {
      srow[u] *= sc;
      m = std::max(m, srow[u]);
    }
    double* __restrict prow = P + t * T;
    double z = 0.0;
    for (std::size_t u = 0; u < T; ++u) {
      prow[u] = std::exp(srow[u] - m);
      z += prow[u];
    }
    double acc[DK] = {};
    for (std::size_t u = 0; u < T; ++u) {
      prow[u] /= z;
      const double p = prow[u];
      for (std::size_t c = 0; c < DK; ++c) acc[c] += p * vh[u * DK + c];
    }
    for (std::size_t c = 0; c < DK; ++c) out[t * stride + c] += acc[c];
  }
}

template <std::size_t DK>
void attn_head_bwd(const double* __restrict Q, const double* __restrict K, const double* __restrict V,
                   const double* __restrict dO, const double* __restrict P, double* __restrict dQ,
                   double* __restrict dK, double* __restrict dV, std::size_t T, std::size_t stride, double sc,
                   AttnScratch& ws) {
  double* __restrict qh = ws.qh.data();
  double* __restrict kh = ws.kt.data();
  double* __restrict vh = ws.vh.data();
  double* __restrict doh = ws.doh.data();
  double* __restrict dqh = ws.dqh.data();
  double* __restrict dkh = ws.dkh.data();
  double* __restrict dvh = ws.dvh.data();
  double* __restrict dp = ws.dp.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < DK; ++c) {
      qh[t * DK + c] = Q[t * stride + c];
      kh[t * DK + c] = K[t * stride + c];
      vh[t * DK + c] = V[t * stride + c];
      doh[t * DK + c] = dO[t * stride + c];
      dqh[t * DK + c] = 0.0;
      dkh[t * DK + c] = 0.0;
      dvh[t * DK + c] = 0.0;
    }
  for (std::size_t t = 0; t < T; ++t) {
    const double* __restrict dot = doh + t * DK;
    const double* __restrict prow = P + t * T;
    double srow = 0.0;
    for (std::size_t u = 0; u < T; ++u) {
      double acc = 0.0;
      for (std::size_t c = 0; c < DK; ++c) acc += dot[c] * vh[u * DK + c];
      dp[u] = acc;
      srow += acc * prow[u];
    }
    const double* __restrict qt = qh + t * DK;
    double* __restrict dqt = dqh + t * DK;
    for (std::size_t u = 0; u < T; ++u) {
      const double w = prow[u] * (dp[u] - srow) * sc;
      const double p = prow[u];
      for (std::size_t c = 0; c < DK; ++c) {
        dqt[c] += w * kh[u * DK + c];
        dkh[u * DK + c] += w * qt[c];
        dvh[u * DK + c] += p * dot[c];
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < DK; ++c) {
      dQ[t * stride + c] += dqh[t * DK + c];
      dK[t * stride + c] += dkh[t * DK + c];
      dV[t * stride + c] += dvh[t * DK + c];
    }
}

void attn_fwd_generic(const double* Q, const double* K, const double* V, double* out, double* P, std::size_t T,
                      std::size_t dk, std::size_t stride, double sc, AttnScratch& ws) {
  double* qh = ws.qh.data();
  double* kt = ws.kt.data();
  double* vh = ws.vh.data();
  double* srow = ws.srow.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < dk; ++c) {
      qh[t * dk + c] = Q[t * stride + c];
      kt[c * T + t] = K[t * stride + c];
      vh[t * dk + c] = V[t * stride + c];
    }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u < T; ++u) srow[u] = 0.0;
    for (std::size_t c = 0; c < dk; ++c) {
      const double qc = qh[t * dk + c];
      const double* kc = kt + c * T;
      for (std::size_t u = 0; u < T; ++u) srow[u] += qc * kc[u];
    }
    double m = -1e300;
    for (std::size_t u = 0; u < T; ++u) {
      srow[u] *= sc;
      m = std::max(m, srow[u]);
    }
    double* prow = P + t * T;
    double z = 0.0;
    for (std::size_t u = 0; u < T; ++u) {
      prow[u] = std::exp(srow[u] - m);
      z += prow[u];
    }
    for (std::size_t u = 0; u < T; ++u) {
      prow[u] /= z;
      const double p = prow[u];
      for (std::size_t c = 0; c < dk; ++c) out[t * stride + c] += p * vh[u * dk + c];
    }
  }
}

void attn_bwd_generic(const double* Q, const double* K, const double* V, const double* dO, const double* P,
                      double* dQ, double* dK, double* dV, std::size_t T, std::size_t dk, std::size_t stride,
                      double sc, AttnScratch& ws) {
  double* dp = ws.dp.data();
  for (std::size_t t = 0; t < T; ++t) {
    const double* dot = dO + t * stride;
    const double* prow = P + t * T;
    double srow = 0.0;
    for (std::size_t u = 0; u < T; ++u) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dk; ++c) acc += dot[c] * V[u * stride + c];
      dp[u] = acc;
      srow += acc * prow[u];
    }
    const double* qt = Q + t * stride;
    double* dqt = dQ + t * stride;
    for (std::size_t u = 0; u < T; ++u) {
      const double w = prow[u] * (dp[u] - srow) * sc;
      const double p = prow[u];
      for (std::size_t c = 0; c < dk; ++c) {
        dqt[c] += w * K[u * stride + c];
        dK[u * stride + c] += w * qt[c];
        dV[u * stride + c] += p * dot[c];
      }
    }
  }
}

}  // namespace

int Graph::push(Node n) {
  for (int in : n.inputs) {
    if (in < 0 || in >= static_cast<int>(nodes_.size()))
      throw TensorError("graph: op " + n.op + " references unknown node " + std::to_string(in));
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  if (!n.value.all_finite())
    throw TensorError("forward " + n.op + (n.name.empty() ? "" : " [" + n.name + "]") + ": non-finite output");
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::gbuf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Graph::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) throw TensorError("grad: node " + n.op + " was not reached by backward");
  return n.grad;
}

Tensor Graph::grad_or_zero(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

int Graph::leaf(Tensor value, const std::string& name) {
  Node n;
  n.op = "leaf";
  n.name = name;
  n.requires_grad = value.requires_grad;
  n.value = std::move(value);
  const int id = push(std::move(n));
  if (!name.empty()) params_.emplace_back(name, id);
  return id;
}

int Graph::add(int a, int b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  bool rowb = false;
  Tensor out = A;
  if (A.same_shape(B)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  } else if (B.rows() == 1 && B.cols() == A.cols()) {
    rowb = true;
    const std::size_t c = A.cols();
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] += B[j];
  } else {
    throw TensorError("add: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  Node n;
  n.op = "add";
  n.inputs = {a, b};
  n.value = std::move(out);
  n.back = [a, b, rowb](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    if (g.needs(a)) {
      Tensor& da = g.gbuf(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (g.needs(b)) {
      Tensor& db = g.gbuf(b);
      if (rowb) {
        const std::size_t c = dy.cols();
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) db[j] += dy[r * c + j];
      } else {
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
    }
  };
  return push(std::move(n));
}

int Graph::scale(int a, double c) {
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  Node n;
  n.op = "scale";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a, c](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    if (!g.needs(a)) return;
    Tensor& da = g.gbuf(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += c * dy[i];
  };
  return push(std::move(n));
}

int Graph::cmul(int a, Tensor weights) {
  const Tensor& A = val(a);
  const bool colb = weights.cols() == 1 && weights.rows() == A.rows() && !A.same_shape(weights);
  if (!A.same_shape(weights) && !colb)
    throw TensorError("cmul: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(weights.shape()));
  Tensor out = A;
  const std::size_t c = A.cols();
  if (colb) {
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] *= weights[r];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= weights[i];
  }
  auto w = std::make_shared<Tensor>(std::move(weights));
  Node n;
  n.op = "cmul";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a, w, colb](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    if (!g.needs(a)) return;
    Tensor& da = g.gbuf(a);
    const std::size_t c = dy.cols();
    if (colb) {
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) da[r * c + j] += dy[r * c + j] * (*w)[r];
    } else {
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (*w)[i];
    }
  };
  return push(std::move(n));
}

int Graph::relu(int a) {
  const Tensor& A = val(a);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  Node n;
  n.op = "relu";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    const Tensor& x = g.value(a);
    Tensor& da = g.gbuf(a);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (x[i] > 0.0) da[i] += dy[i];
  };
  return push(std::move(n));
}

int Graph::gelu(int a) {
  const Tensor& A = val(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = gelu_fwd(A[i]);
  Node n;
  n.op = "gelu";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    const Tensor& x = g.value(a);
    Tensor& da = g.gbuf(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * gelu_bwd(x[i]);
  };
  return push(std::move(n));
}

int Graph::log(int a) {
  const Tensor& A = val(a);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::log(A[i]);
  Node n;
  n.op = "log";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    const Tensor& x = g.value(a);
    Tensor& da = g.gbuf(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] / x[i];
  };
  return push(std::move(n));
}

int Graph::concat_last(const std::vector<int>& parts) {
  if (parts.empty()) throw TensorError("concat_last: no inputs");
  const Tensor& first = val(parts[0]);
  Shape lead(first.shape().begin(), first.shape().end() - 1);
  std::size_t csum = 0;
  for (int p : parts) {
    const Tensor& t = val(p);
    Shape l(t.shape().begin(), t.shape().end() - 1);
    if (l != lead)
      throw TensorError("concat_last: leading shape mismatch " + shape_str(first.shape()) + " vs " +
                        shape_str(t.shape()));
    csum += t.cols();
  }
  Shape oshape = lead;
  oshape.push_back(csum);
  Tensor out(oshape);
  const std::size_t rows = first.rows();
  std::size_t off = 0;
  for (int p : parts) {
    const Tensor& t = val(p);
    const std::size_t c = t.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(t.data() + r * c, t.data() + (r + 1) * c, out.data() + r * csum + off);
    off += c;
  }
  Node n;
  n.op = "concat_last";
  n.inputs = parts;
  n.value = std::move(out);
  n.back = [parts](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    const std::size_t csum = dy.cols();
    std::size_t off = 0;
    for (int p : parts) {
      const std::size_t c = g.value(p).cols();
      if (g.needs(p)) {
        Tensor& dp = g.gbuf(p);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) dp[r * c + j] += dy[r * csum + off + j];
      }
      off += c;
    }
  };
  return push(std::move(n));
}

int Graph::stack_tokens(const std::vector<int>& parts) {
  if (parts.empty()) throw TensorError("stack_tokens: no inputs");
  const Tensor& first = val(parts[0]);
  const std::size_t nr = first.rows(), d = first.cols(), P = parts.size();
  for (int p : parts)
    if (!val(p).same_shape(first))
      throw TensorError("stack_tokens: shape mismatch " + shape_str(first.shape()) + " vs " +
                        shape_str(val(p).shape()));
  Tensor out({nr, P, d});
  for (std::size_t t = 0; t < P; ++t) {
    const Tensor& part = val(parts[t]);
    for (std::size_t i = 0; i < nr; ++i)
      std::copy(part.data() + i * d, part.data() + (i + 1) * d, out.data() + (i * P + t) * d);
  }
  Node n;
  n.op = "stack_tokens";
  n.inputs = parts;
  n.value = std::move(out);
  n.back = [parts, nr, d, P](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    for (std::size_t t = 0; t < P; ++t) {
      if (!g.needs(parts[t])) continue;
      Tensor& dp = g.gbuf(parts[t]);
      for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < d; ++j) dp[i * d + j] += dy[(i * P + t) * d + j];
    }
  };
  return push(std::move(n));
}

int Graph::slice_last(int a, std::size_t offset, std::size_t len) {
  const Tensor& A = val(a);
  if (offset + len > A.cols())
    throw TensorError("slice_last: range [" + std::to_string(offset) + "," + std::to_string(offset + len) +
                      ") out of " + shape_str(A.shape()));
  Shape oshape(A.shape().begin(), A.shape().end() - 1);
  oshape.push_back(len);
  Tensor out(oshape);
  const std::size_t c = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r)
    std::copy(A.data() + r * c + offset, A.data() + r * c + offset + len, out.data() + r * len);
  Node n;
  n.op = "slice_last";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a, offset, len](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    Tensor& da = g.gbuf(a);
    const std::size_t c = da.cols();
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t j = 0; j < len; ++j) da[r * c + offset + j] += dy[r * len + j];
  };
  return push(std::move(n));
}

int Graph::slice_tokens(int a, std::size_t t0, std::size_t t1) {
  const Tensor& A = val(a);
  if (A.shape().size() != 3) throw TensorError("slice_tokens: expected (n,T,d), got " + shape_str(A.shape()));
  const std::size_t nrows = A.shape()[0], T = A.shape()[1], d = A.shape()[2];
  if (t1 > T || t0 >= t1) throw TensorError("slice_tokens: bad token range");
  const std::size_t span = t1 - t0;
  Tensor out({nrows, span, d});
  for (std::size_t i = 0; i < nrows; ++i)
    std::copy(A.data() + (i * T + t0) * d, A.data() + (i * T + t1) * d, out.data() + i * span * d);
  Node n;
  n.op = "slice_tokens";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a, t0, T, d, span](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    Tensor& da = g.gbuf(a);
    const std::size_t nrows = dy.shape()[0];
    for (std::size_t i = 0; i < nrows; ++i)
      for (std::size_t j = 0; j < span * d; ++j) da[(i * T + t0) * d + j] += dy[i * span * d + j];
  };
  return push(std::move(n));
}

int Graph::repeat_row(int v, std::size_t nrep) {
  const Tensor& V = val(v);
  if (V.rows() != 1) throw TensorError("repeat_row: expected (1,d), got " + shape_str(V.shape()));
  const std::size_t d = V.cols();
  Tensor out({nrep, d});
  for (std::size_t r = 0; r < nrep; ++r) std::copy(V.data(), V.data() + d, out.data() + r * d);
  Node n;
  n.op = "repeat_row";
  n.inputs = {v};
  n.value = std::move(out);
  n.back = [v, d](Graph& g, int id) {
    if (!g.needs(v)) return;
    const Tensor& dy = g.grad(id);
    Tensor& dv = g.gbuf(v);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t j = 0; j < d; ++j) dv[j] += dy[r * d + j];
  };
  return push(std::move(n));
}

int Graph::matmul(int a, int b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (B.shape().size() != 2 || A.cols() != B.rows())
    throw TensorError("matmul: shape mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), c = B.cols();
  Shape oshape(A.shape().begin(), A.shape().end() - 1);
  oshape.push_back(c);
  Tensor out(oshape);
  gemm_nn(A.data(), B.data(), out.data(), m, k, c);
  Node n;
  n.op = "matmul";
  n.inputs = {a, b};
  n.value = std::move(out);
  n.back = [a, b, m, k, c](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    if (g.needs(a)) gemm_nt(dy.data(), g.value(b).data(), g.gbuf(a).data(), m, c, k);
    if (g.needs(b)) gemm_tn(g.value(a).data(), dy.data(), g.gbuf(b).data(), m, k, c);
  };
  return push(std::move(n));
}

int Graph::gather_rows(int table, std::vector<std::int32_t> idx) {
  const Tensor& T = val(table);
  const std::size_t v = T.rows(), d = T.cols();
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v)
      throw TensorError("gather_rows: index " + std::to_string(idx[i]) + " out of table rows " + std::to_string(v));
    std::copy(T.data() + static_cast<std::size_t>(idx[i]) * d, T.data() + (static_cast<std::size_t>(idx[i]) + 1) * d,
              out.data() + i * d);
  }
  auto ix = std::make_shared<std::vector<std::int32_t>>(std::move(idx));
  Node n;
  n.op = "gather_rows";
  n.inputs = {table};
  n.value = std::move(out);
  n.back = [table, ix, d](Graph& g, int id) {
    if (!g.needs(table)) return;
    const Tensor& dy = g.grad(id);
    Tensor& dt = g.gbuf(table);
    for (std::size_t i = 0; i < ix->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dt[static_cast<std::size_t>((*ix)[i]) * d + j] += dy[i * d + j];
  };
  return push(std::move(n));
}

int Graph::select_rows(std::vector<std::uint8_t> keep, int a, int b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  const std::size_t d = A.cols();
  const bool rowb = B.rows() == 1;
  if (keep.size() != A.rows() || B.cols() != d || (!rowb && B.rows() != A.rows()))
    throw TensorError("select_rows: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor out = A;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (!keep[i]) std::copy(B.data() + (rowb ? 0 : i * d), B.data() + (rowb ? d : (i + 1) * d), out.data() + i * d);
  auto km = std::make_shared<std::vector<std::uint8_t>>(std::move(keep));
  Node n;
  n.op = "select_rows";
  n.inputs = {a, b};
  n.value = std::move(out);
  n.back = [a, b, km, d, rowb](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    if (g.needs(a)) {
      Tensor& da = g.gbuf(a);
      for (std::size_t i = 0; i < km->size(); ++i)
        if ((*km)[i])
          for (std::size_t j = 0; j < d; ++j) da[i * d + j] += dy[i * d + j];
    }
    if (g.needs(b)) {
      Tensor& db = g.gbuf(b);
      for (std::size_t i = 0; i < km->size(); ++i)
        if (!(*km)[i])
          for (std::size_t j = 0; j < d; ++j) db[(rowb ? 0 : i * d) + j] += dy[i * d + j];
    }
  };
  return push(std::move(n));
}

int Graph::mlp1h(int x, int w1, int b1, int w2, int b2, Activation act) {
  const Tensor& X = val(x);
  const Tensor& W1 = val(w1);
  const Tensor& B1 = val(b1);
  const Tensor& W2 = val(w2);
  const Tensor& B2 = val(b2);
  if (X.cols() != W1.rows() || W1.cols() != B1.cols() || W1.cols() != W2.rows() || W2.cols() != B2.cols())
    throw TensorError("mlp1h: shape mismatch " + shape_str(X.shape()) + " x " + shape_str(W1.shape()) + " x " +
                      shape_str(W2.shape()));
  const std::size_t nr = X.rows(), m = X.cols(), h = W1.cols(), d = W2.cols();
  Tensor hid({nr, h});
  gemm_nn(X.data(), W1.data(), hid.data(), nr, m, h);
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t j = 0; j < h; ++j) hid[r * h + j] += B1[j];
  Tensor actv({nr, h});
  apply_act(act, hid.data(), actv.data(), nr * h);
  Shape oshape(X.shape().begin(), X.shape().end() - 1);
  oshape.push_back(d);
  Tensor out(oshape);
  gemm_nn(actv.data(), W2.data(), out.data(), nr, h, d);
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += B2[j];
  auto hid_keep = std::make_shared<Tensor>(std::move(hid));
  auto actv_keep = std::make_shared<Tensor>(std::move(actv));
  Node n;
  n.op = "mlp1h";
  n.inputs = {x, w1, b1, w2, b2};
  n.value = std::move(out);
  n.back = [x, w1, b1, w2, b2, hid_keep, actv_keep, act, nr, m, h, d](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    const Tensor& X = g.value(x);
    const Tensor& W1 = g.value(w1);
    const Tensor& W2 = g.value(w2);
    const Tensor& hid = *hid_keep;
    const Tensor& actv = *actv_keep;
    if (g.needs(b2)) {
      Tensor& db2 = g.gbuf(b2);
      for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t j = 0; j < d; ++j) db2[j] += dy[r * d + j];
    }
    if (g.needs(w2)) gemm_tn(actv.data(), dy.data(), g.gbuf(w2).data(), nr, h, d);
    Tensor dh({nr, h});
    gemm_nt(dy.data(), W2.data(), dh.data(), nr, d, h);
    apply_act_grad(act, hid.data(), dh.data(), nr * h);
    if (g.needs(b1)) {
      Tensor& db1 = g.gbuf(b1);
      for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t j = 0; j < h; ++j) db1[j] += dh[r * h + j];
    }
    if (g.needs(w1)) gemm_tn(X.data(), dh.data(), g.gbuf(w1).data(), nr, m, h);
    if (g.needs(x)) gemm_nt(dh.data(), W1.data(), g.gbuf(x).data(), nr, h, m);
  };
  return push(std::move(n));
}

int Graph::layer_norm(int a, int gamma, int beta) {
  const Tensor& A = val(a);
  const Tensor& G = val(gamma);
  const Tensor& B = val(beta);
  const std::size_t d = A.cols();
  if (G.size() != d || B.size() != d)
    throw TensorError("layer_norm: scale/shift must have " + std::to_string(d) + " entries, got " +
                      shape_str(G.shape()) + " / " + shape_str(B.shape()));
  Tensor out(A.shape());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    const double* x = A.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    double* y = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) y[j] = (x[j] - mu) * inv * G[j] + B[j];
  }
  Node n;
  n.op = "layer_norm";
  n.inputs = {a, gamma, beta};
  n.value = std::move(out);
  n.back = [a, gamma, beta, d](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    const Tensor& A = g.value(a);
    const Tensor& G = g.value(gamma);
    std::vector<double> xhat(d), dyg(d);
    for (std::size_t r = 0; r < A.rows(); ++r) {
      const double* x = A.data() + r * d;
      const double* dyr = dy.data() + r * d;
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += x[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + kLnEps);
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (x[j] - mu) * inv;
        dyg[j] = dyr[j] * G[j];
        m1 += dyg[j];
        m2 += dyg[j] * xhat[j];
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      if (g.needs(a)) {
        Tensor& da = g.gbuf(a);
        for (std::size_t j = 0; j < d; ++j) da[r * d + j] += inv * (dyg[j] - m1 - xhat[j] * m2);
      }
      if (g.needs(gamma)) {
        Tensor& dg = g.gbuf(gamma);
        for (std::size_t j = 0; j < d; ++j) dg[j] += dyr[j] * xhat[j];
      }
      if (g.needs(beta)) {
        Tensor& db = g.gbuf(beta);
        for (std::size_t j = 0; j < d; ++j) db[j] += dyr[j];
      }
    }
  };
  return push(std::move(n));
}

int Graph::softmax_last(int a) {
  const Tensor& A = val(a);
  const std::size_t d = A.cols();
  Tensor out(A.shape());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    const double* x = A.data() + r * d;
    double* y = out.data() + r * d;
    double m = x[0];
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - m);
      z += y[j];
    }
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  Node n;
  n.op = "softmax";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a, d](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    const Tensor& y = g.value(id);
    Tensor& da = g.gbuf(a);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += dy[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) da[r * d + j] += y[r * d + j] * (dy[r * d + j] - s);
    }
  };
  return push(std::move(n));
}

int Graph::log_softmax_nll(int logits, std::vector<std::int32_t> labels) {
  const Tensor& A = val(logits);
  const std::size_t k = A.cols(), nr = A.rows();
  if (labels.size() != nr)
    throw TensorError("log_softmax_nll: " + std::to_string(labels.size()) + " labels for " + std::to_string(nr) +
                      " rows");
  Tensor out({nr, 1});
  for (std::size_t r = 0; r < nr; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k)
      throw TensorError("log_softmax_nll: label " + std::to_string(labels[r]) + " out of [0," + std::to_string(k) +
                        ")");
    const double* x = A.data() + r * k;
    double m = x[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - m);
    out[r] = m + std::log(z) - x[static_cast<std::size_t>(labels[r])];
  }
  auto lab = std::make_shared<std::vector<std::int32_t>>(std::move(labels));
  Node n;
  n.op = "log_softmax_nll";
  n.inputs = {logits};
  n.value = std::move(out);
  n.back = [logits, lab, k](Graph& g, int id) {
    if (!g.needs(logits)) return;
    const Tensor& dy = g.grad(id);
    const Tensor& A = g.value(logits);
    Tensor& da = g.gbuf(logits);
    for (std::size_t r = 0; r < A.rows(); ++r) {
      const double* x = A.data() + r * k;
      double m = x[0];
      for (std::size_t j = 1; j < k; ++j) m = std::max(m, x[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - m);
      const double gr = dy[r];
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(x[j] - m) / z;
        da[r * k + j] += gr * (p - (static_cast<std::size_t>((*lab)[r]) == j ? 1.0 : 0.0));
      }
    }
  };
  return push(std::move(n));
}

int Graph::mean_rows(int a) {
  const Tensor& A = val(a);
  const std::size_t nr = A.rows(), c = A.cols();
  Tensor out({1, c});
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t j = 0; j < c; ++j) out[j] += A[r * c + j];
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(nr);
  Node n;
  n.op = "mean_rows";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a, nr, c](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    Tensor& da = g.gbuf(a);
    const double inv = 1.0 / static_cast<double>(nr);
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t j = 0; j < c; ++j) da[r * c + j] += dy[j] * inv;
  };
  return push(std::move(n));
}

int Graph::sum_all(int a) {
  const Tensor& A = val(a);
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
  Node n;
  n.op = "sum_all";
  n.inputs = {a};
  n.value = Tensor::scalar(s);
  n.back = [a](Graph& g, int id) {
    if (!g.needs(a)) return;
    const double dy = g.grad(id)[0];
    Tensor& da = g.gbuf(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy;
  };
  return push(std::move(n));
}

int Graph::rowmax(int a, std::vector<std::int32_t>* argmax) {
  const Tensor& A = val(a);
  const std::size_t nr = A.rows(), c = A.cols();
  Tensor out({nr, 1});
  auto arg = std::make_shared<std::vector<std::int32_t>>(nr, 0);
  for (std::size_t r = 0; r < nr; ++r) {
    const double* x = A.data() + r * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (x[j] > x[best]) best = j;
    out[r] = x[best];
    (*arg)[r] = static_cast<std::int32_t>(best);
  }
  if (argmax) *argmax = *arg;
  Node n;
  n.op = "rowmax";
  n.inputs = {a};
  n.value = std::move(out);
  n.back = [a, arg, c](Graph& g, int id) {
    if (!g.needs(a)) return;
    const Tensor& dy = g.grad(id);
    Tensor& da = g.gbuf(a);
    for (std::size_t r = 0; r < arg->size(); ++r) da[r * c + static_cast<std::size_t>((*arg)[r])] += dy[r];
  };
  return push(std::move(n));
}

int Graph::attention(int q, int k, int v, std::size_t heads) {
  const Tensor& Q = val(q);
  const Tensor& K = val(k);
  const Tensor& V = val(v);
  if (Q.shape().size() != 3 || !Q.same_shape(K) || !Q.same_shape(V))
    throw TensorError("attention: expected equal (n,T,d) inputs, got " + shape_str(Q.shape()) + " / " +
                      shape_str(K.shape()) + " / " + shape_str(V.shape()));
  const std::size_t nr = Q.shape()[0], T = Q.shape()[1], d = Q.shape()[2];
  if (heads == 0 || d % heads != 0)
    throw TensorError("attention: dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  const std::size_t dk = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  auto probs = std::make_shared<std::vector<double>>(nr * heads * T * T);
  Tensor out({nr, T, d});
  AttnScratch ws;
  ws.qh.resize(T * dk);
  ws.kt.resize(T * dk);
  ws.vh.resize(T * dk);
  ws.srow.resize(T);
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = i * T * d + h * dk;
      double* P = probs->data() + (i * heads + h) * T * T;
      const double* Qb = Q.data() + off;
      const double* Kb = K.data() + off;
      const double* Vb = V.data() + off;
      double* Ob = out.data() + off;
      switch (dk) {
        case 1: attn_head_fwd<1>(Qb, Kb, Vb, Ob, P, T, d, sc, ws); break;
        case 2: attn_head_fwd<2>(Qb, Kb, Vb, Ob, P, T, d, sc, ws); break;
        case 4: attn_head_fwd<4>(Qb, Kb, Vb, Ob, P, T, d, sc, ws); break;
        case 8: attn_head_fwd<8>(Qb, Kb, Vb, Ob, P, T, d, sc, ws); break;
        case 16: attn_head_fwd<16>(Qb, Kb, Vb, Ob, P, T, d, sc, ws); break;
        default: attn_fwd_generic(Qb, Kb, Vb, Ob, P, T, dk, d, sc, ws);
      }
    }
  }
  Node n;
  n.op = "attention";
  n.inputs = {q, k, v};
  n.value = std::move(out);
  n.back = [q, k, v, probs, nr, T, d, dk, heads, sc](Graph& g, int id) {
    const Tensor& dy = g.grad(id);
    const Tensor& Q = g.value(q);
    const Tensor& K = g.value(k);
    const Tensor& V = g.value(v);
    Tensor& dQ = g.gbuf(q);
    Tensor& dK = g.gbuf(k);
    Tensor& dV = g.gbuf(v);
    AttnScratch ws;
    ws.qh.resize(T * dk);
    ws.kt.resize(T * dk);
    ws.vh.resize(T * dk);
    ws.doh.resize(T * dk);
    ws.dqh.resize(T * dk);
    ws.dkh.resize(T * dk);
    ws.dvh.resize(T * dk);
    ws.dp.resize(T);
    for (std::size_t i = 0; i < nr; ++i) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = i * T * d + h * dk;
        const double* P = probs->data() + (i * heads + h) * T * T;
        const double* Qb = Q.data() + off;
        const double* Kb = K.data() + off;
        const double* Vb = V.data() + off;
        const double* dOb = dy.data() + off;
        double* dQb = dQ.data() + off;
        double* dKb = dK.data() + off;
        double* dVb = dV.data() + off;
        switch (dk) {
          case 1: attn_head_bwd<1>(Qb, Kb, Vb, dOb, P, dQb, dKb, dVb, T, d, sc, ws); break;
          case 2: attn_head_bwd<2>(Qb, Kb, Vb, dOb, P, dQb, dKb, dVb, T, d, sc, ws); break;
          case 4: attn_head_bwd<4>(Qb, Kb, Vb, dOb, P, dQb, dKb, dVb, T, d, sc, ws); break;
          case 8: attn_head_bwd<8>(Qb, Kb, Vb, dOb, P, dQb, dKb, dVb, T, d, sc, ws); break;
          case 16: attn_head_bwd<16>(Qb, Kb, Vb, dOb, P, dQb, dKb, dVb, T, d, sc, ws); break;
          default: attn_bwd_generic(Qb, Kb, Vb, dOb, P, dQb, dKb, dVb, T, dk, d, sc, ws);
        }
      }
    }
  };
  return push(std::move(n));
}

void Graph::backward(int loss) {
  Node& ln = nodes_.at(static_cast<std::size_t>(loss));
  if (ln.value.size() != 1)
    throw TensorError("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
  if (!ln.requires_grad) throw TensorError("backward: loss does not depend on any differentiable leaf");
  for (auto& n : nodes_) n.grad = Tensor();
  gbuf(loss)[0] = 1.0;
  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty() || !n.back) continue;
    if (!n.grad.all_finite())
      throw TensorError("backward " + n.op + (n.name.empty() ? "" : " [" + n.name + "]") + ": non-finite gradient");
    n.back(*this, id);
  }
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad.empty() && !n.grad.all_finite())
      throw TensorError("backward leaf [" + name + "]: non-finite gradient");
  }
}

}  // namespace mirrams
