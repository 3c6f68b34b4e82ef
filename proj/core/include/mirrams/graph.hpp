#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mirrams/tensor.hpp"

namespace mirrams {

enum class Activation { Relu, Gelu };

/// Reverse-mode autodiff tape. Nodes are appended in topological order
/// (every input id precedes its consumer), backward() sweeps them once in
/// reverse. A Graph lives for one forward/backward pass; parameters enter
/// as named leaves and their gradients are read back by name or id.
class Graph {
 public:
  /// Leaf node; differentiated iff value.requires_grad. A non-empty name
  /// registers the leaf in the parameter registry.
  int leaf(Tensor value, const std::string& name = "");
  int constant(Tensor value) {
    value.requires_grad = false;
    return leaf(std::move(value));
  }

  // Elementwise and structural ops.
  int add(int a, int b);             // same shape, or b = (1,c) row broadcast
  int scale(int a, double c);
  int cmul(int a, Tensor weights);   // constant multiplier, same shape or (rows,1)
  int relu(int a);
  int gelu(int a);
  int log(int a);
  int concat_last(const std::vector<int>& parts);
  int slice_last(int a, std::size_t offset, std::size_t len);
  int stack_tokens(const std::vector<int>& parts);        // p x (n,d) -> (n,p,d)
  int slice_tokens(int a, std::size_t t0, std::size_t t1);  // (n,T,d) -> (n,t1-t0,d)
  int repeat_row(int v, std::size_t n);                     // (1,d) -> (n,d)

  // Linear algebra and lookups.
  int matmul(int a, int b);  // (...,k) x (k,c)
  int gather_rows(int table, std::vector<std::int32_t> idx);
  int select_rows(std::vector<std::uint8_t> keep, int a, int b);  // keep[i] ? a_i : b_i
  int mlp1h(int x, int w1, int b1, int w2, int b2, Activation act);

  // Normalization and reductions.
  int layer_norm(int a, int gamma, int beta);  // last axis, learnable scale/shift
  int softmax_last(int a);
  int log_softmax_nll(int logits, std::vector<std::int32_t> labels);  // (n,K) -> (n,1)
  int mean_rows(int a);                                              // (R,c) -> (1,c)
  int sum_all(int a);
  int rowmax(int a, std::vector<std::int32_t>* argmax = nullptr);  // ties -> lowest index
  /// Fused multi-head self-attention over token positions: softmax(QK^T/sqrt(dk))V
  /// per head, q/k/v of shape (n,T,d) with d divisible by heads.
  int attention(int q, int k, int v, std::size_t heads);

  /// Reverse sweep from a scalar loss; re-runnable (grads are reset first).
  void backward(int loss);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const;
  Tensor grad_or_zero(int id) const;
  bool reached(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const std::string& op_of(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Named leaves, in creation order.
  const std::vector<std::pair<std::string, int>>& params() const { return params_; }

 private:
  struct Node {
    std::string op;
    std::string name;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;  // empty until touched by backward
    bool requires_grad = false;
    std::function<void(Graph&, int)> back;
  };

  int push(Node n);
  Tensor& gbuf(int id);     // allocate-on-demand gradient buffer
  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;
};

}  // namespace mirrams
