#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "oavl/nn/tensor.hpp"

namespace oavl::nn {

// Handle to a node of a Graph. Only meaningful for the graph that created it.
struct Var {
  std::size_t id = 0;
};

// Define-by-run tape for reverse-mode differentiation. Every op evaluates
// eagerly and records a backward closure; backward() replays them in reverse.
// A graph is single-use and single-threaded.
template <typename Real>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Var constant(Tensor<Real> t);
  Var leaf(Tensor<Real> t);  // differentiable input not tied to a Parameter
  // Differentiable leaf whose gradient is added to p.grad by accumulate_param_grads().
  Var param(Parameter<Real>& p);

  // y = x W + b. x: [N, in], W: [in, out], b: [out].
  Var linear(Var x, Var w, Var b);
  // y = a b^T. a: [N, d], b: [M, d] -> [N, M].
  Var matmul_nt(Var a, Var b);
  Var transpose(Var x);  // 2-D only

  // Cross-correlation. x: [N, Cin, H, W], k: [Cout, Cin, kh, kw], zero padding.
  Var conv2d(Var x, Var k, int stride, int pad_h, int pad_w);
  Var conv2d(Var x, Var k, int stride, int pad) { return conv2d(x, k, stride, pad, pad); }
  // x: [N, C, ...] + b: [C] broadcast over trailing axes.
  Var add_channel_bias(Var x, Var b);
  Var relu(Var x);
  // [N, C, H, W] -> [N, C], mean over H*W.
  Var mean_pool(Var x);
  // [N, C, H, W] -> [N, C], mean over positions with mask[n*H*W + p] != 0.
  Var masked_mean_pool(Var x, std::span<const std::uint8_t> mask);
  // Zeroes positions with mask == 0 across all channels. x: [N, C, H, W].
  Var mask_positions(Var x, std::span<const std::uint8_t> mask);
  // tokens: n_rows x len ids; returns [N, D, 1, len] with
  // out[n, d, 0, l] = table[token, d] + pos[l, d] where mask != 0, else 0.
  Var embed_tokens(std::span<const std::int32_t> tokens, std::span<const std::uint8_t> mask, int n_rows, int len,
                   Var table, Var pos);

  // v / (||v||_2 + eps) along the last axis.
  Var l2_normalize(Var x, Real eps = Real(1e-8));
  // [N, d] x [N, d] -> [N], row i = <a_i, b_i>.
  Var rowwise_dot(Var a, Var b);
  Var mean(Var x);  // -> scalar [1]
  Var sum(Var x);   // -> scalar [1]
  // Mean over rows of -log softmax(logits)[target]. logits: [N, K].
  Var softmax_cross_entropy(Var logits, std::span<const int> targets);

  Var add(Var a, Var b);
  Var scale(Var x, Real c);
  Var mul_scalar(Var x, Var s);  // s: [1]
  // exp(clamp(s, lo, hi)); gradient flows only inside [lo, hi].
  Var exp_clamped(Var s, Real lo, Real hi);

  // Reverse pass from a scalar node (seed gradient 1).
  void backward(Var root);
  // Adds leaf gradients into their bound Parameters (marks grad_ready).
  void accumulate_param_grads();

  std::size_t node_count() const noexcept { return nodes_.size(); }
  const Tensor<Real>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape; }
  // Gradient of the last backward() root w.r.t. v. Leaves always get a buffer
  // (zeros when unreached); interior nodes stay empty when unreached.
  const std::vector<Real>& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::function<void()> backward;
    Parameter<Real>* bound = nullptr;
    bool leaf = false;
  };

  Var push(Tensor<Real> value, bool requires_grad, std::function<void()> backward = {});
  std::vector<Real>& grad_buffer(std::size_t id);
  const Node& node(Var v) const { return nodes_.at(v.id); }
  bool any_grad(std::initializer_list<Var> vars) const;

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace oavl::nn
