#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cstn/tensor.hpp"

namespace cstn {

// Tape-based reverse-mode differentiation over coarse tensor operations.
// Nodes are owned by a Graph and live until the graph is destroyed; ops
// return raw pointers into the tape. All evaluation is sequential and
// deterministic: same inputs, same tape, bit-identical values and gradients.

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use
  bool requires_grad = false;
  std::function<void()> backward;
};

using Var = Node*;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var make(Tensor value, bool requires_grad, std::function<void()> backward);

  // Reverse sweep from a scalar root; `seed` is the incoming gradient
  // (useful for averaging per-sample losses into a batch gradient).
  void backward(Var root, double seed = 1.0);

  std::size_t node_count() const { return nodes_.size(); }

  static Tensor& ensure_grad(Var v);

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

// --- primitive ops ------------------------------------------------------

// 2-d convolution, channel-last. x: (H, W, Cin); w: (kh, kw, Cin, Cout);
// b: (Cout). Zero padding.
Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad);

Var relu(Graph& g, Var x);
Var tanh_op(Graph& g, Var x);
Var sigmoid_op(Graph& g, Var x);

// Fully connected layer. x: (n); w: (n, m); b: (m).
Var linear(Graph& g, Var x, Var w, Var b);

// (H, W, C) -> (C) channel means.
Var global_avg_pool(Graph& g, Var x);

// Adaptive instance normalization: per channel, standardize over spatial
// positions (population statistics, epsilon added to the denominator) and
// re-modulate: gamma * (z - mean) / (std + eps) + eta.
Var adain(Graph& g, Var z, Var gamma, Var eta, double eps);

// Contiguous sub-vector of a 1-d tensor.
Var slice(Graph& g, Var x, int offset, int len);

// Elementwise sum of two same-shape tensors.
Var add(Graph& g, Var a, Var b);

// Sum of scalar nodes.
Var add_n(Graph& g, const std::vector<Var>& parts);

// --- fused loss reductions ----------------------------------------------

// mean((a - b)^2) over all elements; scalar output.
Var mse_mean(Graph& g, Var a, Var b);

// mean over all elements of (a - b)^2 * mask(i, j), the (H, W) mask
// broadcast across channels. The mask is a constant.
Var masked_sq_mean(Graph& g, Var a, Var b, const Tensor& mask);

// mean over all elements of (1 - (a - b)^2 / m) * mask(i, j).
Var masked_comp_mean(Graph& g, Var a, Var b, const Tensor& mask, double m);

}  // namespace cstn
