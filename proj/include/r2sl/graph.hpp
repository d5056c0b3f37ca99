#pragma once

#include <functional>
#include <span>
#include <vector>

#include "r2sl/tensor.hpp"

namespace r2sl::nn {

// Single-use reverse-mode tape. Nodes are created in forward order; backward
// replays the tape in reverse. Parameter gradients accumulate into
// Param::grad, so one tape per record can be run repeatedly over a batch.
class Graph {
 public:
  using NodeId = int;

  NodeId constant(Tensor t);
  NodeId constant_vec(const std::vector<double>& v);

  // y = W x + b. W is {out, in}, b is {out}; b may be null.
  NodeId dense(Param& w, Param* b, NodeId x);
  // Row lookup into a {rows, cols} table; gradient flows into that row only.
  NodeId embed(Param& table, std::size_t row);
  // Same-length 1-D cross-correlation with zero padding; odd kernel length.
  NodeId conv1d_same(Param& kernel, NodeId x);
  NodeId gelu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softmax(NodeId x);
  NodeId concat(std::span<const NodeId> xs);
  NodeId add(NodeId a, NodeId b);
  // Elementwise product with a constant mask.
  NodeId mul_mask(NodeId x, const std::vector<double>& mask);
  // Scalar sum of all entries.
  NodeId sum(NodeId x);
  // x / s with scalar node s.
  NodeId div_by_scalar(NodeId x, NodeId s);
  // w[i] * x with w a vector node; used for gate-weighted expert outputs.
  NodeId scale_by_entry(NodeId x, NodeId w, std::size_t i);
  // (s[0]*a + s[1]*b) / 2 with learned per-branch scales s.
  NodeId blend_pair(Param& s, NodeId a, NodeId b);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }

  // Seeds the output gradient and replays the tape; call at most once.
  void backward(NodeId out, const Tensor& seed);

  void reserve(std::size_t n) { nodes_.reserve(n); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&)> back;  // empty for constants
  };

  NodeId push(Tensor value, std::function<void(Graph&)> back);
  Tensor& grad(NodeId id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace r2sl::nn
