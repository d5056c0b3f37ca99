#include "r2sl/graph.hpp"

#include <algorithm>
#include <cmath>

#include "r2sl/errors.hpp"

namespace r2sl::nn {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

double gelu_scalar(double x) {
  return x * 0.5 * (1.0 + std::erf(x * kInvSqrt2));
}

double gelu_grad_scalar(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

Graph::NodeId Graph::push(Tensor value, std::function<void(Graph&)> back) {
  Node n;
  n.grad = Tensor::zeros(value.shape);
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Graph::NodeId Graph::constant(Tensor t) { return push(std::move(t), {}); }

Graph::NodeId Graph::constant_vec(const std::vector<double>& v) {
  return constant(Tensor::vec(v));
}

Graph::NodeId Graph::dense(Param& w, Param* b, NodeId x) {
  const std::size_t out_dim = w.value.shape[0];
  const std::size_t in_dim = w.value.shape[1];
  const Tensor& xv = nodes_[x].value;
  if (xv.size() != in_dim) throw NumericalError("dense: shape mismatch");
  Tensor y = Tensor::zeros({out_dim});
  for (std::size_t o = 0; o < out_dim; ++o) {
    double acc = b ? b->value[o] : 0.0;
    const double* wrow = &w.value.data[o * in_dim];
    for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * xv[i];
    y[o] = acc;
  }
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [&w, b, x, id, out_dim, in_dim](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& xv = g.nodes_[x].value;
    Tensor& dx = g.grad(x);
    for (std::size_t o = 0; o < out_dim; ++o) {
      double go = dy[o];
      if (go == 0.0) continue;
      double* wg = &w.grad.data[o * in_dim];
      const double* wrow = &w.value.data[o * in_dim];
      for (std::size_t i = 0; i < in_dim; ++i) {
        wg[i] += go * xv[i];
        dx[i] += go * wrow[i];
      }
      if (b) b->grad[o] += go;
    }
  };
  return id;
}

Graph::NodeId Graph::embed(Param& table, std::size_t row) {
  const std::size_t rows = table.value.shape[0];
  const std::size_t cols = table.value.shape[1];
  if (row >= rows) throw DataError("embed: row index out of range");
  Tensor y = Tensor::zeros({cols});
  for (std::size_t c = 0; c < cols; ++c) y[c] = table.value[row * cols + c];
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [&table, row, cols, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    for (std::size_t c = 0; c < cols; ++c) table.grad[row * cols + c] += dy[c];
  };
  return id;
}

Graph::NodeId Graph::conv1d_same(Param& kernel, NodeId x) {
  const std::size_t klen = kernel.value.size();
  if (klen % 2 == 0) throw NumericalError("conv1d: kernel length must be odd");
  const std::size_t half = klen / 2;
  const Tensor& xv = nodes_[x].value;
  const std::size_t n = xv.size();
  Tensor y = Tensor::zeros({n});
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t u = 0; u < klen; ++u) {
      std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + u) - static_cast<std::ptrdiff_t>(half);
      if (src >= 0 && src < static_cast<std::ptrdiff_t>(n))
        acc += kernel.value[u] * xv[static_cast<std::size_t>(src)];
    }
    y[t] = acc;
  }
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [&kernel, x, n, klen, half, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& xv = g.nodes_[x].value;
    Tensor& dx = g.grad(x);
    for (std::size_t t = 0; t < n; ++t) {
      double go = dy[t];
      if (go == 0.0) continue;
      for (std::size_t u = 0; u < klen; ++u) {
        std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + u) - static_cast<std::ptrdiff_t>(half);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(n)) {
          dx[static_cast<std::size_t>(src)] += go * kernel.value[u];
          kernel.grad[u] += go * xv[static_cast<std::size_t>(src)];
        }
      }
    }
  };
  return id;
}

Graph::NodeId Graph::gelu(NodeId x) {
  const Tensor& xv = nodes_[x].value;
  Tensor y = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = gelu_scalar(xv[i]);
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [x, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& xv = g.nodes_[x].value;
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      dx[i] += dy[i] * gelu_grad_scalar(xv[i]);
  };
  return id;
}

Graph::NodeId Graph::sigmoid(NodeId x) {
  const Tensor& xv = nodes_[x].value;
  Tensor y = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [x, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& yv = g.nodes_[id].value;
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < yv.size(); ++i)
      dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
  };
  return id;
}

Graph::NodeId Graph::softmax(NodeId x) {
  const Tensor& xv = nodes_[x].value;
  if (xv.size() == 0) throw NumericalError("softmax: empty input");
  double mx = *std::max_element(xv.data.begin(), xv.data.end());
  Tensor y = Tensor::zeros(xv.shape);
  double z = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    y[i] = std::exp(xv[i] - mx);
    z += y[i];
  }
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] /= z;
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [x, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& p = g.nodes_[id].value;
    Tensor& dx = g.grad(x);
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += dy[i] * p[i];
    for (std::size_t i = 0; i < p.size(); ++i) dx[i] += p[i] * (dy[i] - dot);
  };
  return id;
}

Graph::NodeId Graph::concat(std::span<const NodeId> xs) {
  if (xs.empty()) throw NumericalError("concat: empty input list");
  std::size_t total = 0;
  for (NodeId x : xs) total += nodes_[x].value.size();
  Tensor y = Tensor::zeros({total});
  std::size_t off = 0;
  for (NodeId x : xs) {
    const Tensor& xv = nodes_[x].value;
    std::copy(xv.data.begin(), xv.data.end(), y.data.begin() + off);
    off += xv.size();
  }
  std::vector<NodeId> parts(xs.begin(), xs.end());
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [parts = std::move(parts), id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    std::size_t off = 0;
    for (NodeId x : parts) {
      Tensor& dx = g.grad(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[off + i];
      off += dx.size();
    }
  };
  return id;
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  if (av.size() != bv.size()) throw NumericalError("add: shape mismatch");
  Tensor y = Tensor::zeros(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] + bv[i];
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [a, b, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    Tensor& da = g.grad(a);
    Tensor& db = g.grad(b);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      da[i] += dy[i];
      db[i] += dy[i];
    }
  };
  return id;
}

Graph::NodeId Graph::mul_mask(NodeId x, const std::vector<double>& mask) {
  const Tensor& xv = nodes_[x].value;
  if (xv.size() != mask.size()) throw NumericalError("mul_mask: shape mismatch");
  Tensor y = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] * mask[i];
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [x, mask, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  };
  return id;
}

Graph::NodeId Graph::sum(NodeId x) {
  const Tensor& xv = nodes_[x].value;
  double s = 0.0;
  for (double v : xv.data) s += v;
  NodeId id = push(Tensor({1}, {s}), {});
  nodes_[id].back = [x, id](Graph& g) {
    double go = g.nodes_[id].grad[0];
    Tensor& dx = g.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go;
  };
  return id;
}

Graph::NodeId Graph::div_by_scalar(NodeId x, NodeId s) {
  const Tensor& xv = nodes_[x].value;
  double sv = nodes_[s].value[0];
  Tensor y = Tensor::zeros(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] / sv;
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [x, s, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& xv = g.nodes_[x].value;
    double sv = g.nodes_[s].value[0];
    Tensor& dx = g.grad(x);
    double& ds = g.grad(s)[0];
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dx[i] += dy[i] / sv;
      ds -= dy[i] * xv[i] / (sv * sv);
    }
  };
  return id;
}

Graph::NodeId Graph::scale_by_entry(NodeId x, NodeId w, std::size_t i) {
  const Tensor& xv = nodes_[x].value;
  double wi = nodes_[w].value[i];
  Tensor y = Tensor::zeros(xv.shape);
  for (std::size_t t = 0; t < xv.size(); ++t) y[t] = wi * xv[t];
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [x, w, i, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& xv = g.nodes_[x].value;
    double wi = g.nodes_[w].value[i];
    Tensor& dx = g.grad(x);
    double acc = 0.0;
    for (std::size_t t = 0; t < dy.size(); ++t) {
      dx[t] += dy[t] * wi;
      acc += dy[t] * xv[t];
    }
    g.grad(w)[i] += acc;
  };
  return id;
}

Graph::NodeId Graph::blend_pair(Param& s, NodeId a, NodeId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  if (av.size() != bv.size()) throw NumericalError("blend_pair: shape mismatch");
  double s0 = s.value[0], s1 = s.value[1];
  Tensor y = Tensor::zeros(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) y[i] = 0.5 * (s0 * av[i] + s1 * bv[i]);
  NodeId id = push(std::move(y), {});
  nodes_[id].back = [&s, a, b, id](Graph& g) {
    const Tensor& dy = g.nodes_[id].grad;
    const Tensor& av = g.nodes_[a].value;
    const Tensor& bv = g.nodes_[b].value;
    double s0 = s.value[0], s1 = s.value[1];
    Tensor& da = g.grad(a);
    Tensor& db = g.grad(b);
    double g0 = 0.0, g1 = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      da[i] += 0.5 * s0 * dy[i];
      db[i] += 0.5 * s1 * dy[i];
      g0 += 0.5 * dy[i] * av[i];
      g1 += 0.5 * dy[i] * bv[i];
    }
    s.grad[0] += g0;
    s.grad[1] += g1;
  };
  return id;
}

void Graph::backward(NodeId out, const Tensor& seed) {
  if (seed.size() != nodes_[out].value.size())
    throw NumericalError("backward: seed shape mismatch");
  nodes_[out].grad = seed;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->back) it->back(*this);
  }
}

}  // namespace r2sl::nn
