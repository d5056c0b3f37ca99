#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

namespace r2sl::nn {

// Row-major float64 tensor; shapes are tiny here, so this stays a plain
// vector with a shape tag.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor vec(std::vector<double> d) {
    std::size_t n = d.size();
    return Tensor({n}, std::move(d));
  }

  std::size_t size() const { return data.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

// Named trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.shape);
  }

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

}  // namespace r2sl::nn
