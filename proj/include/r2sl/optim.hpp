#pragma once

#include <cstdint>
#include <vector>

#include "r2sl/tensor.hpp"

namespace r2sl::nn {

void sgd_update(std::vector<Param*>& params, double learning_rate);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. State is positional, so the parameter
// list must be the same (and in the same order) on every step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<Param*>& params);
  void reset() { m_.clear(); v_.clear(); t_ = 0; }
  int t() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

}  // namespace r2sl::nn
