#include "r2sl/optim.hpp"

#include <cmath>

#include "r2sl/errors.hpp"

namespace r2sl::nn {

void sgd_update(std::vector<Param*>& params, double learning_rate) {
  for (Param* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i)
      p->value[i] -= learning_rate * p->grad[i];
}

void Adam::step(std::vector<Param*>& params) {
  if (m_.empty()) {
    for (Param* p : params) {
      m_.push_back(Tensor::zeros(p->value.shape));
      v_.push_back(Tensor::zeros(p->value.shape));
    }
  }
  if (m_.size() != params.size())
    throw NumericalError("adam: parameter list changed between steps");
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      m_[pi][i] = cfg_.beta1 * m_[pi][i] + (1.0 - cfg_.beta1) * g;
      v_[pi][i] = cfg_.beta2 * v_[pi][i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m_[pi][i] / bc1;
      double vhat = v_[pi][i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace r2sl::nn
