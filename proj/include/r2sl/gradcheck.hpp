#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "r2sl/tensor.hpp"

namespace r2sl::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// Central-difference check of analytic gradients. `loss` must be a
// deterministic pure function of the parameter values. `grad` must zero the
// grads and repopulate them at the current values. For tensors larger than
// `max_coords_per_param`, a seeded coordinate subset is sampled.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& grad,
                           const std::vector<Param*>& params, double h,
                           std::size_t max_coords_per_param = 64,
                           std::uint64_t seed = 7);

}  // namespace r2sl::nn
