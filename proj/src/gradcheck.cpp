#include "r2sl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "r2sl/errors.hpp"
#include "r2sl/rng.hpp"

namespace r2sl::nn {

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& grad,
                           const std::vector<Param*>& params, double h,
                           std::size_t max_coords_per_param, std::uint64_t seed) {
  grad();
  GradCheckReport report;
  Rng rng(seed);
  for (Param* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      double saved = p->value[i];
      p->value[i] = saved + h;
      double up = loss();
      p->value[i] = saved - h;
      double down = loss();
      p->value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("grad_check: non-finite loss");
      double numeric = (up - down) / (2.0 * h);
      double analytic = p->grad[i];
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      double rel = std::abs(numeric - analytic) / denom;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.n_checked;
    }
  }
  return report;
}

}  // namespace r2sl::nn
