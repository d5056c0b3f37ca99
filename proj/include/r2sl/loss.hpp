#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace r2sl::loss {

enum class LossKind { s_huber, huber, mae, mse };

struct LossSpec {
  LossKind kind = LossKind::s_huber;
  double varsigma = 0.5;  // quadratic/linear threshold
  double psi = 0.05;      // linear-branch weight (s_huber only)

  void validate() const;
};

LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

struct LossValue {
  double value = 0.0;
  double d_yhat = 0.0;  // d(loss)/d(yhat)
};

// Quadratic branch for |y - yhat| < varsigma (strict), linear branch scaled
// by psi otherwise; the function is discontinuous at the threshold for
// psi != 1 and is implemented exactly as such.
LossValue s_huber(double y, double yhat, double varsigma, double psi);
LossValue huber(double y, double yhat, double delta);
LossValue mae_loss(double y, double yhat);
LossValue mse_loss(double y, double yhat);

LossValue evaluate(const LossSpec& spec, double y, double yhat);

struct MetricReport {
  std::string method;
  std::string split;
  std::uint64_t seed = 0;
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

double mae(const std::vector<std::pair<double, double>>& pairs);
double rmse(const std::vector<std::pair<double, double>>& pairs);

std::string metric_rows_to_csv(const std::vector<MetricReport>& rows);

}  // namespace r2sl::loss
