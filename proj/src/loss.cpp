#include "r2sl/loss.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "r2sl/errors.hpp"

namespace r2sl::loss {

void LossSpec::validate() const {
  if (varsigma <= 0.0) throw UsageError("loss spec: varsigma must be positive");
  if (psi <= 0.0) throw UsageError("loss spec: psi must be positive");
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "s_huber") return LossKind::s_huber;
  if (s == "huber") return LossKind::huber;
  if (s == "mae") return LossKind::mae;
  if (s == "mse") return LossKind::mse;
  throw UsageError("unknown loss kind: " + s);
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::s_huber: return "s_huber";
    case LossKind::huber: return "huber";
    case LossKind::mae: return "mae";
    case LossKind::mse: return "mse";
  }
  return "?";
}

LossValue s_huber(double y, double yhat, double varsigma, double psi) {
  double e = y - yhat;
  double ae = std::abs(e);
  if (ae < varsigma) {
    return {0.5 * e * e, -e};
  }
  double sign = e >= 0.0 ? 1.0 : -1.0;
  return {psi * (varsigma * ae - 0.5 * varsigma * varsigma), -psi * varsigma * sign};
}

LossValue huber(double y, double yhat, double delta) {
  double e = y - yhat;
  double ae = std::abs(e);
  if (ae <= delta) {
    return {0.5 * e * e, -e};
  }
  double sign = e >= 0.0 ? 1.0 : -1.0;
  return {delta * ae - 0.5 * delta * delta, -delta * sign};
}

LossValue mae_loss(double y, double yhat) {
  double e = y - yhat;
  double sign = e >= 0.0 ? 1.0 : -1.0;
  return {std::abs(e), -sign};
}

LossValue mse_loss(double y, double yhat) {
  double e = y - yhat;
  return {e * e, -2.0 * e};
}

LossValue evaluate(const LossSpec& spec, double y, double yhat) {
  switch (spec.kind) {
    case LossKind::s_huber: return s_huber(y, yhat, spec.varsigma, spec.psi);
    case LossKind::huber: return huber(y, yhat, spec.varsigma);
    case LossKind::mae: return mae_loss(y, yhat);
    case LossKind::mse: return mse_loss(y, yhat);
  }
  throw UsageError("loss: unknown kind");
}

double mae(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw DataError("mae: empty pair list");
  double s = 0.0;
  for (const auto& [y, yhat] : pairs) s += std::abs(y - yhat);
  return s / static_cast<double>(pairs.size());
}

double rmse(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw DataError("rmse: empty pair list");
  double s = 0.0;
  for (const auto& [y, yhat] : pairs) {
    double e = y - yhat;
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(pairs.size()));
}

std::string metric_rows_to_csv(const std::vector<MetricReport>& rows) {
  std::ostringstream out;
  out << "method,split,seed,mae,rmse,n\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.method << ',' << r.split << ',' << r.seed << ',';
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g,", r.mae, r.rmse);
    out << buf << r.n << '\n';
  }
  return out.str();
}

}  // namespace r2sl::loss
