#include "r2sl/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "r2sl/errors.hpp"

namespace r2sl::baseline {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void UpccConfig::validate() const {
  if (top_k_neighbors < 1) throw UsageError("upcc: top_k_neighbors must be >= 1");
  if (min_overlap < 1) throw UsageError("upcc: min_overlap must be >= 1");
}

UpccModel::UpccModel(const std::vector<data::QosRecord>& train, UpccConfig config)
    : config_(config) {
  config_.validate();
  if (train.empty()) throw DataError("upcc: empty training set");

  for (const auto& r : train) n_users_ = std::max(n_users_, r.user_id + 1);
  ratings_.resize(n_users_);
  double sum = 0.0;
  for (const auto& r : train) {
    ratings_[r.user_id][r.service_id] = r.value;
    sum += r.value;
  }
  global_mean_ = sum / static_cast<double>(train.size());

  user_means_.assign(n_users_, global_mean_);
  user_seen_.assign(n_users_, false);
  for (int u = 0; u < n_users_; ++u) {
    if (ratings_[u].empty()) continue;
    double s = 0.0;
    for (const auto& [sid, v] : ratings_[u]) s += v;
    user_means_[u] = s / static_cast<double>(ratings_[u].size());
    user_seen_[u] = true;
  }

  // Pearson over co-observed services.
  sims_.assign(static_cast<std::size_t>(n_users_) * n_users_, kNaN);
  for (int a = 0; a < n_users_; ++a) {
    for (int b = a + 1; b < n_users_; ++b) {
      const auto& ra = ratings_[a];
      const auto& rb = ratings_[b];
      // true Pearson over the co-observed services: means taken over the
      // overlap itself, not each user's full rating set
      std::vector<std::pair<double, double>> shared;
      for (const auto& [sid, va] : ra) {
        auto it = rb.find(sid);
        if (it != rb.end()) shared.emplace_back(va, it->second);
      }
      if (static_cast<int>(shared.size()) < config_.min_overlap) continue;
      double mx = 0.0, my = 0.0;
      for (const auto& [va, vb] : shared) {
        mx += va;
        my += vb;
      }
      mx /= static_cast<double>(shared.size());
      my /= static_cast<double>(shared.size());
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (const auto& [va, vb] : shared) {
        sxy += (va - mx) * (vb - my);
        sxx += (va - mx) * (va - mx);
        syy += (vb - my) * (vb - my);
      }
      if (sxx == 0.0 || syy == 0.0) continue;
      double sim = sxy / std::sqrt(sxx * syy);
      sims_[static_cast<std::size_t>(a) * n_users_ + b] = sim;
      sims_[static_cast<std::size_t>(b) * n_users_ + a] = sim;
    }
  }
}

double UpccModel::sim_at(int a, int b) const {
  return sims_[static_cast<std::size_t>(a) * n_users_ + b];
}

double UpccModel::similarity(int a, int b) const {
  if (a < 0 || a >= n_users_ || b < 0 || b >= n_users_ || a == b) return kNaN;
  return sim_at(a, b);
}

double UpccModel::user_mean(int user) const {
  if (user < 0 || user >= n_users_ || !user_seen_[user]) return global_mean_;
  return user_means_[user];
}

double UpccModel::predict(int user, int service) const {
  if (user < 0 || user >= n_users_ || !user_seen_[user]) return global_mean_;

  // Positive-similarity neighbors who rated the service, best first.
  std::vector<std::pair<double, int>> neigh;
  for (int v = 0; v < n_users_; ++v) {
    if (v == user) continue;
    double sim = sim_at(user, v);
    if (!(sim > 0.0)) continue;
    auto it = ratings_[v].find(service);
    if (it == ratings_[v].end()) continue;
    neigh.emplace_back(sim, v);
  }
  if (neigh.empty()) return user_means_[user];

  std::sort(neigh.begin(), neigh.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;  // deterministic tie-break
  });
  if (static_cast<int>(neigh.size()) > config_.top_k_neighbors)
    neigh.resize(config_.top_k_neighbors);

  double num = 0.0, den = 0.0;
  for (const auto& [sim, v] : neigh) {
    num += sim * (ratings_[v].at(service) - user_means_[v]);
    den += std::abs(sim);
  }
  return user_means_[user] + num / den;
}

MeanModel::MeanModel(const std::vector<data::QosRecord>& train, MeanLevel level)
    : level_(level) {
  if (train.empty()) throw DataError("mean predictor: empty training set");
  double sum = 0.0;
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& r : train) {
    sum += r.value;
    int key = level == MeanLevel::user ? r.user_id : r.service_id;
    auto& [s, n] = acc[key];
    s += r.value;
    ++n;
  }
  global_mean_ = sum / static_cast<double>(train.size());
  if (level_ != MeanLevel::global)
    for (const auto& [key, sn] : acc)
      means_[key] = sn.first / static_cast<double>(sn.second);
}

double MeanModel::predict(int user, int service) const {
  if (level_ == MeanLevel::global) return global_mean_;
  int key = level_ == MeanLevel::user ? user : service;
  auto it = means_.find(key);
  return it == means_.end() ? global_mean_ : it->second;
}

}  // namespace r2sl::baseline
