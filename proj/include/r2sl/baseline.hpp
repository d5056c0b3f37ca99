#pragma once

#include <map>
#include <vector>

#include "r2sl/dataset.hpp"

namespace r2sl::baseline {

struct UpccConfig {
  int top_k_neighbors = 10;
  int min_overlap = 2;  // minimum co-rated services for a similarity to count

  void validate() const;
};

// User-based Pearson collaborative filtering. Nonpositive similarities are
// discarded at prediction time.
class UpccModel {
 public:
  UpccModel(const std::vector<data::QosRecord>& train, UpccConfig config);

  double predict(int user, int service) const;

  double user_mean(int user) const;
  double global_mean() const { return global_mean_; }
  // Similarity between two users, or NaN when undefined (overlap below
  // min_overlap or zero variance).
  double similarity(int a, int b) const;

 private:
  UpccConfig config_;
  int n_users_ = 0;
  std::vector<std::map<int, double>> ratings_;  // per user: service -> value
  std::vector<double> user_means_;
  std::vector<bool> user_seen_;
  double global_mean_ = 0.0;
  std::vector<double> sims_;  // dense upper-triangular store, NaN = undefined

  double sim_at(int a, int b) const;
};

enum class MeanLevel { global, user, service };

// Training-mean predictor with global fallback for unseen ids.
class MeanModel {
 public:
  MeanModel(const std::vector<data::QosRecord>& train, MeanLevel level);

  double predict(int user, int service) const;

 private:
  MeanLevel level_;
  double global_mean_ = 0.0;
  std::map<int, double> means_;  // keyed by user or service id
};

}  // namespace r2sl::baseline
