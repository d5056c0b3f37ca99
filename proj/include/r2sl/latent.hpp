#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "r2sl/dataset.hpp"

namespace r2sl::latent {

struct LatentConfig {
  int m = 4;                    // latent state count
  double alpha = 0.0;           // jitter seed scale; 0 means "use m"
  double eta = 2.5;             // QoS branch threshold (value units)
  double w_init = 50.0;         // penalty factor init
  double learning_rate = 1e-3;  // GD step size
  double gamma = 1e-4;          // relative log-likelihood convergence threshold
  int max_iters = 200;
  double param_floor = 1e-6;
  std::uint64_t seed = 1;

  void validate() const;
};

// Column-stochastic m x n_regions matrix, column-major.
struct StateMatrix {
  int m = 0;
  int n_regions = 0;
  std::vector<double> data;  // m * n_regions, column q at data[q*m]

  double at(int state, int region) const {
    return data[static_cast<std::size_t>(region) * m + state];
  }
  double& at(int state, int region) {
    return data[static_cast<std::size_t>(region) * m + state];
  }
};

struct RegionalLatentModel {
  StateMatrix theta_u;  // user city
  StateMatrix theta_s;  // service city
  StateMatrix delta_u;  // user AS
  StateMatrix delta_s;  // service AS
  std::vector<double> c_u;  // per-state complexity factors, length m
  std::vector<double> c_s;
  double w = 50.0;
  LatentConfig config;
  std::vector<double> fit_log;  // per-iteration log-likelihood trace
};

// Per-record m x m posterior over (user-state j, service-state k), each
// normalized to sum 1.
struct Responsibilities {
  int m = 0;
  std::vector<double> g;  // n_records * m * m, record i at g[i*m*m], row-major over (j, k)

  double at(std::size_t i, int j, int k) const {
    return g[(i * m + j) * m + k];
  }
};

double exp_pdf(double t, double lambda);

// lambda^-1 = c_u[j]*c_s[k], times w when t >= eta.
double rate(int j, int k, double t, const RegionalLatentModel& model);

double mixture_weight(const data::QosRecord& rec, int j, int k,
                      const RegionalLatentModel& model);

double log_likelihood(const std::vector<data::QosRecord>& records,
                      const RegionalLatentModel& model);

Responsibilities e_step(const std::vector<data::QosRecord>& records,
                        const RegionalLatentModel& model);

struct MStepResult {
  StateMatrix theta_u, theta_s, delta_u, delta_s;
};
MStepResult m_step(const std::vector<data::QosRecord>& records,
                   const Responsibilities& resp, const RegionalLatentModel& model);

// Expected complete-data log-likelihood restricted to the terms that depend
// on (c_u, c_s, w).
double q_complexity(const std::vector<data::QosRecord>& records,
                    const Responsibilities& resp, const std::vector<double>& c_u,
                    const std::vector<double>& c_s, double w, double eta);

struct GdResult {
  std::vector<double> c_u, c_s;
  double w;
};
// One ascent step with halve-on-failure backtracking; results clamped at the
// param floor.
GdResult gd_step(const std::vector<data::QosRecord>& records,
                 const Responsibilities& resp, const RegionalLatentModel& model);

RegionalLatentModel init_model(const data::Dims& dims, const LatentConfig& config,
                               double mean_value);

// Data-driven variant: complexity factors start at the square roots of evenly
// spaced value quantiles, so the initial states already bracket the observed
// scale range. This is the initialization fit() uses.
RegionalLatentModel init_model(const std::vector<data::QosRecord>& records,
                               const data::Dims& dims, const LatentConfig& config);

RegionalLatentModel fit(const std::vector<data::QosRecord>& records,
                        const data::Dims& dims, const LatentConfig& config);

// Columns (theta_u, delta_u, theta_s, delta_s) concatenated: length 4m.
std::vector<double> latent_features(const RegionalLatentModel& model, int user_city,
                                    int user_as, int service_city, int service_as);

void save_model(const std::string& path, const RegionalLatentModel& model);
RegionalLatentModel load_model(const std::string& path);

}  // namespace r2sl::latent
