#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "r2sl/dataset.hpp"
#include "r2sl/latent.hpp"
#include "r2sl/loss.hpp"
#include "r2sl/model.hpp"

namespace r2sl::experiment {

// Known method names: r2sl, r2sl_dense_gate, r2sl_no_physical,
// r2sl_no_virtual, r2sl_no_latent, upcc, mean.
bool is_known_method(const std::string& name);

struct ExperimentConfig {
  std::string records_path;
  std::string qos_kind = "rt";
  double value_cap = 20.0;
  std::vector<double> densities;
  double valid_frac = 0.2;  // test fraction = 1 - density - valid_frac
  std::vector<std::uint64_t> seeds;
  latent::LatentConfig latent;
  model::NetworkConfig network;
  loss::LossSpec loss_spec;
  std::vector<std::string> methods;
  std::string out_dir = "r2sl-out";

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
// Hash of the canonical JSON form; changes iff a semantic field changes.
std::string config_hash(const ExperimentConfig& cfg);

std::string split_label(const std::string& qos_kind, double density);

struct CellResult {
  loss::MetricReport metrics;
  bool failed = false;
  std::string error;
  double wall_seconds = 0.0;
};

struct ExperimentResult {
  std::vector<CellResult> cells;  // fixed grid order: density, seed, method
  std::string config_hash;
};

// Applies the method name to the base network config (gate mode and latent
// feature masks).
model::NetworkConfig method_network_config(const model::NetworkConfig& base,
                                           const std::string& method);

// Fits (or loads from cache_dir, when nonempty) the latent model for a
// training subset.
latent::RegionalLatentModel fit_latent_cached(
    const std::vector<data::QosRecord>& train, const data::Dims& dims,
    const latent::LatentConfig& config, const std::string& cache_dir);

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<data::QosRecord>& records);

std::string results_to_csv(const ExperimentResult& result);
std::string summary_markdown(const ExperimentConfig& cfg, const ExperimentResult& result);

// CLI command bodies; throw UsageError/DataError/NumericalError on failure.
struct PrepareArgs {
  std::string matrix, user_meta, service_meta, out;
  double cap = 20.0;
  double sentinel = -1.0;
};
void cmd_prepare(const PrepareArgs& args);

struct FitLatentArgs {
  std::string records, config, out;
};
void cmd_fit_latent(const FitLatentArgs& args);

struct TrainArgs {
  std::string records, valid, latent, config, out;
};
void cmd_train(const TrainArgs& args);

struct EvaluateArgs {
  std::vector<std::string> models;
  std::string latent, records, out;
  std::string method = "r2sl";
  std::string split = "test";
};
void cmd_evaluate(const EvaluateArgs& args);

struct ExperimentArgs {
  std::string config;
};
void cmd_experiment(const ExperimentArgs& args);

struct GateStatsArgs {
  std::string model, latent, records, out;
  int user = -1, service = -1;
};
void cmd_gate_stats(const GateStatsArgs& args);

struct SynthArgs {
  std::string out;
  int m = 3, users = 100, services = 1000;
  int user_cities = 10, user_as = 5, service_cities = 20, service_as = 8;
  std::size_t n_records = 50000;
  std::uint64_t seed = 1;
};
void cmd_synth(const SynthArgs& args);

latent::LatentConfig latent_config_from_json(const nlohmann::json& j);
nlohmann::json latent_config_to_json(const latent::LatentConfig& c);
model::NetworkConfig network_config_from_json(const nlohmann::json& j);
nlohmann::json network_config_to_json(const model::NetworkConfig& c);
loss::LossSpec loss_spec_from_json(const nlohmann::json& j);
nlohmann::json loss_spec_to_json(const loss::LossSpec& s);

}  // namespace r2sl::experiment
