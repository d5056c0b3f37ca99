#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "r2sl/dataset.hpp"
#include "r2sl/graph.hpp"
#include "r2sl/latent.hpp"
#include "r2sl/loss.hpp"
#include "r2sl/optim.hpp"
#include "r2sl/tensor.hpp"

namespace r2sl::model {

struct NetworkConfig {
  int embed_dim = 16;
  int hidden = 32;           // expert output width H
  int n_task_experts = 2;
  int n_domain_experts = 2;  // one physical + one virtual by default
  int top_k = 2;
  int decoder_v = 5;         // decoder widths [2^v, 2^(v-1), 2^(v-2), 1]
  int latent_m = 4;
  std::uint64_t seed = 1;
  int batch_size = 256;
  int epochs = 50;
  int patience = 10;  // early-stop patience on validation MAE
  nn::AdamConfig adam;
  bool dense_gate = false;
  // Ablation masks: zero out the matching latent-feature projections at
  // input construction.
  bool use_physical_latent = true;
  bool use_virtual_latent = true;

  int n_experts() const { return n_task_experts + n_domain_experts; }
  std::vector<int> decoder_widths() const;
  void validate() const;
};

enum class ExpertKind { task, physical, virtual_ };
std::string to_string(ExpertKind k);

struct GateDecision {
  std::vector<double> raw;     // softmax output, sums to 1
  std::vector<bool> active;    // |active| = top_k (all true when dense)
  std::vector<double> sparse;  // renormalized over the active set
};

struct ActivationRow {
  int expert_id = 0;
  ExpertKind kind = ExpertKind::task;
  double mean_weight = 0.0;
  double activation_rate = 0.0;
};

struct ActivationReport {
  std::vector<ActivationRow> rows;
  std::size_t n_requests = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double valid_mae = 0.0;
  double valid_rmse = 0.0;
};

struct ExpertParams {
  nn::Param fuse_w, fuse_b;  // dense fusion: input -> H
  nn::Param conv3, conv5;    // kernels over the length-H map
  nn::Param w_out;           // per-branch output scales, length 2
  ExpertKind kind = ExpertKind::task;
};

class R2slNetwork {
 public:
  R2slNetwork(NetworkConfig config, const data::Dims& dims);

  const NetworkConfig& config() const { return config_; }
  const data::Dims& dims() const { return dims_; }

  std::vector<nn::Param*> params();
  std::vector<const nn::Param*> params() const;

  // Forward pass on a fresh tape; returns the output node so training can
  // backpropagate through the same graph.
  struct Forward {
    nn::Graph graph;
    nn::Graph::NodeId output;
    GateDecision gate;
  };
  Forward forward(const data::QosRecord& rec,
                  const latent::RegionalLatentModel& latent_model);

  double predict(const data::QosRecord& rec,
                 const latent::RegionalLatentModel& latent_model);

  GateDecision gate_decision(const data::QosRecord& rec);

  NetworkConfig config_;
  data::Dims dims_;

  nn::Param emb_user, emb_service;
  nn::Param emb_user_city, emb_user_as, emb_service_city, emb_service_as;
  // Latent simplex vectors enter through dense projections, one per group:
  // theta_u, delta_u, theta_s, delta_s.
  nn::Param proj_w[4], proj_b[4];
  std::vector<ExpertParams> experts;
  nn::Param gate1_w, gate1_b, gate2_w, gate2_b;
  std::vector<nn::Param> decoder_w, decoder_b;
};

GateDecision sparsify_gate(const std::vector<double>& raw, int top_k, bool dense_gate);

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

TrainResult train(R2slNetwork& net, const std::vector<data::QosRecord>& train_records,
                  const std::vector<data::QosRecord>& valid_records,
                  const latent::RegionalLatentModel& latent_model,
                  const loss::LossSpec& loss_spec);

loss::MetricReport evaluate(R2slNetwork& net,
                            const std::vector<data::QosRecord>& records,
                            const latent::RegionalLatentModel& latent_model,
                            const std::string& method, const std::string& split);

ActivationReport activation_stats(R2slNetwork& net,
                                  const std::vector<data::QosRecord>& records);

std::string activation_report_to_csv(const ActivationReport& report);

void save_network(const std::string& path, const R2slNetwork& net,
                  const std::string& latent_hash, const TrainResult& history);
struct LoadedNetwork {
  R2slNetwork net;
  std::string latent_hash;
  TrainResult history;
};
LoadedNetwork load_network(const std::string& path);

}  // namespace r2sl::model
