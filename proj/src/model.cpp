#include "r2sl/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "r2sl/errors.hpp"
#include "r2sl/jsonio.hpp"
#include "r2sl/rng.hpp"

namespace r2sl::model {

namespace {

nn::Tensor init_uniform(std::vector<std::size_t> shape, double limit, Rng& rng) {
  nn::Tensor t = nn::Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

nn::Tensor xavier(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  return init_uniform({out_dim, in_dim}, limit, rng);
}

}  // namespace

std::vector<int> NetworkConfig::decoder_widths() const {
  return {1 << decoder_v, 1 << (decoder_v - 1), 1 << (decoder_v - 2), 1};
}

void NetworkConfig::validate() const {
  if (embed_dim < 1) throw UsageError("network config: embed_dim must be >= 1");
  if (hidden < 1) throw UsageError("network config: hidden must be >= 1");
  if (n_task_experts < 0 || n_domain_experts < 0 || n_experts() < 1)
    throw UsageError("network config: need at least one expert");
  if (top_k < 1 || top_k > n_experts())
    throw UsageError("network config: top_k must be in [1, n_experts]");
  if (decoder_v < 2) throw UsageError("network config: decoder_v must be >= 2");
  if (latent_m < 1) throw UsageError("network config: latent_m must be >= 1");
  if (batch_size < 1) throw UsageError("network config: batch_size must be >= 1");
  if (epochs < 0) throw UsageError("network config: epochs must be >= 0");
}

std::string to_string(ExpertKind k) {
  switch (k) {
    case ExpertKind::task: return "task";
    case ExpertKind::physical: return "physical";
    case ExpertKind::virtual_: return "virtual";
  }
  return "?";
}

R2slNetwork::R2slNetwork(NetworkConfig config, const data::Dims& dims)
    : config_(config), dims_(dims) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t h = static_cast<std::size_t>(config_.hidden);
  const std::size_t m = static_cast<std::size_t>(config_.latent_m);

  auto table = [&](const char* name, int rows) {
    return nn::Param(name, init_uniform({static_cast<std::size_t>(std::max(rows, 1)), d},
                                        0.05, rng));
  };
  emb_user = table("emb_user", dims.n_users);
  emb_service = table("emb_service", dims.n_services);
  emb_user_city = table("emb_user_city", dims.n_user_cities);
  emb_user_as = table("emb_user_as", dims.n_user_as);
  emb_service_city = table("emb_service_city", dims.n_service_cities);
  emb_service_as = table("emb_service_as", dims.n_service_as);

  static const char* kProjNames[4] = {"proj_theta_u", "proj_delta_u", "proj_theta_s",
                                      "proj_delta_s"};
  for (int g = 0; g < 4; ++g) {
    proj_w[g] = nn::Param(std::string(kProjNames[g]) + "_w", xavier(d, m, rng));
    proj_b[g] = nn::Param(std::string(kProjNames[g]) + "_b", nn::Tensor::zeros({d}));
  }

  const std::size_t task_in = 10 * d;   // 6 id/region embeddings + 4 latent projections
  const std::size_t domain_in = 2 * d;  // the two latent projections of one domain
  const int n = config_.n_experts();
  experts.reserve(n);
  for (int i = 0; i < n; ++i) {
    ExpertParams e;
    if (i < config_.n_task_experts) {
      e.kind = ExpertKind::task;
    } else {
      e.kind = ((i - config_.n_task_experts) % 2 == 0) ? ExpertKind::physical
                                                       : ExpertKind::virtual_;
    }
    std::size_t in_dim = e.kind == ExpertKind::task ? task_in : domain_in;
    std::string prefix = "expert" + std::to_string(i) + "_";
    e.fuse_w = nn::Param(prefix + "fuse_w", xavier(h, in_dim, rng));
    e.fuse_b = nn::Param(prefix + "fuse_b", nn::Tensor::zeros({h}));
    e.conv3 = nn::Param(prefix + "conv3", init_uniform({3}, std::sqrt(6.0 / 6.0), rng));
    e.conv5 = nn::Param(prefix + "conv5", init_uniform({5}, std::sqrt(6.0 / 10.0), rng));
    e.w_out = nn::Param(prefix + "w_out", nn::Tensor::vec({1.0, 1.0}));
    experts.push_back(std::move(e));
  }

  gate1_w = nn::Param("gate1_w", xavier(h, 2 * d, rng));
  gate1_b = nn::Param("gate1_b", nn::Tensor::zeros({h}));
  gate2_w = nn::Param("gate2_w", xavier(static_cast<std::size_t>(n), h, rng));
  gate2_b = nn::Param("gate2_b", nn::Tensor::zeros({static_cast<std::size_t>(n)}));

  std::size_t dec_in = static_cast<std::size_t>(n) * h;
  for (int w : config_.decoder_widths()) {
    std::string prefix = "decoder" + std::to_string(decoder_w.size()) + "_";
    decoder_w.emplace_back(prefix + "w", xavier(static_cast<std::size_t>(w), dec_in, rng));
    decoder_b.emplace_back(prefix + "b", nn::Tensor::zeros({static_cast<std::size_t>(w)}));
    dec_in = static_cast<std::size_t>(w);
  }
}

std::vector<nn::Param*> R2slNetwork::params() {
  std::vector<nn::Param*> ps = {&emb_user,         &emb_service,    &emb_user_city,
                                &emb_user_as,      &emb_service_city, &emb_service_as};
  for (int g = 0; g < 4; ++g) {
    ps.push_back(&proj_w[g]);
    ps.push_back(&proj_b[g]);
  }
  for (auto& e : experts) {
    ps.push_back(&e.fuse_w);
    ps.push_back(&e.fuse_b);
    ps.push_back(&e.conv3);
    ps.push_back(&e.conv5);
    ps.push_back(&e.w_out);
  }
  ps.push_back(&gate1_w);
  ps.push_back(&gate1_b);
  ps.push_back(&gate2_w);
  ps.push_back(&gate2_b);
  for (std::size_t i = 0; i < decoder_w.size(); ++i) {
    ps.push_back(&decoder_w[i]);
    ps.push_back(&decoder_b[i]);
  }
  return ps;
}

std::vector<const nn::Param*> R2slNetwork::params() const {
  auto ps = const_cast<R2slNetwork*>(this)->params();
  return {ps.begin(), ps.end()};
}

GateDecision sparsify_gate(const std::vector<double>& raw, int top_k, bool dense_gate) {
  const int n = static_cast<int>(raw.size());
  GateDecision gd;
  gd.raw = raw;
  gd.active.assign(n, false);
  gd.sparse.assign(n, 0.0);
  if (dense_gate) {
    std::fill(gd.active.begin(), gd.active.end(), true);
    gd.sparse = raw;
    return gd;
  }
  // Top-k by weight, ties broken by lower expert index.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&raw](int a, int b) { return raw[a] > raw[b]; });
  double z = 0.0;
  for (int r = 0; r < top_k; ++r) {
    gd.active[order[r]] = true;
    z += raw[order[r]];
  }
  for (int i = 0; i < n; ++i)
    if (gd.active[i]) gd.sparse[i] = raw[i] / z;
  return gd;
}

R2slNetwork::Forward R2slNetwork::forward(const data::QosRecord& rec,
                                          const latent::RegionalLatentModel& latent_model) {
  if (latent_model.config.m != config_.latent_m)
    throw DataError("network/latent model state-count mismatch");
  if (rec.user_id < 0 || rec.user_id >= dims_.n_users ||
      rec.service_id < 0 || rec.service_id >= dims_.n_services)
    throw DataError("record id out of embedding-table range");

  Forward fwd;
  nn::Graph& g = fwd.graph;
  g.reserve(64);
  const std::size_t m = static_cast<std::size_t>(config_.latent_m);

  auto u_emb = g.embed(emb_user, static_cast<std::size_t>(rec.user_id));
  auto s_emb = g.embed(emb_service, static_cast<std::size_t>(rec.service_id));
  auto uc_emb = g.embed(emb_user_city, static_cast<std::size_t>(rec.user_city));
  auto ua_emb = g.embed(emb_user_as, static_cast<std::size_t>(rec.user_as));
  auto sc_emb = g.embed(emb_service_city, static_cast<std::size_t>(rec.service_city));
  auto sa_emb = g.embed(emb_service_as, static_cast<std::size_t>(rec.service_as));

  // Latent feature groups in the order (theta_u, delta_u, theta_s, delta_s);
  // groups 0/2 are physical, 1/3 virtual.
  std::vector<double> lf = latent::latent_features(
      latent_model, rec.user_city, rec.user_as, rec.service_city, rec.service_as);
  nn::Graph::NodeId proj[4];
  const std::vector<double> zero_mask(static_cast<std::size_t>(config_.embed_dim), 0.0);
  for (int grp = 0; grp < 4; ++grp) {
    std::vector<double> col(lf.begin() + grp * m, lf.begin() + (grp + 1) * m);
    auto in = g.constant_vec(col);
    proj[grp] = g.dense(proj_w[grp], &proj_b[grp], in);
    bool physical = (grp == 0 || grp == 2);
    bool enabled = physical ? config_.use_physical_latent : config_.use_virtual_latent;
    if (!enabled) proj[grp] = g.mul_mask(proj[grp], zero_mask);
  }

  std::vector<nn::Graph::NodeId> task_inputs = {u_emb,  s_emb,  uc_emb,  ua_emb,
                                                sc_emb, sa_emb, proj[0], proj[1],
                                                proj[2], proj[3]};
  auto task_bundle = g.concat(task_inputs);
  std::vector<nn::Graph::NodeId> phys_inputs = {proj[0], proj[2]};
  std::vector<nn::Graph::NodeId> virt_inputs = {proj[1], proj[3]};
  auto phys_bundle = g.concat(phys_inputs);
  auto virt_bundle = g.concat(virt_inputs);

  // Gate: two dense layers over (u, s), sigmoid after the hidden layer,
  // softmax over the experts.
  std::vector<nn::Graph::NodeId> gate_in_parts = {u_emb, s_emb};
  auto gate_in = g.concat(gate_in_parts);
  auto gate_h = g.sigmoid(g.dense(gate1_w, &gate1_b, gate_in));
  auto gate_p = g.softmax(g.dense(gate2_w, &gate2_b, gate_h));

  fwd.gate = sparsify_gate(g.value(gate_p).data, config_.top_k, config_.dense_gate);

  nn::Graph::NodeId weights;
  if (config_.dense_gate) {
    weights = gate_p;
  } else {
    std::vector<double> mask(fwd.gate.active.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = fwd.gate.active[i] ? 1.0 : 0.0;
    auto masked = g.mul_mask(gate_p, mask);
    weights = g.div_by_scalar(masked, g.sum(masked));
  }

  std::vector<nn::Graph::NodeId> fused;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    ExpertParams& e = experts[i];
    nn::Graph::NodeId bundle = e.kind == ExpertKind::task      ? task_bundle
                               : e.kind == ExpertKind::physical ? phys_bundle
                                                                : virt_bundle;
    auto f = g.dense(e.fuse_w, &e.fuse_b, bundle);
    auto e3 = g.gelu(g.conv1d_same(e.conv3, f));
    auto e5 = g.gelu(g.conv1d_same(e.conv5, f));
    auto out = g.blend_pair(e.w_out, e3, e5);
    fused.push_back(g.scale_by_entry(out, weights, i));
  }
  auto h_x = g.concat(fused);

  nn::Graph::NodeId cur = h_x;
  for (std::size_t l = 0; l < decoder_w.size(); ++l) {
    cur = g.dense(decoder_w[l], &decoder_b[l], cur);
    if (l + 1 < decoder_w.size()) cur = g.gelu(cur);
  }
  fwd.output = cur;
  return fwd;
}

double R2slNetwork::predict(const data::QosRecord& rec,
                            const latent::RegionalLatentModel& latent_model) {
  Forward fwd = forward(rec, latent_model);
  return fwd.graph.value(fwd.output)[0];
}

GateDecision R2slNetwork::gate_decision(const data::QosRecord& rec) {
  nn::Graph g;
  auto u_emb = g.embed(emb_user, static_cast<std::size_t>(rec.user_id));
  auto s_emb = g.embed(emb_service, static_cast<std::size_t>(rec.service_id));
  std::vector<nn::Graph::NodeId> parts = {u_emb, s_emb};
  auto gate_in = g.concat(parts);
  auto gate_h = g.sigmoid(g.dense(gate1_w, &gate1_b, gate_in));
  auto gate_p = g.softmax(g.dense(gate2_w, &gate2_b, gate_h));
  return sparsify_gate(g.value(gate_p).data, config_.top_k, config_.dense_gate);
}

TrainResult train(R2slNetwork& net, const std::vector<data::QosRecord>& train_records,
                  const std::vector<data::QosRecord>& valid_records,
                  const latent::RegionalLatentModel& latent_model,
                  const loss::LossSpec& loss_spec) {
  if (train_records.empty()) throw DataError("train: empty training set");
  loss_spec.validate();

  const NetworkConfig& cfg = net.config();
  std::vector<nn::Param*> params = net.params();
  nn::Adam adam(cfg.adam);
  Rng shuffle_rng(cfg.seed ^ 0x5eedf00dULL);

  TrainResult result;
  double best_mae = std::numeric_limits<double>::infinity();
  std::vector<nn::Tensor> best_values;
  int epochs_since_best = 0;

  std::vector<std::size_t> order(train_records.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      double inv_b = 1.0 / static_cast<double>(end - start);
      for (nn::Param* p : params) p->zero_grad();
      for (std::size_t bi = start; bi < end; ++bi) {
        const auto& rec = train_records[order[bi]];
        auto fwd = net.forward(rec, latent_model);
        double yhat = fwd.graph.value(fwd.output)[0];
        loss::LossValue lv = loss::evaluate(loss_spec, rec.value, yhat);
        if (!std::isfinite(lv.value))
          throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
        epoch_loss += lv.value;
        fwd.graph.backward(fwd.output, nn::Tensor({1}, {lv.d_yhat * inv_b}));
      }
      adam.step(params);
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / static_cast<double>(train_records.size());
    if (!valid_records.empty()) {
      std::vector<std::pair<double, double>> pairs;
      pairs.reserve(valid_records.size());
      for (const auto& rec : valid_records)
        pairs.emplace_back(rec.value, net.predict(rec, latent_model));
      stats.valid_mae = loss::mae(pairs);
      stats.valid_rmse = loss::rmse(pairs);
    }
    result.history.push_back(stats);

    double score = valid_records.empty() ? stats.train_loss : stats.valid_mae;
    if (score < best_mae) {
      best_mae = score;
      result.best_epoch = epoch;
      best_values.clear();
      for (nn::Param* p : params) best_values.push_back(p->value);
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }

  if (!best_values.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  return result;
}

loss::MetricReport evaluate(R2slNetwork& net,
                            const std::vector<data::QosRecord>& records,
                            const latent::RegionalLatentModel& latent_model,
                            const std::string& method, const std::string& split) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(records.size());
  for (const auto& rec : records)
    pairs.emplace_back(rec.value, net.predict(rec, latent_model));
  loss::MetricReport rep;
  rep.method = method;
  rep.split = split;
  rep.seed = net.config().seed;
  rep.mae = loss::mae(pairs);
  rep.rmse = loss::rmse(pairs);
  rep.n = pairs.size();
  return rep;
}

ActivationReport activation_stats(R2slNetwork& net,
                                  const std::vector<data::QosRecord>& records) {
  if (records.empty()) throw DataError("activation_stats: empty record set");
  const int n = net.config().n_experts();
  ActivationReport rep;
  rep.n_requests = records.size();
  std::vector<double> weight_sum(n, 0.0), active_sum(n, 0.0);
  for (const auto& rec : records) {
    GateDecision gd = net.gate_decision(rec);
    for (int i = 0; i < n; ++i) {
      weight_sum[i] += gd.sparse[i];
      if (gd.active[i]) active_sum[i] += 1.0;
    }
  }
  for (int i = 0; i < n; ++i) {
    ActivationRow row;
    row.expert_id = i;
    row.kind = net.experts[i].kind;
    row.mean_weight = weight_sum[i] / static_cast<double>(records.size());
    row.activation_rate = active_sum[i] / static_cast<double>(records.size());
    rep.rows.push_back(row);
  }
  return rep;
}

std::string activation_report_to_csv(const ActivationReport& report) {
  std::ostringstream out;
  out << "expert_id,expert_kind,mean_weight,activation_rate\n";
  char buf[64];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g", r.mean_weight, r.activation_rate);
    out << r.expert_id << ',' << to_string(r.kind) << ',' << buf << '\n';
  }
  return out.str();
}

namespace {

nlohmann::json param_to_json(const nn::Param& p) {
  nlohmann::json j;
  j["shape"] = p.value.shape;
  j["data"] = dvec_to_json(p.value.data);
  return j;
}

void param_from_json(const nlohmann::json& j, nn::Param& p) {
  auto shape = j.at("shape").get<std::vector<std::size_t>>();
  auto data = json_to_dvec(j.at("data"));
  if (shape != p.value.shape || data.size() != p.value.size())
    throw DataError("network document: tensor shape mismatch for " + p.name);
  p.value.data = std::move(data);
}

}  // namespace

void save_network(const std::string& path, const R2slNetwork& net,
                  const std::string& latent_hash, const TrainResult& history) {
  const NetworkConfig& c = net.config();
  nlohmann::json j;
  j["schema"] = "r2sl-network-v1";
  nlohmann::json cfg;
  cfg["embed_dim"] = c.embed_dim;
  cfg["hidden"] = c.hidden;
  cfg["n_task_experts"] = c.n_task_experts;
  cfg["n_domain_experts"] = c.n_domain_experts;
  cfg["top_k"] = c.top_k;
  cfg["decoder_v"] = c.decoder_v;
  cfg["latent_m"] = c.latent_m;
  cfg["seed"] = c.seed;
  cfg["batch_size"] = c.batch_size;
  cfg["epochs"] = c.epochs;
  cfg["patience"] = c.patience;
  cfg["adam_lr"] = double_to_hex(c.adam.lr);
  cfg["adam_beta1"] = double_to_hex(c.adam.beta1);
  cfg["adam_beta2"] = double_to_hex(c.adam.beta2);
  cfg["adam_eps"] = double_to_hex(c.adam.eps);
  cfg["dense_gate"] = c.dense_gate;
  cfg["use_physical_latent"] = c.use_physical_latent;
  cfg["use_virtual_latent"] = c.use_virtual_latent;
  j["config"] = cfg;
  nlohmann::json dims;
  dims["n_users"] = net.dims().n_users;
  dims["n_services"] = net.dims().n_services;
  dims["n_user_cities"] = net.dims().n_user_cities;
  dims["n_user_as"] = net.dims().n_user_as;
  dims["n_service_cities"] = net.dims().n_service_cities;
  dims["n_service_as"] = net.dims().n_service_as;
  j["dims"] = dims;
  j["latent_hash"] = latent_hash;
  nlohmann::json params = nlohmann::json::object();
  for (const nn::Param* p : net.params()) params[p->name] = param_to_json(*p);
  j["params"] = params;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : history.history) {
    hist.push_back({{"train_loss", double_to_hex(e.train_loss)},
                    {"valid_mae", double_to_hex(e.valid_mae)},
                    {"valid_rmse", double_to_hex(e.valid_rmse)}});
  }
  j["history"] = hist;
  j["best_epoch"] = history.best_epoch;
  save_json_file(path, j);
}

LoadedNetwork load_network(const std::string& path) {
  auto j = load_json_file(path);
  if (j.value("schema", "") != "r2sl-network-v1")
    throw DataError("network document: unknown schema in " + path);
  const auto& cfg = j.at("config");
  NetworkConfig c;
  c.embed_dim = cfg.at("embed_dim").get<int>();
  c.hidden = cfg.at("hidden").get<int>();
  c.n_task_experts = cfg.at("n_task_experts").get<int>();
  c.n_domain_experts = cfg.at("n_domain_experts").get<int>();
  c.top_k = cfg.at("top_k").get<int>();
  c.decoder_v = cfg.at("decoder_v").get<int>();
  c.latent_m = cfg.at("latent_m").get<int>();
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.batch_size = cfg.at("batch_size").get<int>();
  c.epochs = cfg.at("epochs").get<int>();
  c.patience = cfg.at("patience").get<int>();
  c.adam.lr = hex_to_double(cfg.at("adam_lr").get<std::string>());
  c.adam.beta1 = hex_to_double(cfg.at("adam_beta1").get<std::string>());
  c.adam.beta2 = hex_to_double(cfg.at("adam_beta2").get<std::string>());
  c.adam.eps = hex_to_double(cfg.at("adam_eps").get<std::string>());
  c.dense_gate = cfg.at("dense_gate").get<bool>();
  c.use_physical_latent = cfg.at("use_physical_latent").get<bool>();
  c.use_virtual_latent = cfg.at("use_virtual_latent").get<bool>();
  const auto& dj = j.at("dims");
  data::Dims dims;
  dims.n_users = dj.at("n_users").get<int>();
  dims.n_services = dj.at("n_services").get<int>();
  dims.n_user_cities = dj.at("n_user_cities").get<int>();
  dims.n_user_as = dj.at("n_user_as").get<int>();
  dims.n_service_cities = dj.at("n_service_cities").get<int>();
  dims.n_service_as = dj.at("n_service_as").get<int>();

  LoadedNetwork out{R2slNetwork(c, dims), j.value("latent_hash", ""), {}};
  const auto& params = j.at("params");
  for (nn::Param* p : out.net.params()) {
    if (!params.contains(p->name))
      throw DataError("network document: missing tensor " + p->name);
    param_from_json(params.at(p->name), *p);
  }
  for (const auto& e : j.at("history")) {
    EpochStats s;
    s.train_loss = hex_to_double(e.at("train_loss").get<std::string>());
    s.valid_mae = hex_to_double(e.at("valid_mae").get<std::string>());
    s.valid_rmse = hex_to_double(e.at("valid_rmse").get<std::string>());
    out.history.history.push_back(s);
  }
  out.history.best_epoch = j.value("best_epoch", 0);
  return out;
}

}  // namespace r2sl::model
