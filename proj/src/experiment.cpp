#include "r2sl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "r2sl/baseline.hpp"
#include "r2sl/errors.hpp"
#include "r2sl/jsonio.hpp"

namespace r2sl::experiment {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kMethods = {
    "r2sl",           "r2sl_dense_gate", "r2sl_no_physical",
    "r2sl_no_virtual", "r2sl_no_latent",  "upcc",
    "mean"};

double stddev(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

}  // namespace

bool is_known_method(const std::string& name) {
  return std::find(kMethods.begin(), kMethods.end(), name) != kMethods.end();
}

void ExperimentConfig::validate() const {
  if (densities.empty()) throw UsageError("experiment config: need at least one density");
  if (seeds.empty()) throw UsageError("experiment config: need at least one seed");
  if (methods.empty()) throw UsageError("experiment config: need at least one method");
  for (const auto& m : methods)
    if (!is_known_method(m)) throw UsageError("experiment config: unknown method " + m);
  for (double d : densities) {
    if (d <= 0.0 || d + valid_frac >= 1.0 + 1e-12)
      throw UsageError("experiment config: density + valid_frac must stay below 1");
  }
  if (qos_kind != "rt" && qos_kind != "tp")
    throw UsageError("experiment config: qos kind must be rt or tp");
  latent.validate();
  network.validate();
  loss_spec.validate();
}

latent::LatentConfig latent_config_from_json(const nlohmann::json& j) {
  latent::LatentConfig c;
  c.m = j.value("m", c.m);
  c.alpha = j.value("alpha", c.alpha);
  c.eta = j.value("eta", c.eta);
  c.w_init = j.value("w_init", c.w_init);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.gamma = j.value("gamma", c.gamma);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.param_floor = j.value("param_floor", c.param_floor);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json latent_config_to_json(const latent::LatentConfig& c) {
  return {{"m", c.m},
          {"alpha", c.alpha},
          {"eta", c.eta},
          {"w_init", c.w_init},
          {"learning_rate", c.learning_rate},
          {"gamma", c.gamma},
          {"max_iters", c.max_iters},
          {"param_floor", c.param_floor},
          {"seed", c.seed}};
}

model::NetworkConfig network_config_from_json(const nlohmann::json& j) {
  model::NetworkConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.n_task_experts = j.value("n_task_experts", c.n_task_experts);
  c.n_domain_experts = j.value("n_domain_experts", c.n_domain_experts);
  c.top_k = j.value("top_k", c.top_k);
  c.decoder_v = j.value("decoder_v", c.decoder_v);
  c.latent_m = j.value("latent_m", c.latent_m);
  c.seed = j.value("seed", c.seed);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.dense_gate = j.value("dense_gate", c.dense_gate);
  c.use_physical_latent = j.value("use_physical_latent", c.use_physical_latent);
  c.use_virtual_latent = j.value("use_virtual_latent", c.use_virtual_latent);
  return c;
}

nlohmann::json network_config_to_json(const model::NetworkConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"hidden", c.hidden},
          {"n_task_experts", c.n_task_experts},
          {"n_domain_experts", c.n_domain_experts},
          {"top_k", c.top_k},
          {"decoder_v", c.decoder_v},
          {"latent_m", c.latent_m},
          {"seed", c.seed},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"dense_gate", c.dense_gate},
          {"use_physical_latent", c.use_physical_latent},
          {"use_virtual_latent", c.use_virtual_latent}};
}

loss::LossSpec loss_spec_from_json(const nlohmann::json& j) {
  loss::LossSpec s;
  s.kind = loss::loss_kind_from_string(j.value("kind", "s_huber"));
  s.varsigma = j.value("varsigma", s.varsigma);
  s.psi = j.value("psi", s.psi);
  return s;
}

nlohmann::json loss_spec_to_json(const loss::LossSpec& s) {
  return {{"kind", loss::to_string(s.kind)}, {"varsigma", s.varsigma}, {"psi", s.psi}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.records_path = j.value("records", "");
  cfg.qos_kind = j.value("qos_kind", cfg.qos_kind);
  cfg.value_cap = j.value("value_cap", cfg.value_cap);
  if (j.contains("densities")) cfg.densities = j.at("densities").get<std::vector<double>>();
  cfg.valid_frac = j.value("valid_frac", cfg.valid_frac);
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("latent")) cfg.latent = latent_config_from_json(j.at("latent"));
  if (j.contains("network")) cfg.network = network_config_from_json(j.at("network"));
  if (j.contains("loss")) cfg.loss_spec = loss_spec_from_json(j.at("loss"));
  if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["records"] = cfg.records_path;
  j["qos_kind"] = cfg.qos_kind;
  j["value_cap"] = cfg.value_cap;
  j["densities"] = cfg.densities;
  j["valid_frac"] = cfg.valid_frac;
  j["seeds"] = cfg.seeds;
  j["latent"] = latent_config_to_json(cfg.latent);
  j["network"] = network_config_to_json(cfg.network);
  j["loss"] = loss_spec_to_json(cfg.loss_spec);
  j["methods"] = cfg.methods;
  j["out_dir"] = cfg.out_dir;
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // out_dir is where results land, not what they are.
  nlohmann::json j = config_to_json(cfg);
  j.erase("out_dir");
  return hash_hex(fnv1a64(j.dump()));
}

std::string split_label(const std::string& qos_kind, double density) {
  return qos_kind + ":d" + fmt(density, "%.3f");
}

model::NetworkConfig method_network_config(const model::NetworkConfig& base,
                                           const std::string& method) {
  model::NetworkConfig c = base;
  if (method == "r2sl_dense_gate") {
    c.dense_gate = true;
  } else if (method == "r2sl_no_physical") {
    c.use_physical_latent = false;
  } else if (method == "r2sl_no_virtual") {
    c.use_virtual_latent = false;
  } else if (method == "r2sl_no_latent") {
    c.use_physical_latent = false;
    c.use_virtual_latent = false;
  } else if (method != "r2sl") {
    throw UsageError("not an r2sl method: " + method);
  }
  return c;
}

latent::RegionalLatentModel fit_latent_cached(
    const std::vector<data::QosRecord>& train, const data::Dims& dims,
    const latent::LatentConfig& config, const std::string& cache_dir) {
  if (cache_dir.empty()) return latent::fit(train, dims, config);
  std::uint64_t key = fnv1a64(data::records_to_csv(train)) ^
                      fnv1a64(latent_config_to_json(config).dump());
  fs::create_directories(cache_dir);
  std::string path = (fs::path(cache_dir) / ("latent_" + hash_hex(key) + ".json")).string();
  if (fs::exists(path)) return latent::load_model(path);
  auto model = latent::fit(train, dims, config);
  latent::save_model(path, model);
  return model;
}

namespace {

loss::MetricReport evaluate_pairs(const std::vector<std::pair<double, double>>& pairs,
                                  const std::string& method, const std::string& split,
                                  std::uint64_t seed) {
  loss::MetricReport rep;
  rep.method = method;
  rep.split = split;
  rep.seed = seed;
  rep.mae = loss::mae(pairs);
  rep.rmse = loss::rmse(pairs);
  rep.n = pairs.size();
  return rep;
}

loss::MetricReport run_one_method(const ExperimentConfig& cfg, const std::string& method,
                                  const std::vector<data::QosRecord>& train,
                                  const std::vector<data::QosRecord>& valid,
                                  const std::vector<data::QosRecord>& test,
                                  const data::Dims& dims,
                                  const latent::RegionalLatentModel& latent_model,
                                  std::uint64_t seed, const std::string& split) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(test.size());
  if (method == "upcc") {
    baseline::UpccModel upcc(train, {});
    for (const auto& r : test) pairs.emplace_back(r.value, upcc.predict(r.user_id, r.service_id));
    return evaluate_pairs(pairs, method, split, seed);
  }
  if (method == "mean") {
    baseline::MeanModel mean(train, baseline::MeanLevel::global);
    for (const auto& r : test) pairs.emplace_back(r.value, mean.predict(r.user_id, r.service_id));
    return evaluate_pairs(pairs, method, split, seed);
  }
  model::NetworkConfig net_cfg = method_network_config(cfg.network, method);
  net_cfg.seed = seed;
  net_cfg.latent_m = cfg.latent.m;
  model::R2slNetwork net(net_cfg, dims);
  model::train(net, train, valid, latent_model, cfg.loss_spec);
  auto rep = model::evaluate(net, test, latent_model, method, split);
  rep.seed = seed;
  return rep;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<data::QosRecord>& records) {
  cfg.validate();
  if (records.empty()) throw DataError("experiment: empty record list");

  ExperimentResult result;
  result.config_hash = config_hash(cfg);
  data::Dims dims = data::infer_dims(records);
  std::string cache_dir = cfg.out_dir.empty() ? "" : (fs::path(cfg.out_dir) / "cache").string();

  for (double density : cfg.densities) {
    std::string split = split_label(cfg.qos_kind, density);
    for (std::uint64_t seed : cfg.seeds) {
      auto ds = data::make_splits(records.size(), density, density,
                                  1.0 - density - cfg.valid_frac, cfg.valid_frac, seed);
      auto train = data::select(records, ds.train);
      auto valid = data::select(records, ds.valid);
      auto test = data::select(records, ds.test);

      bool needs_latent = false;
      for (const auto& m : cfg.methods)
        if (m != "upcc" && m != "mean") needs_latent = true;

      latent::RegionalLatentModel latent_model;
      std::string latent_error;
      if (needs_latent) {
        latent::LatentConfig lc = cfg.latent;
        lc.seed = seed;
        try {
          latent_model = fit_latent_cached(train, dims, lc, cache_dir);
        } catch (const std::exception& e) {
          latent_error = e.what();
        }
      }

      for (const auto& method : cfg.methods) {
        CellResult cell;
        cell.metrics.method = method;
        cell.metrics.split = split;
        cell.metrics.seed = seed;
        auto t0 = std::chrono::steady_clock::now();
        try {
          bool uses_latent = method != "upcc" && method != "mean";
          if (uses_latent && !latent_error.empty())
            throw NumericalError("latent fit failed: " + latent_error);
          cell.metrics = run_one_method(cfg, method, train, valid, test, dims,
                                        latent_model, seed, split);
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.error = e.what();
        }
        cell.wall_seconds = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        result.cells.push_back(std::move(cell));
      }
    }
  }
  return result;
}

std::string results_to_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "method,split,seed,mae,rmse,n,status\n";
  for (const auto& c : result.cells) {
    out << c.metrics.method << ',' << c.metrics.split << ',' << c.metrics.seed << ',';
    if (c.failed) {
      out << "nan,nan,0,failed\n";
    } else {
      out << fmt(c.metrics.mae, "%.10g") << ',' << fmt(c.metrics.rmse, "%.10g") << ','
          << c.metrics.n << ",ok\n";
    }
  }
  return out.str();
}

std::string summary_markdown(const ExperimentConfig& cfg, const ExperimentResult& result) {
  std::ostringstream out;
  out << "# QoS prediction results (" << cfg.qos_kind << ")\n\n";
  out << "Config hash: `" << result.config_hash << "`. Values are mean ± std of test-set"
      << " metrics over " << cfg.seeds.size() << " seed(s).\n\n";
  out << "| Method |";
  for (double d : cfg.densities) out << " " << split_label(cfg.qos_kind, d) << " MAE | RMSE |";
  out << "\n|---|";
  for (std::size_t i = 0; i < cfg.densities.size(); ++i) out << "---|---|";
  out << "\n";
  for (const auto& method : cfg.methods) {
    out << "| " << method << " |";
    for (double d : cfg.densities) {
      std::string split = split_label(cfg.qos_kind, d);
      std::vector<double> maes, rmses;
      for (const auto& c : result.cells)
        if (!c.failed && c.metrics.method == method && c.metrics.split == split) {
          maes.push_back(c.metrics.mae);
          rmses.push_back(c.metrics.rmse);
        }
      if (maes.empty()) {
        out << " failed | failed |";
        continue;
      }
      double mmae = 0.0, mrmse = 0.0;
      for (double v : maes) mmae += v;
      for (double v : rmses) mrmse += v;
      mmae /= static_cast<double>(maes.size());
      mrmse /= static_cast<double>(rmses.size());
      out << " " << fmt(mmae) << " ± " << fmt(stddev(maes, mmae)) << " | " << fmt(mrmse)
          << " ± " << fmt(stddev(rmses, mrmse)) << " |";
    }
    out << "\n";
  }
  return out.str();
}

void cmd_prepare(const PrepareArgs& args) {
  auto parsed = data::parse_matrix_files(args.matrix, args.user_meta, args.service_meta,
                                         args.sentinel, args.cap);
  data::save_records_csv(args.out, parsed.records);
  auto rep = data::distribution_report(parsed.records, {1.0, 2.5, 5.0, 10.0});
  std::cout << "records: " << parsed.records.size() << " (dropped over cap: "
            << parsed.dropped_over_cap << ", nonpositive: " << parsed.dropped_nonpositive
            << ")\n";
  std::cout << "users: " << parsed.n_users << ", services: " << parsed.n_services
            << ", user cities: " << parsed.codebooks.user_city.size()
            << ", user AS: " << parsed.codebooks.user_as.size()
            << ", service cities: " << parsed.codebooks.service_city.size()
            << ", service AS: " << parsed.codebooks.service_as.size() << "\n";
  std::cout << "mean: " << fmt(rep.mean) << ", variance: " << fmt(rep.variance) << "\n";
  for (std::size_t i = 0; i < rep.bucket_edges.size(); ++i)
    std::cout << "fraction > " << rep.bucket_edges[i] << ": "
              << fmt(rep.tail_fractions[i]) << "\n";
}

void cmd_fit_latent(const FitLatentArgs& args) {
  auto records = data::load_records_csv(args.records);
  latent::LatentConfig config;
  if (!args.config.empty()) config = latent_config_from_json(load_json_file(args.config));
  auto model = latent::fit(records, data::infer_dims(records), config);
  latent::save_model(args.out, model);
  std::size_t n = model.fit_log.size();
  std::cout << "iterations: " << n << "\n";
  for (std::size_t i = n > 5 ? n - 5 : 0; i < n; ++i)
    std::cout << "  ll[" << i << "] = " << fmt(model.fit_log[i], "%.6f") << "\n";
  std::cout << "final log-likelihood: " << fmt(model.fit_log.back(), "%.6f") << "\n";
}

void cmd_train(const TrainArgs& args) {
  auto train_records = data::load_records_csv(args.records);
  std::vector<data::QosRecord> valid_records;
  if (!args.valid.empty()) valid_records = data::load_records_csv(args.valid);
  auto latent_model = latent::load_model(args.latent);

  model::NetworkConfig net_cfg;
  loss::LossSpec loss_spec;
  if (!args.config.empty()) {
    auto j = load_json_file(args.config);
    if (j.contains("network")) net_cfg = network_config_from_json(j.at("network"));
    if (j.contains("loss")) loss_spec = loss_spec_from_json(j.at("loss"));
  }
  net_cfg.latent_m = latent_model.config.m;

  auto all = train_records;
  all.insert(all.end(), valid_records.begin(), valid_records.end());
  data::Dims dims = data::infer_dims(all);

  model::R2slNetwork net(net_cfg, dims);
  auto history = model::train(net, train_records, valid_records, latent_model, loss_spec);
  std::ifstream latent_in(args.latent, std::ios::binary);
  std::ostringstream latent_bytes;
  latent_bytes << latent_in.rdbuf();
  model::save_network(args.out, net, hash_hex(fnv1a64(latent_bytes.str())), history);
  std::cout << "epochs run: " << history.history.size()
            << ", best epoch: " << history.best_epoch << "\n";
  if (!history.history.empty()) {
    const auto& last = history.history[history.best_epoch];
    std::cout << "best valid MAE: " << fmt(last.valid_mae) << ", RMSE: "
              << fmt(last.valid_rmse) << "\n";
  }
}

void cmd_evaluate(const EvaluateArgs& args) {
  if (args.models.empty()) throw UsageError("evaluate: need at least one --model");
  auto records = data::load_records_csv(args.records);
  auto latent_model = latent::load_model(args.latent);

  std::vector<loss::MetricReport> rows;
  for (const auto& path : args.models) {
    auto loaded = model::load_network(path);
    rows.push_back(model::evaluate(loaded.net, records, latent_model, args.method, args.split));
  }
  std::string csv = loss::metric_rows_to_csv(rows);
  if (!args.out.empty()) write_text_file(args.out, csv);
  std::cout << csv;
  if (rows.size() > 1) {
    std::vector<double> maes, rmses;
    for (const auto& r : rows) {
      maes.push_back(r.mae);
      rmses.push_back(r.rmse);
    }
    double mmae = 0.0, mrmse = 0.0;
    for (double v : maes) mmae += v;
    for (double v : rmses) mrmse += v;
    mmae /= static_cast<double>(maes.size());
    mrmse /= static_cast<double>(rmses.size());
    std::cout << "aggregate: MAE " << fmt(mmae) << " ± " << fmt(stddev(maes, mmae))
              << ", RMSE " << fmt(mrmse) << " ± " << fmt(stddev(rmses, mrmse)) << "\n";
  }
}

void cmd_experiment(const ExperimentArgs& args) {
  auto cfg = config_from_json(load_json_file(args.config));
  cfg.validate();
  if (cfg.records_path.empty()) throw UsageError("experiment config: missing records path");
  auto records = data::load_records_csv(cfg.records_path);
  fs::create_directories(cfg.out_dir);

  auto result = run_experiment(cfg, records);
  write_text_file((fs::path(cfg.out_dir) / "results.csv").string(), results_to_csv(result));
  write_text_file((fs::path(cfg.out_dir) / "summary.md").string(),
                  summary_markdown(cfg, result));

  nlohmann::json artifact;
  artifact["config_hash"] = result.config_hash;
  artifact["config"] = config_to_json(cfg);
  nlohmann::json timings = nlohmann::json::array();
  for (const auto& c : result.cells) {
    timings.push_back({{"method", c.metrics.method},
                       {"split", c.metrics.split},
                       {"seed", c.metrics.seed},
                       {"wall_seconds", c.wall_seconds},
                       {"status", c.failed ? "failed" : "ok"},
                       {"error", c.error}});
  }
  artifact["cells"] = timings;
  save_json_file((fs::path(cfg.out_dir) / "run.json").string(), artifact);

  std::cout << summary_markdown(cfg, result);
  for (const auto& c : result.cells)
    if (c.failed)
      std::cerr << "cell failed: " << c.metrics.method << " " << c.metrics.split << " seed "
                << c.metrics.seed << ": " << c.error << "\n";
}

void cmd_gate_stats(const GateStatsArgs& args) {
  auto loaded = model::load_network(args.model);
  if (!args.latent.empty()) {
    auto latent_model = latent::load_model(args.latent);
    if (latent_model.config.m != loaded.net.config().latent_m)
      throw DataError("gate-stats: latent model state count does not match network");
  }
  std::vector<data::QosRecord> records;
  if (!args.records.empty()) {
    records = data::load_records_csv(args.records);
  } else {
    if (args.user < 0 || args.service < 0)
      throw UsageError("gate-stats: need --records or both --user and --service");
    data::QosRecord r;
    r.user_id = args.user;
    r.service_id = args.service;
    records.push_back(r);
  }
  auto report = model::activation_stats(loaded.net, records);
  std::string csv = model::activation_report_to_csv(report);
  if (!args.out.empty()) write_text_file(args.out, csv);
  std::cout << csv;
}

void cmd_synth(const SynthArgs& args) {
  auto spec = data::make_regional_synth_spec(args.m, args.users, args.services,
                                             args.user_cities, args.user_as,
                                             args.service_cities, args.service_as,
                                             args.n_records, args.seed);
  auto synth = data::synthesize(spec);
  data::save_records_csv(args.out, synth.records);
  auto rep = data::distribution_report(synth.records, {1.0, 2.5, 5.0, 10.0});
  std::cout << "records: " << synth.records.size() << ", mean: " << fmt(rep.mean)
            << ", variance: " << fmt(rep.variance) << "\n";
}

}  // namespace r2sl::experiment
