#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "r2sl/dataset.hpp"
#include "r2sl/errors.hpp"
#include "r2sl/experiment.hpp"
#include "r2sl/jsonio.hpp"

using namespace r2sl;
namespace fs = std::filesystem;

namespace {

experiment::ExperimentConfig small_config() {
  experiment::ExperimentConfig cfg;
  cfg.densities = {0.2, 0.3};
  cfg.valid_frac = 0.2;
  cfg.seeds = {1, 2};
  cfg.methods = {"upcc", "mean"};
  cfg.latent.m = 2;
  cfg.latent.max_iters = 10;
  cfg.network.embed_dim = 4;
  cfg.network.hidden = 8;
  cfg.network.latent_m = 2;
  cfg.network.decoder_v = 3;
  cfg.network.epochs = 3;
  cfg.network.batch_size = 64;
  cfg.out_dir = "";
  return cfg;
}

std::vector<data::QosRecord> small_records() {
  auto spec = data::make_regional_synth_spec(2, 15, 30, 3, 2, 4, 3, 1500, 42);
  return data::synthesize(spec).records;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("method names are validated") {
  CHECK(experiment::is_known_method("r2sl"));
  CHECK(experiment::is_known_method("r2sl_no_latent"));
  CHECK(experiment::is_known_method("upcc"));
  CHECK(!experiment::is_known_method("svd"));

  auto cfg = small_config();
  cfg.methods = {"svd"};
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = small_config();
  cfg.densities = {0.9};  // 0.9 + 0.2 valid > 1
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("method name maps onto network ablation flags") {
  model::NetworkConfig base;
  auto dense = experiment::method_network_config(base, "r2sl_dense_gate");
  CHECK(dense.dense_gate);
  auto no_phys = experiment::method_network_config(base, "r2sl_no_physical");
  CHECK(!no_phys.use_physical_latent);
  CHECK(no_phys.use_virtual_latent);
  auto no_virt = experiment::method_network_config(base, "r2sl_no_virtual");
  CHECK(no_virt.use_physical_latent);
  CHECK(!no_virt.use_virtual_latent);
  auto none = experiment::method_network_config(base, "r2sl_no_latent");
  CHECK(!none.use_physical_latent);
  CHECK(!none.use_virtual_latent);
  auto plain = experiment::method_network_config(base, "r2sl");
  CHECK(plain.use_physical_latent);
  CHECK_THROWS_AS(experiment::method_network_config(base, "upcc"), UsageError);
}

TEST_CASE("config json round-trip preserves the hash") {
  auto cfg = small_config();
  cfg.records_path = "some/records.csv";
  auto j = experiment::config_to_json(cfg);
  auto back = experiment::config_from_json(j);
  CHECK(experiment::config_hash(back) == experiment::config_hash(cfg));
  CHECK(back.densities == cfg.densities);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.methods == cfg.methods);
  CHECK(back.latent.m == cfg.latent.m);
  CHECK(back.network.embed_dim == cfg.network.embed_dim);
}

TEST_CASE("config hash tracks semantic fields only") {
  auto a = small_config();
  auto b = small_config();
  CHECK(experiment::config_hash(a) == experiment::config_hash(b));
  b.out_dir = "elsewhere";  // artifact location, not semantics
  CHECK(experiment::config_hash(a) == experiment::config_hash(b));
  b = small_config();
  b.seeds = {1, 3};
  CHECK(experiment::config_hash(a) != experiment::config_hash(b));
  b = small_config();
  b.network.top_k = 1;
  CHECK(experiment::config_hash(a) != experiment::config_hash(b));
}

TEST_CASE("grid arithmetic: methods x densities x seeds result rows") {
  auto cfg = small_config();
  auto records = small_records();
  auto result = experiment::run_experiment(cfg, records);
  CHECK(result.cells.size() == 8);  // 2 densities x 2 seeds x 2 methods
  // fixed grid order: density-major, then seed, then method
  CHECK(result.cells[0].metrics.method == "upcc");
  CHECK(result.cells[1].metrics.method == "mean");
  CHECK(result.cells[0].metrics.seed == 1);
  CHECK(result.cells[2].metrics.seed == 2);
  CHECK(result.cells[0].metrics.split == experiment::split_label("rt", 0.2));
  CHECK(result.cells[4].metrics.split == experiment::split_label("rt", 0.3));
  for (const auto& c : result.cells) {
    CHECK(!c.failed);
    CHECK(c.metrics.n > 0);
    CHECK(c.metrics.mae <= c.metrics.rmse + 1e-12);
  }

  auto csv = experiment::results_to_csv(result);
  CHECK(csv.rfind("method,split,seed,mae,rmse,n,status\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 9);

  auto md = experiment::summary_markdown(cfg, result);
  CHECK(md.find("upcc") != std::string::npos);
  CHECK(md.find("mean") != std::string::npos);
  CHECK(md.find(result.config_hash) != std::string::npos);
}

TEST_CASE("experiment rerun is deterministic") {
  auto cfg = small_config();
  auto records = small_records();
  auto a = experiment::run_experiment(cfg, records);
  auto b = experiment::run_experiment(cfg, records);
  REQUIRE(a.cells.size() == b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].metrics.mae == b.cells[i].metrics.mae);
    CHECK(a.cells[i].metrics.rmse == b.cells[i].metrics.rmse);
  }
  CHECK(experiment::results_to_csv(a) == experiment::results_to_csv(b));
}

TEST_CASE("latent fits are cached by records and config") {
  auto records = small_records();
  std::vector<data::QosRecord> train(records.begin(), records.begin() + 500);
  auto dims = data::infer_dims(records);
  latent::LatentConfig lc;
  lc.m = 2;
  lc.max_iters = 8;

  std::string cache = "latent_cache_test_dir";
  fs::remove_all(cache);
  auto a = experiment::fit_latent_cached(train, dims, lc, cache);
  REQUIRE(fs::exists(cache));
  std::size_t files = std::distance(fs::directory_iterator(cache), fs::directory_iterator());
  CHECK(files == 1);
  auto b = experiment::fit_latent_cached(train, dims, lc, cache);
  files = std::distance(fs::directory_iterator(cache), fs::directory_iterator());
  CHECK(files == 1);  // reused, not refit
  CHECK(a.c_u == b.c_u);
  CHECK(a.fit_log == b.fit_log);

  lc.max_iters = 9;  // config change -> new cache entry
  experiment::fit_latent_cached(train, dims, lc, cache);
  files = std::distance(fs::directory_iterator(cache), fs::directory_iterator());
  CHECK(files == 2);
  fs::remove_all(cache);
}

TEST_CASE("prepare command emits a golden csv") {
  std::string dir = "cli_prepare_test_dir";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream(dir + "/matrix.txt") << "0.3 -1\n1.2 25.0\n";
    std::ofstream(dir + "/users.tsv") << "id\tcity\tas\n0\tberlin\tAS100\n1\tparis\tAS200\n";
    std::ofstream(dir + "/services.tsv") << "0\ttokyo\tAS300\n1\tosaka\tAS300\n";
  }
  experiment::PrepareArgs args;
  args.matrix = dir + "/matrix.txt";
  args.user_meta = dir + "/users.tsv";
  args.service_meta = dir + "/services.tsv";
  args.out = dir + "/records.csv";
  experiment::cmd_prepare(args);
  auto records = data::load_records_csv(dir + "/records.csv");
  REQUIRE(records.size() == 2);  // sentinel and over-cap cells dropped
  CHECK(records[0].user_id == 0);
  CHECK(records[0].service_id == 0);
  CHECK(records[0].value == 0.3);
  CHECK(records[0].user_city == 0);   // berlin
  CHECK(records[0].service_city == 1);  // tokyo sorts after osaka
  CHECK(records[1].user_id == 1);
  CHECK(records[1].value == 1.2);
  CHECK(records[1].user_city == 1);  // paris
  fs::remove_all(dir);
}

TEST_CASE("command pipeline end to end with byte-identical reruns") {
  std::string dir = "cli_pipeline_test_dir";
  fs::remove_all(dir);
  fs::create_directories(dir);

  experiment::SynthArgs synth;
  synth.out = dir + "/records.csv";
  synth.m = 2;
  synth.users = 12;
  synth.services = 25;
  synth.user_cities = 3;
  synth.user_as = 2;
  synth.service_cities = 4;
  synth.service_as = 3;
  synth.n_records = 1200;
  synth.seed = 7;
  experiment::cmd_synth(synth);
  std::string records_a = slurp(synth.out);
  experiment::cmd_synth(synth);
  CHECK(slurp(synth.out) == records_a);

  std::ofstream(dir + "/latent.json")
      << R"({"m": 2, "max_iters": 10})";
  experiment::FitLatentArgs fl;
  fl.records = synth.out;
  fl.config = dir + "/latent.json";
  fl.out = dir + "/latent_model.json";
  experiment::cmd_fit_latent(fl);
  std::string latent_a = slurp(fl.out);
  experiment::cmd_fit_latent(fl);
  CHECK(slurp(fl.out) == latent_a);

  std::ofstream(dir + "/net.json") << R"({
    "network": {"embed_dim": 4, "hidden": 8, "decoder_v": 3, "latent_m": 2,
                "epochs": 3, "batch_size": 64},
    "loss": {"kind": "s_huber", "varsigma": 0.5, "psi": 0.05}
  })";
  experiment::TrainArgs tr;
  tr.records = synth.out;
  tr.latent = fl.out;
  tr.config = dir + "/net.json";
  tr.out = dir + "/network.json";
  experiment::cmd_train(tr);
  std::string net_a = slurp(tr.out);
  experiment::cmd_train(tr);
  CHECK(slurp(tr.out) == net_a);

  experiment::EvaluateArgs ev;
  ev.models = {tr.out};
  ev.latent = fl.out;
  ev.records = synth.out;
  ev.out = dir + "/metrics.csv";
  experiment::cmd_evaluate(ev);
  std::string metrics = slurp(ev.out);
  CHECK(metrics.rfind("method,split,seed,mae,rmse,n\n", 0) == 0);

  experiment::GateStatsArgs gs;
  gs.model = tr.out;
  gs.latent = fl.out;
  gs.user = 0;
  gs.service = 3;
  gs.out = dir + "/activation.csv";
  experiment::cmd_gate_stats(gs);
  auto activation = slurp(gs.out);
  CHECK(activation.rfind("expert_id,expert_kind,mean_weight,activation_rate\n", 0) == 0);
  std::size_t rows = 0;
  for (char ch : activation)
    if (ch == '\n') ++rows;
  CHECK(rows == 5);  // header + one row per expert (N = 4)

  fs::remove_all(dir);
}

TEST_CASE("experiment command writes the full artifact set deterministically") {
  std::string dir = "cli_experiment_test_dir";
  fs::remove_all(dir);
  fs::create_directories(dir);

  experiment::SynthArgs synth;
  synth.out = dir + "/records.csv";
  synth.m = 2;
  synth.users = 12;
  synth.services = 25;
  synth.user_cities = 3;
  synth.user_as = 2;
  synth.service_cities = 4;
  synth.service_as = 3;
  synth.n_records = 1200;
  synth.seed = 8;
  experiment::cmd_synth(synth);

  auto cfg = small_config();
  cfg.records_path = synth.out;
  cfg.densities = {0.3};
  cfg.seeds = {1, 2};
  cfg.methods = {"mean", "upcc"};
  cfg.out_dir = dir + "/out";
  save_json_file(dir + "/exp.json", experiment::config_to_json(cfg));

  experiment::ExperimentArgs args;
  args.config = dir + "/exp.json";
  experiment::cmd_experiment(args);
  REQUIRE(fs::exists(cfg.out_dir + "/results.csv"));
  REQUIRE(fs::exists(cfg.out_dir + "/summary.md"));
  REQUIRE(fs::exists(cfg.out_dir + "/run.json"));
  std::string results_a = slurp(cfg.out_dir + "/results.csv");
  std::size_t rows = 0;
  for (char ch : results_a)
    if (ch == '\n') ++rows;
  CHECK(rows == 5);  // header + 1 density x 2 seeds x 2 methods

  experiment::cmd_experiment(args);
  CHECK(slurp(cfg.out_dir + "/results.csv") == results_a);
  fs::remove_all(dir);
}

TEST_CASE("missing files raise data errors") {
  experiment::FitLatentArgs fl;
  fl.records = "no_such_file.csv";
  fl.out = "unused.json";
  CHECK_THROWS_AS(experiment::cmd_fit_latent(fl), DataError);
}
