#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "r2sl/errors.hpp"
#include "r2sl/experiment.hpp"

namespace {

int dispatch(int argc, char** argv) {
  CLI::App app{"Regional latent-state QoS prediction pipeline"};
  app.require_subcommand(1);

  r2sl::experiment::PrepareArgs prepare;
  auto* prep = app.add_subcommand("prepare", "Parse a QoS matrix + metadata into records CSV");
  prep->add_option("--matrix", prepare.matrix, "matrix file")->required();
  prep->add_option("--user-meta", prepare.user_meta, "user metadata file")->required();
  prep->add_option("--service-meta", prepare.service_meta, "service metadata file")->required();
  prep->add_option("--out", prepare.out, "output records CSV")->required();
  prep->add_option("--cap", prepare.cap, "drop values above this cap");
  prep->add_option("--sentinel", prepare.sentinel, "missing-value sentinel");

  r2sl::experiment::FitLatentArgs fit_latent;
  auto* fitl = app.add_subcommand("fit-latent", "Fit the regional latent-state model");
  fitl->add_option("--records", fit_latent.records, "training records CSV")->required();
  fitl->add_option("--config", fit_latent.config, "latent config JSON");
  fitl->add_option("--out", fit_latent.out, "output model JSON")->required();

  r2sl::experiment::TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train the prediction network");
  tr->add_option("--records", train.records, "training records CSV")->required();
  tr->add_option("--valid", train.valid, "validation records CSV");
  tr->add_option("--latent", train.latent, "fitted latent model JSON")->required();
  tr->add_option("--config", train.config, "network/loss config JSON");
  tr->add_option("--out", train.out, "output network JSON")->required();

  r2sl::experiment::EvaluateArgs evaluate;
  auto* ev = app.add_subcommand("evaluate", "Evaluate trained networks on a record set");
  ev->add_option("--model", evaluate.models, "network JSON (repeatable)")->required();
  ev->add_option("--latent", evaluate.latent, "fitted latent model JSON")->required();
  ev->add_option("--records", evaluate.records, "evaluation records CSV")->required();
  ev->add_option("--method", evaluate.method, "method label for the report");
  ev->add_option("--split", evaluate.split, "split label for the report");
  ev->add_option("--out", evaluate.out, "optional metrics CSV path");

  r2sl::experiment::ExperimentArgs experiment;
  auto* ex = app.add_subcommand("experiment", "Run a density x seed x method grid");
  ex->add_option("--config", experiment.config, "experiment config JSON")->required();

  r2sl::experiment::GateStatsArgs gate_stats;
  auto* gs = app.add_subcommand("gate-stats", "Report expert activation statistics");
  gs->add_option("--model", gate_stats.model, "network JSON")->required();
  gs->add_option("--latent", gate_stats.latent, "latent model JSON (consistency check)");
  gs->add_option("--records", gate_stats.records, "records CSV to aggregate over");
  gs->add_option("--user", gate_stats.user, "single user id");
  gs->add_option("--service", gate_stats.service, "single service id");
  gs->add_option("--out", gate_stats.out, "optional activation CSV path");

  r2sl::experiment::SynthArgs synth;
  auto* sy = app.add_subcommand("synth", "Generate records from the generative model");
  sy->add_option("--out", synth.out, "output records CSV")->required();
  sy->add_option("--states", synth.m, "latent state count");
  sy->add_option("--users", synth.users, "user count");
  sy->add_option("--services", synth.services, "service count");
  sy->add_option("--user-cities", synth.user_cities, "user city count");
  sy->add_option("--user-as", synth.user_as, "user AS count");
  sy->add_option("--service-cities", synth.service_cities, "service city count");
  sy->add_option("--service-as", synth.service_as, "service AS count");
  sy->add_option("--records", synth.n_records, "record count");
  sy->add_option("--seed", synth.seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (prep->parsed()) r2sl::experiment::cmd_prepare(prepare);
  if (fitl->parsed()) r2sl::experiment::cmd_fit_latent(fit_latent);
  if (tr->parsed()) r2sl::experiment::cmd_train(train);
  if (ev->parsed()) r2sl::experiment::cmd_evaluate(evaluate);
  if (ex->parsed()) r2sl::experiment::cmd_experiment(experiment);
  if (gs->parsed()) r2sl::experiment::cmd_gate_stats(gate_stats);
  if (sy->parsed()) r2sl::experiment::cmd_synth(synth);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const r2sl::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const r2sl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const r2sl::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
