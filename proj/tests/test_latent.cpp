#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "r2sl/dataset.hpp"
#include "r2sl/errors.hpp"
#include "r2sl/latent.hpp"
#include "r2sl/rng.hpp"

using namespace r2sl;

namespace {

latent::StateMatrix random_stochastic(int m, int n, Rng& rng) {
  latent::StateMatrix sm;
  sm.m = m;
  sm.n_regions = n;
  sm.data.resize(static_cast<std::size_t>(m) * n);
  for (int q = 0; q < n; ++q) {
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      sm.at(j, q) = rng.uniform(0.1, 1.0);
      z += sm.at(j, q);
    }
    for (int j = 0; j < m; ++j) sm.at(j, q) /= z;
  }
  return sm;
}

latent::RegionalLatentModel random_model(int m, const data::Dims& dims,
                                         std::uint64_t seed) {
  Rng rng(seed);
  latent::RegionalLatentModel model;
  model.theta_u = random_stochastic(m, dims.n_user_cities, rng);
  model.theta_s = random_stochastic(m, dims.n_service_cities, rng);
  model.delta_u = random_stochastic(m, dims.n_user_as, rng);
  model.delta_s = random_stochastic(m, dims.n_service_as, rng);
  model.c_u.resize(m);
  model.c_s.resize(m);
  for (int j = 0; j < m; ++j) {
    model.c_u[j] = rng.uniform(0.2, 3.0);
    model.c_s[j] = rng.uniform(0.2, 3.0);
  }
  model.w = 50.0;
  model.config.m = m;
  return model;
}

data::QosRecord make_record(double value, int uc, int ua, int sc, int sa) {
  data::QosRecord r;
  r.value = value;
  r.user_city = uc;
  r.user_as = ua;
  r.service_city = sc;
  r.service_as = sa;
  return r;
}

// Direct evaluation of the posterior without log-space tricks, for oracles.
std::vector<double> brute_posterior(const data::QosRecord& rec,
                                    const latent::RegionalLatentModel& model) {
  int m = model.config.m;
  std::vector<double> g(static_cast<std::size_t>(m) * m);
  double z = 0.0;
  for (int j = 0; j < m; ++j) {
    for (int k = 0; k < m; ++k) {
      double inv = model.c_u[j] * model.c_s[k];
      if (rec.value >= model.config.eta) inv *= model.w;
      double lambda = 1.0 / inv;
      double tau = model.delta_u.at(j, rec.user_as) * model.delta_s.at(k, rec.service_as) *
                   model.theta_u.at(j, rec.user_city) *
                   model.theta_s.at(k, rec.service_city);
      g[static_cast<std::size_t>(j) * m + k] = tau * lambda * std::exp(-rec.value * lambda);
      z += g[static_cast<std::size_t>(j) * m + k];
    }
  }
  for (auto& v : g) v /= z;
  return g;
}

double brute_log_likelihood(const std::vector<data::QosRecord>& records,
                            const latent::RegionalLatentModel& model) {
  int m = model.config.m;
  double total = 0.0;
  for (const auto& rec : records) {
    double mass = 0.0;
    for (int j = 0; j < m; ++j) {
      for (int k = 0; k < m; ++k) {
        double inv = model.c_u[j] * model.c_s[k];
        if (rec.value >= model.config.eta) inv *= model.w;
        double lambda = 1.0 / inv;
        double tau = model.delta_u.at(j, rec.user_as) *
                     model.delta_s.at(k, rec.service_as) *
                     model.theta_u.at(j, rec.user_city) *
                     model.theta_s.at(k, rec.service_city);
        mass += tau * lambda * std::exp(-rec.value * lambda);
      }
    }
    total += std::log(mass);
  }
  return total;
}

void check_stochastic(const latent::StateMatrix& sm) {
  for (int q = 0; q < sm.n_regions; ++q) {
    double z = 0.0;
    for (int j = 0; j < sm.m; ++j) {
      CHECK(sm.at(j, q) >= 0.0);
      z += sm.at(j, q);
    }
    CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
  }
}

}  // namespace

TEST_CASE("exponential density values") {
  CHECK(latent::exp_pdf(0.0, 2.0) == 2.0);
  CHECK(latent::exp_pdf(1.0, 1.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(latent::exp_pdf(0.5, 2.0) == doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(latent::exp_pdf(1.0, 0.0), NumericalError);
}

TEST_CASE("rate applies the slow-branch penalty") {
  data::Dims dims{4, 4, 2, 2, 2, 2};
  auto model = random_model(2, dims, 1);
  model.c_u = {2.0, 1.0};
  model.c_s = {3.0, 1.0};
  model.w = 50.0;
  model.config.eta = 2.5;
  CHECK(latent::rate(0, 0, 1.0, model) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(latent::rate(0, 0, 10.0, model) == doctest::Approx(1.0 / 300.0).epsilon(1e-12));
  CHECK(latent::rate(1, 1, 1.0, model) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mixture weight is the four-way product") {
  data::Dims dims{4, 4, 2, 2, 2, 2};
  auto model = random_model(2, dims, 2);
  auto rec = make_record(1.0, 0, 1, 1, 0);
  double expected = model.delta_u.at(0, 1) * model.delta_s.at(1, 0) *
                    model.theta_u.at(0, 0) * model.theta_s.at(1, 1);
  CHECK(latent::mixture_weight(rec, 0, 1, model) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log likelihood matches brute force") {
  data::Dims dims{4, 4, 3, 2, 3, 2};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto model = random_model(2, dims, seed);
    std::vector<data::QosRecord> recs = {make_record(0.4, 0, 1, 2, 0),
                                         make_record(3.1, 1, 0, 0, 1),
                                         make_record(1.7, 2, 1, 1, 1)};
    CHECK(latent::log_likelihood(recs, model) ==
          doctest::Approx(brute_log_likelihood(recs, model)).epsilon(1e-12));
  }
}

TEST_CASE("log likelihood is additive over duplicate records") {
  data::Dims dims{4, 4, 2, 2, 2, 2};
  auto model = random_model(2, dims, 3);
  auto rec = make_record(0.9, 0, 0, 1, 1);
  double one = latent::log_likelihood({rec}, model);
  double two = latent::log_likelihood({rec, rec}, model);
  CHECK(two == doctest::Approx(2.0 * one).epsilon(1e-12));
}

TEST_CASE("e-step matches the brute-force posterior oracle") {
  data::Dims dims{4, 4, 3, 2, 3, 2};
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    int m = 1 + static_cast<int>(seed % 3);
    auto model = random_model(m, dims, seed);
    std::vector<data::QosRecord> recs;
    Rng rng(seed * 13);
    for (int i = 0; i < 10; ++i)
      recs.push_back(make_record(rng.uniform(0.05, 8.0), static_cast<int>(rng.index(3)),
                                 static_cast<int>(rng.index(2)),
                                 static_cast<int>(rng.index(3)),
                                 static_cast<int>(rng.index(2))));
    auto resp = latent::e_step(recs, model);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      auto oracle = brute_posterior(recs[i], model);
      double total = 0.0;
      for (int j = 0; j < m; ++j) {
        for (int k = 0; k < m; ++k) {
          CHECK(std::abs(resp.at(i, j, k) - oracle[static_cast<std::size_t>(j) * m + k]) <
                1e-10);
          total += resp.at(i, j, k);
        }
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("e-step degenerate cases") {
  data::Dims dims{4, 4, 1, 1, 1, 1};
  auto model = random_model(1, dims, 4);
  auto resp = latent::e_step({make_record(0.5, 0, 0, 0, 0)}, model);
  CHECK(resp.at(0, 0, 0) == 1.0);

  // full symmetry: uniform posterior
  auto sym = random_model(2, dims, 5);
  for (auto* sm : {&sym.theta_u, &sym.theta_s, &sym.delta_u, &sym.delta_s})
    std::fill(sm->data.begin(), sm->data.end(), 0.5);
  sym.c_u = {1.0, 1.0};
  sym.c_s = {1.0, 1.0};
  auto r2 = latent::e_step({make_record(0.5, 0, 0, 0, 0)}, sym);
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k)
      CHECK(r2.at(0, j, k) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("m-step concentrates columns per hand-computed indicator sums") {
  data::Dims dims{4, 4, 2, 1, 1, 1};
  auto model = random_model(2, dims, 6);
  std::vector<data::QosRecord> recs = {make_record(0.5, 0, 0, 0, 0),
                                       make_record(0.5, 1, 0, 0, 0)};
  latent::Responsibilities resp;
  resp.m = 2;
  // record 0 fully on j=0, record 1 fully on j=1; k marginal split evenly
  resp.g = {0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5};
  auto ms = latent::m_step(recs, resp, model);
  CHECK(ms.theta_u.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ms.theta_u.at(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ms.theta_u.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ms.theta_u.at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
  // both records share user AS 0; marginal over j is (0.5, 0.5) summed twice
  CHECK(ms.delta_u.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  check_stochastic(ms.theta_u);
  check_stochastic(ms.theta_s);
  check_stochastic(ms.delta_u);
  check_stochastic(ms.delta_s);
}

TEST_CASE("m-step falls back to uniform for unseen regions") {
  data::Dims dims{4, 4, 3, 1, 1, 1};  // city 2 never observed
  auto model = random_model(2, dims, 7);
  std::vector<data::QosRecord> recs = {make_record(0.5, 0, 0, 0, 0)};
  latent::Responsibilities resp;
  resp.m = 2;
  resp.g = {0.25, 0.25, 0.25, 0.25};
  auto ms = latent::m_step(recs, resp, model);
  CHECK(ms.theta_u.at(0, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ms.theta_u.at(1, 2) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gd gradient matches central differences of the expected objective") {
  data::Dims dims{6, 6, 3, 2, 3, 2};
  auto model = random_model(2, dims, 8);
  Rng rng(99);
  std::vector<data::QosRecord> recs;
  for (int i = 0; i < 20; ++i)
    recs.push_back(make_record(rng.uniform(0.05, 6.0), static_cast<int>(rng.index(3)),
                               static_cast<int>(rng.index(2)),
                               static_cast<int>(rng.index(3)),
                               static_cast<int>(rng.index(2))));
  auto resp = latent::e_step(recs, model);

  // analytic gradient of Q w.r.t. c_u[j]: sum over weighted terms of (t*lambda - 1)/c
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    auto cu_hi = model.c_u, cu_lo = model.c_u;
    cu_hi[j] += h;
    cu_lo[j] -= h;
    double num = (latent::q_complexity(recs, resp, cu_hi, model.c_s, model.w,
                                       model.config.eta) -
                  latent::q_complexity(recs, resp, cu_lo, model.c_s, model.w,
                                       model.config.eta)) /
                 (2.0 * h);
    double ana = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      for (int k = 0; k < 2; ++k) {
        double inv = model.c_u[j] * model.c_s[k];
        if (recs[i].value >= model.config.eta) inv *= model.w;
        ana += resp.at(i, j, k) * (recs[i].value / inv - 1.0) / model.c_u[j];
      }
    }
    CHECK(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}) < 1e-5);
  }
}

TEST_CASE("gd step at the single-state optimum barely moves") {
  data::Dims dims{4, 4, 1, 1, 1, 1};
  auto model = random_model(1, dims, 9);
  model.config.eta = std::numeric_limits<double>::infinity();
  model.config.learning_rate = 1e-3;
  Rng rng(123);
  std::vector<data::QosRecord> recs;
  double sum = 0.0;
  for (int i = 0; i < 5000; ++i) {
    double t = rng.exponential(2.0);
    recs.push_back(make_record(t, 0, 0, 0, 0));
    sum += t;
  }
  double mean = sum / 5000.0;
  model.c_u = {mean};
  model.c_s = {1.0};  // c_u * c_s = sample mean, the closed-form optimum
  auto resp = latent::e_step(recs, model);
  auto gd = latent::gd_step(recs, resp, model);
  CHECK(std::abs(gd.c_u[0] - model.c_u[0]) < model.config.learning_rate * 1e-3);
}

TEST_CASE("gd step with zero learning rate is a no-op") {
  data::Dims dims{4, 4, 2, 2, 2, 2};
  auto model = random_model(2, dims, 10);
  model.config.learning_rate = 0.0;
  std::vector<data::QosRecord> recs = {make_record(0.7, 0, 0, 0, 0),
                                       make_record(4.0, 1, 1, 1, 1)};
  auto resp = latent::e_step(recs, model);
  auto gd = latent::gd_step(recs, resp, model);
  CHECK(gd.c_u == model.c_u);
  CHECK(gd.c_s == model.c_s);
  CHECK(gd.w == model.w);
}

TEST_CASE("gd backtracking never decreases the expected objective") {
  data::Dims dims{6, 6, 3, 2, 3, 2};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto model = random_model(3, dims, seed + 40);
    model.config.learning_rate = 0.5;  // aggressive step to force backtracking
    Rng rng(seed * 7);
    std::vector<data::QosRecord> recs;
    for (int i = 0; i < 50; ++i)
      recs.push_back(make_record(rng.uniform(0.05, 10.0), static_cast<int>(rng.index(3)),
                                 static_cast<int>(rng.index(2)),
                                 static_cast<int>(rng.index(3)),
                                 static_cast<int>(rng.index(2))));
    auto resp = latent::e_step(recs, model);
    double before = latent::q_complexity(recs, resp, model.c_u, model.c_s, model.w,
                                         model.config.eta);
    auto gd = latent::gd_step(recs, resp, model);
    double after =
        latent::q_complexity(recs, resp, gd.c_u, gd.c_s, gd.w, model.config.eta);
    CHECK(after >= before - 1e-10);
  }
}

TEST_CASE("em iterations are monotone with gd disabled") {
  auto spec = data::make_regional_synth_spec(3, 40, 80, 4, 3, 5, 4, 3000, 21);
  auto synth = data::synthesize(spec);
  latent::LatentConfig config;
  config.m = 3;
  config.learning_rate = 0.0;
  config.max_iters = 30;
  config.gamma = 1e-12;  // force the full iteration budget
  auto model = latent::fit(synth.records, data::infer_dims(synth.records), config);
  REQUIRE(model.fit_log.size() >= 2);
  for (std::size_t i = 1; i < model.fit_log.size(); ++i)
    CHECK(model.fit_log[i] >= model.fit_log[i - 1] - 1e-8);
}

TEST_CASE("fit improves held-out likelihood and keeps invariants") {
  auto spec = data::make_regional_synth_spec(3, 40, 100, 5, 4, 5, 4, 10000, 33);
  auto synth = data::synthesize(spec);
  std::vector<data::QosRecord> train(synth.records.begin(), synth.records.begin() + 8000);
  std::vector<data::QosRecord> held(synth.records.begin() + 8000, synth.records.end());

  latent::LatentConfig config;
  config.m = 3;
  config.max_iters = 60;
  auto dims = data::infer_dims(synth.records);
  auto init = latent::init_model(dims, config, 1.0);
  auto fitted = latent::fit(train, dims, config);
  CHECK(latent::log_likelihood(held, fitted) > latent::log_likelihood(held, init));
  check_stochastic(fitted.theta_u);
  check_stochastic(fitted.theta_s);
  check_stochastic(fitted.delta_u);
  check_stochastic(fitted.delta_s);
  for (double c : fitted.c_u) CHECK(c >= config.param_floor);
  for (double c : fitted.c_s) CHECK(c >= config.param_floor);
}

TEST_CASE("data-driven init brackets the observed value scale") {
  auto spec = data::make_regional_synth_spec(3, 40, 100, 5, 4, 5, 4, 10000, 33);
  auto synth = data::synthesize(spec);
  auto dims = data::infer_dims(synth.records);
  latent::LatentConfig config;
  config.m = 3;
  auto model = latent::init_model(synth.records, dims, config);

  std::vector<double> vals;
  for (const auto& r : synth.records) vals.push_back(r.value);
  std::sort(vals.begin(), vals.end());
  // c_u[j]*c_s[j] should sit near the (2j+1)/6 quantile (exponential-median
  // corrected); the jitter is bounded by e^0.05 per factor
  for (int j = 0; j < 3; ++j) {
    double q = vals[static_cast<std::size_t>((2 * j + 1) / 6.0 * vals.size())];
    double got = model.c_u[j] * model.c_s[j] * std::log(2.0);
    CHECK(got == doctest::Approx(q).epsilon(0.12));
    CHECK(model.c_u[j] > 0.0);
  }
  // ascending scales, and determinism
  CHECK(model.c_u[0] < model.c_u[1]);
  CHECK(model.c_u[1] < model.c_u[2]);
  auto again = latent::init_model(synth.records, dims, config);
  CHECK(again.c_u == model.c_u);
  CHECK(again.c_s == model.c_s);
  CHECK_THROWS_AS(latent::init_model({}, dims, config), DataError);
}

TEST_CASE("single-state fit recovers the sample-mean structure") {
  data::SynthSpec spec;
  spec.m = 1;
  spec.n_users = 20;
  spec.n_services = 20;
  spec.theta_u = {1.0};
  spec.theta_s = {1.0};
  spec.delta_u = {1.0};
  spec.delta_s = {1.0};
  spec.c_u = {1.2};
  spec.c_s = {1.0};
  spec.w = 50.0;
  spec.eta = std::numeric_limits<double>::infinity();
  spec.value_cap = std::numeric_limits<double>::infinity();
  spec.n_records = 50000;
  spec.seed = 77;
  auto synth = data::synthesize(spec);

  latent::LatentConfig config;
  config.m = 1;
  config.eta = std::numeric_limits<double>::infinity();
  config.max_iters = 400;
  config.learning_rate = 0.05;
  config.gamma = 1e-10;
  auto model = latent::fit(synth.records, data::infer_dims(synth.records), config);
  double sum = 0.0;
  for (const auto& r : synth.records) sum += r.value;
  double sample_mean = sum / static_cast<double>(synth.records.size());
  CHECK(std::abs(model.c_u[0] * model.c_s[0] - sample_mean) / sample_mean < 0.05);
}

TEST_CASE("fit is deterministic") {
  auto spec = data::make_regional_synth_spec(2, 20, 40, 3, 2, 4, 3, 2000, 55);
  auto synth = data::synthesize(spec);
  latent::LatentConfig config;
  config.m = 2;
  config.max_iters = 20;
  auto dims = data::infer_dims(synth.records);
  auto a = latent::fit(synth.records, dims, config);
  auto b = latent::fit(synth.records, dims, config);
  CHECK(a.fit_log == b.fit_log);
  CHECK(a.c_u == b.c_u);
  CHECK(a.theta_u.data == b.theta_u.data);
}

TEST_CASE("state relabeling leaves the likelihood unchanged") {
  data::Dims dims{6, 6, 3, 2, 3, 2};
  auto model = random_model(3, dims, 60);
  Rng rng(61);
  std::vector<data::QosRecord> recs;
  for (int i = 0; i < 30; ++i)
    recs.push_back(make_record(rng.uniform(0.05, 8.0), static_cast<int>(rng.index(3)),
                               static_cast<int>(rng.index(2)),
                               static_cast<int>(rng.index(3)),
                               static_cast<int>(rng.index(2))));
  double base = latent::log_likelihood(recs, model);

  // cycle user-side states (0,1,2) -> (1,2,0); service side stays put
  auto permuted = model;
  std::vector<int> perm = {1, 2, 0};
  for (int q = 0; q < 3; ++q) {
    for (int j = 0; j < 3; ++j) {
      permuted.theta_u.at(perm[j], q) = model.theta_u.at(j, q);
    }
  }
  for (int q = 0; q < 2; ++q)
    for (int j = 0; j < 3; ++j) permuted.delta_u.at(perm[j], q) = model.delta_u.at(j, q);
  for (int j = 0; j < 3; ++j) permuted.c_u[perm[j]] = model.c_u[j];
  CHECK(latent::log_likelihood(recs, permuted) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("latent feature vector stacks the four columns") {
  data::Dims dims{4, 4, 2, 2, 2, 2};
  auto model = random_model(2, dims, 70);
  auto f = latent::latent_features(model, 1, 0, 0, 1);
  REQUIRE(f.size() == 8);
  CHECK(f[0] == model.theta_u.at(0, 1));
  CHECK(f[1] == model.theta_u.at(1, 1));
  CHECK(f[2] == model.delta_u.at(0, 0));
  CHECK(f[4] == model.theta_s.at(0, 0));
  CHECK(f[6] == model.delta_s.at(0, 1));

  auto single = random_model(1, data::Dims{2, 2, 1, 1, 1, 1}, 71);
  for (auto* sm : {&single.theta_u, &single.theta_s, &single.delta_u, &single.delta_s})
    std::fill(sm->data.begin(), sm->data.end(), 1.0);
  auto f1 = latent::latent_features(single, 0, 0, 0, 0);
  CHECK(f1 == std::vector<double>{1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("model persistence round-trips exactly") {
  auto spec = data::make_regional_synth_spec(2, 20, 40, 3, 2, 4, 3, 1500, 81);
  auto synth = data::synthesize(spec);
  latent::LatentConfig config;
  config.m = 2;
  config.max_iters = 10;
  auto model = latent::fit(synth.records, data::infer_dims(synth.records), config);
  std::string path = "latent_roundtrip_test.json";
  latent::save_model(path, model);
  auto back = latent::load_model(path);
  CHECK(back.theta_u.data == model.theta_u.data);
  CHECK(back.theta_s.data == model.theta_s.data);
  CHECK(back.delta_u.data == model.delta_u.data);
  CHECK(back.delta_s.data == model.delta_s.data);
  CHECK(back.c_u == model.c_u);
  CHECK(back.c_s == model.c_s);
  CHECK(back.w == model.w);
  CHECK(back.fit_log == model.fit_log);
  std::remove(path.c_str());
}
