#include "r2sl/latent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "r2sl/errors.hpp"
#include "r2sl/jsonio.hpp"
#include "r2sl/rng.hpp"

namespace r2sl::latent {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

// log tau + log phi for one record and one (j, k) pair.
double log_component(const data::QosRecord& rec, int j, int k,
                     const RegionalLatentModel& model) {
  double log_tau = safe_log(model.delta_u.at(j, rec.user_as)) +
                   safe_log(model.delta_s.at(k, rec.service_as)) +
                   safe_log(model.theta_u.at(j, rec.user_city)) +
                   safe_log(model.theta_s.at(k, rec.service_city));
  double lambda = rate(j, k, rec.value, model);
  return log_tau + std::log(lambda) - rec.value * lambda;
}

StateMatrix uniform_matrix(int m, int n_regions) {
  StateMatrix mat;
  mat.m = m;
  mat.n_regions = n_regions;
  mat.data.assign(static_cast<std::size_t>(m) * n_regions, 1.0 / m);
  return mat;
}

void jitter_columns(StateMatrix& mat, Rng& rng, double magnitude) {
  for (int q = 0; q < mat.n_regions; ++q) {
    double sum = 0.0;
    for (int j = 0; j < mat.m; ++j) {
      double v = mat.at(j, q) + magnitude * (2.0 * rng.uniform() - 1.0);
      mat.at(j, q) = std::max(v, 1e-12);
      sum += mat.at(j, q);
    }
    for (int j = 0; j < mat.m; ++j) mat.at(j, q) /= sum;
  }
}

void check_region_codes(const data::QosRecord& rec, const RegionalLatentModel& model) {
  if (rec.user_city < 0 || rec.user_city >= model.theta_u.n_regions ||
      rec.user_as < 0 || rec.user_as >= model.delta_u.n_regions ||
      rec.service_city < 0 || rec.service_city >= model.theta_s.n_regions ||
      rec.service_as < 0 || rec.service_as >= model.delta_s.n_regions) {
    throw DataError("record region code out of codebook range");
  }
}

nlohmann::json matrix_to_json(const StateMatrix& mat) {
  nlohmann::json j;
  j["m"] = mat.m;
  j["n_regions"] = mat.n_regions;
  j["data"] = dvec_to_json(mat.data);
  return j;
}

StateMatrix matrix_from_json(const nlohmann::json& j) {
  StateMatrix mat;
  mat.m = j.at("m").get<int>();
  mat.n_regions = j.at("n_regions").get<int>();
  mat.data = json_to_dvec(j.at("data"));
  if (mat.data.size() != static_cast<std::size_t>(mat.m) * mat.n_regions)
    throw DataError("latent model document: matrix size mismatch");
  return mat;
}

}  // namespace

void LatentConfig::validate() const {
  if (m < 1) throw UsageError("latent config: m must be >= 1");
  if (eta <= 0.0) throw UsageError("latent config: eta must be positive");
  if (learning_rate < 0.0) throw UsageError("latent config: learning rate must be >= 0");
  if (gamma <= 0.0 || gamma >= 1.0) throw UsageError("latent config: gamma must be in (0, 1)");
  if (max_iters < 1) throw UsageError("latent config: max_iters must be >= 1");
  if (param_floor <= 0.0) throw UsageError("latent config: param_floor must be positive");
}

double exp_pdf(double t, double lambda) {
  if (lambda <= 0.0) throw NumericalError("exp_pdf: nonpositive rate");
  return lambda * std::exp(-t * lambda);
}

double rate(int j, int k, double t, const RegionalLatentModel& model) {
  double inv = model.c_u[j] * model.c_s[k];
  if (t >= model.config.eta) inv *= model.w;
  return 1.0 / inv;
}

double mixture_weight(const data::QosRecord& rec, int j, int k,
                      const RegionalLatentModel& model) {
  check_region_codes(rec, model);
  return model.delta_u.at(j, rec.user_as) * model.delta_s.at(k, rec.service_as) *
         model.theta_u.at(j, rec.user_city) * model.theta_s.at(k, rec.service_city);
}

double log_likelihood(const std::vector<data::QosRecord>& records,
                      const RegionalLatentModel& model) {
  if (records.empty()) throw DataError("log_likelihood: empty record list");
  const int m = model.config.m;
  double total = 0.0;
  std::vector<double> logs(static_cast<std::size_t>(m) * m);
  for (const auto& rec : records) {
    check_region_codes(rec, model);
    double mx = kNegInf;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        double l = log_component(rec, j, k, model);
        logs[static_cast<std::size_t>(j) * m + k] = l;
        mx = std::max(mx, l);
      }
    if (!(mx > kNegInf))
      throw NumericalError("log_likelihood: zero mixture mass for a record");
    double s = 0.0;
    for (double l : logs) s += std::exp(l - mx);
    total += mx + std::log(s);
  }
  return total;
}

Responsibilities e_step(const std::vector<data::QosRecord>& records,
                        const RegionalLatentModel& model) {
  const int m = model.config.m;
  Responsibilities resp;
  resp.m = m;
  resp.g.assign(records.size() * m * m, 0.0);
  std::vector<double> logs(static_cast<std::size_t>(m) * m);
  for (std::size_t i = 0; i < records.size(); ++i) {
    check_region_codes(records[i], model);
    double mx = kNegInf;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        double l = log_component(records[i], j, k, model);
        logs[static_cast<std::size_t>(j) * m + k] = l;
        mx = std::max(mx, l);
      }
    if (!(mx > kNegInf))
      throw NumericalError("e_step: zero posterior mass for record " + std::to_string(i));
    double z = 0.0;
    for (std::size_t jk = 0; jk < logs.size(); ++jk) {
      double v = std::exp(logs[jk] - mx);
      resp.g[i * m * m + jk] = v;
      z += v;
    }
    for (std::size_t jk = 0; jk < logs.size(); ++jk) resp.g[i * m * m + jk] /= z;
  }
  return resp;
}

namespace {

// Accumulate counts and column-normalize; unobserved regions get uniform columns.
StateMatrix normalize_counts(StateMatrix counts) {
  for (int q = 0; q < counts.n_regions; ++q) {
    double s = 0.0;
    for (int j = 0; j < counts.m; ++j) s += counts.at(j, q);
    if (s > 0.0) {
      for (int j = 0; j < counts.m; ++j) counts.at(j, q) /= s;
    } else {
      for (int j = 0; j < counts.m; ++j) counts.at(j, q) = 1.0 / counts.m;
    }
  }
  return counts;
}

}  // namespace

MStepResult m_step(const std::vector<data::QosRecord>& records,
                   const Responsibilities& resp, const RegionalLatentModel& model) {
  const int m = resp.m;
  StateMatrix tu = uniform_matrix(m, model.theta_u.n_regions);
  StateMatrix ts = uniform_matrix(m, model.theta_s.n_regions);
  StateMatrix du = uniform_matrix(m, model.delta_u.n_regions);
  StateMatrix ds = uniform_matrix(m, model.delta_s.n_regions);
  std::fill(tu.data.begin(), tu.data.end(), 0.0);
  std::fill(ts.data.begin(), ts.data.end(), 0.0);
  std::fill(du.data.begin(), du.data.end(), 0.0);
  std::fill(ds.data.begin(), ds.data.end(), 0.0);

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    for (int j = 0; j < m; ++j) {
      double row = 0.0, col = 0.0;
      for (int k = 0; k < m; ++k) {
        row += resp.at(i, j, k);  // marginal over service states
        col += resp.at(i, k, j);  // marginal over user states
      }
      tu.at(j, rec.user_city) += row;
      du.at(j, rec.user_as) += row;
      ts.at(j, rec.service_city) += col;
      ds.at(j, rec.service_as) += col;
    }
  }

  MStepResult out;
  out.theta_u = normalize_counts(std::move(tu));
  out.theta_s = normalize_counts(std::move(ts));
  out.delta_u = normalize_counts(std::move(du));
  out.delta_s = normalize_counts(std::move(ds));
  return out;
}

double q_complexity(const std::vector<data::QosRecord>& records,
                    const Responsibilities& resp, const std::vector<double>& c_u,
                    const std::vector<double>& c_s, double w, double eta) {
  const int m = resp.m;
  double q = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    double t = records[i].value;
    bool slow = t >= eta;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        double inv = c_u[j] * c_s[k];
        if (slow) inv *= w;
        q += resp.at(i, j, k) * (-std::log(inv) - t / inv);
      }
  }
  return q;
}

GdResult gd_step(const std::vector<data::QosRecord>& records,
                 const Responsibilities& resp, const RegionalLatentModel& model) {
  const int m = resp.m;
  const double eta = model.config.eta;
  const double floor = model.config.param_floor;

  // Analytic gradient of q_complexity. With lambda = 1/inv:
  //   d/d c_u[j] of (log lambda - t*lambda) = (t*lambda - 1) / c_u[j]
  // and analogously for c_s[k]; w only contributes on the slow branch.
  std::vector<double> g_cu(m, 0.0), g_cs(m, 0.0);
  double g_w = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    double t = records[i].value;
    bool slow = t >= eta;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        double inv = model.c_u[j] * model.c_s[k];
        if (slow) inv *= model.w;
        double core = t / inv - 1.0;
        double gweight = resp.at(i, j, k);
        g_cu[j] += gweight * core / model.c_u[j];
        g_cs[k] += gweight * core / model.c_s[k];
        if (slow) g_w += gweight * core / model.w;
      }
  }
  for (double g : g_cu)
    if (!std::isfinite(g)) throw NumericalError("gd_step: non-finite gradient for c_u");
  for (double g : g_cs)
    if (!std::isfinite(g)) throw NumericalError("gd_step: non-finite gradient for c_s");
  if (!std::isfinite(g_w)) throw NumericalError("gd_step: non-finite gradient for w");

  GdResult out{model.c_u, model.c_s, model.w};
  double step = model.config.learning_rate;
  if (step == 0.0) return out;

  double q0 = q_complexity(records, resp, model.c_u, model.c_s, model.w, eta);
  for (int attempt = 0; attempt < 20; ++attempt) {
    GdResult cand{model.c_u, model.c_s, model.w};
    for (int j = 0; j < m; ++j) {
      cand.c_u[j] = std::max(model.c_u[j] + step * g_cu[j], floor);
      cand.c_s[j] = std::max(model.c_s[j] + step * g_cs[j], floor);
    }
    cand.w = std::max(model.w + step * g_w, floor);
    double q1 = q_complexity(records, resp, cand.c_u, cand.c_s, cand.w, eta);
    if (std::isfinite(q1) && q1 >= q0) return cand;
    step *= 0.5;
  }
  return out;  // no improving step found; keep current parameters
}

RegionalLatentModel init_model(const data::Dims& dims, const LatentConfig& config,
                               double mean_value) {
  config.validate();
  RegionalLatentModel model;
  model.config = config;
  const int m = config.m;

  double alpha = config.alpha > 0.0 ? config.alpha : static_cast<double>(m);
  Rng rng(config.seed ^ fnv1a64("latent-init-" + double_to_hex(alpha)));

  model.theta_u = uniform_matrix(m, std::max(dims.n_user_cities, 1));
  model.theta_s = uniform_matrix(m, std::max(dims.n_service_cities, 1));
  model.delta_u = uniform_matrix(m, std::max(dims.n_user_as, 1));
  model.delta_s = uniform_matrix(m, std::max(dims.n_service_as, 1));
  double jitter = 0.1 / m;
  jitter_columns(model.theta_u, rng, jitter);
  jitter_columns(model.theta_s, rng, jitter);
  jitter_columns(model.delta_u, rng, jitter);
  jitter_columns(model.delta_s, rng, jitter);

  // Spread the complexity factors geometrically around sqrt(mean T) so the
  // states start distinguishable; identical factors leave the GD gradient
  // symmetric across states.
  double base = std::sqrt(std::max(mean_value, config.param_floor));
  model.c_u.resize(m);
  model.c_s.resize(m);
  for (int j = 0; j < m; ++j) {
    double spread = m > 1 ? (static_cast<double>(j) / (m - 1) - 0.5) : 0.0;
    model.c_u[j] = std::max(base * std::exp(spread + 0.1 * (rng.uniform() - 0.5)),
                            config.param_floor);
    model.c_s[j] = std::max(base * std::exp(spread + 0.1 * (rng.uniform() - 0.5)),
                            config.param_floor);
  }
  model.w = std::max(config.w_init, config.param_floor);
  return model;
}

RegionalLatentModel init_model(const std::vector<data::QosRecord>& records,
                               const data::Dims& dims, const LatentConfig& config) {
  if (records.empty()) throw DataError("init_model: empty record list");
  double sum = 0.0;
  for (const auto& r : records) sum += r.value;
  RegionalLatentModel model = init_model(dims, config, sum / records.size());

  // Replace the mean-centered spread with value quantiles: c_u[j]*c_s[j] lands
  // on the (2j+1)/(2m) quantile, so the initial states bracket the observed
  // scale range and the first posterior already separates fast from slow
  // records. The median of an exponential is mean*ln(2), hence the correction.
  const int m = config.m;
  std::vector<double> vals;
  vals.reserve(records.size());
  for (const auto& r : records) vals.push_back(r.value);
  std::sort(vals.begin(), vals.end());
  Rng rng(config.seed ^ fnv1a64("latent-init-c-quantile"));
  for (int j = 0; j < m; ++j) {
    double p = (2.0 * j + 1.0) / (2.0 * m);
    std::size_t idx = std::min(vals.size() - 1,
                               static_cast<std::size_t>(p * static_cast<double>(vals.size())));
    double c = std::sqrt(std::max(vals[idx], config.param_floor) / std::log(2.0));
    model.c_u[j] = std::max(c * std::exp(0.05 * (rng.uniform() - 0.5)), config.param_floor);
    model.c_s[j] = std::max(c * std::exp(0.05 * (rng.uniform() - 0.5)), config.param_floor);
  }
  return model;
}

RegionalLatentModel fit(const std::vector<data::QosRecord>& records,
                        const data::Dims& dims, const LatentConfig& config) {
  if (records.empty()) throw DataError("fit: empty record list");
  RegionalLatentModel model = init_model(records, dims, config);

  double prev_ll = kNegInf;
  for (int iter = 0; iter < config.max_iters; ++iter) {
    double ll = log_likelihood(records, model);
    model.fit_log.push_back(ll);
    if (iter > 0) {
      double rel = (ll - prev_ll) / std::abs(prev_ll);
      if (rel < config.gamma) break;
    }
    prev_ll = ll;

    Responsibilities resp = e_step(records, model);
    MStepResult ms = m_step(records, resp, model);
    GdResult gd = gd_step(records, resp, model);
    model.theta_u = std::move(ms.theta_u);
    model.theta_s = std::move(ms.theta_s);
    model.delta_u = std::move(ms.delta_u);
    model.delta_s = std::move(ms.delta_s);
    model.c_u = std::move(gd.c_u);
    model.c_s = std::move(gd.c_s);
    model.w = gd.w;
  }
  return model;
}

std::vector<double> latent_features(const RegionalLatentModel& model, int user_city,
                                    int user_as, int service_city, int service_as) {
  data::QosRecord probe;
  probe.user_city = user_city;
  probe.user_as = user_as;
  probe.service_city = service_city;
  probe.service_as = service_as;
  check_region_codes(probe, model);

  const int m = model.config.m;
  std::vector<double> f;
  f.reserve(4 * static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) f.push_back(model.theta_u.at(j, user_city));
  for (int j = 0; j < m; ++j) f.push_back(model.delta_u.at(j, user_as));
  for (int j = 0; j < m; ++j) f.push_back(model.theta_s.at(j, service_city));
  for (int j = 0; j < m; ++j) f.push_back(model.delta_s.at(j, service_as));
  return f;
}

void save_model(const std::string& path, const RegionalLatentModel& model) {
  nlohmann::json j;
  j["schema"] = "r2sl-latent-v1";
  j["theta_u"] = matrix_to_json(model.theta_u);
  j["theta_s"] = matrix_to_json(model.theta_s);
  j["delta_u"] = matrix_to_json(model.delta_u);
  j["delta_s"] = matrix_to_json(model.delta_s);
  j["c_u"] = dvec_to_json(model.c_u);
  j["c_s"] = dvec_to_json(model.c_s);
  j["w"] = double_to_hex(model.w);
  j["fit_log"] = dvec_to_json(model.fit_log);
  nlohmann::json cfg;
  cfg["m"] = model.config.m;
  cfg["alpha"] = double_to_hex(model.config.alpha);
  cfg["eta"] = double_to_hex(model.config.eta);
  cfg["w_init"] = double_to_hex(model.config.w_init);
  cfg["learning_rate"] = double_to_hex(model.config.learning_rate);
  cfg["gamma"] = double_to_hex(model.config.gamma);
  cfg["max_iters"] = model.config.max_iters;
  cfg["param_floor"] = double_to_hex(model.config.param_floor);
  cfg["seed"] = model.config.seed;
  j["config"] = cfg;
  save_json_file(path, j);
}

RegionalLatentModel load_model(const std::string& path) {
  auto j = load_json_file(path);
  if (j.value("schema", "") != "r2sl-latent-v1")
    throw DataError("latent model document: unknown schema in " + path);
  RegionalLatentModel model;
  model.theta_u = matrix_from_json(j.at("theta_u"));
  model.theta_s = matrix_from_json(j.at("theta_s"));
  model.delta_u = matrix_from_json(j.at("delta_u"));
  model.delta_s = matrix_from_json(j.at("delta_s"));
  model.c_u = json_to_dvec(j.at("c_u"));
  model.c_s = json_to_dvec(j.at("c_s"));
  model.w = hex_to_double(j.at("w").get<std::string>());
  model.fit_log = json_to_dvec(j.at("fit_log"));
  const auto& cfg = j.at("config");
  model.config.m = cfg.at("m").get<int>();
  model.config.alpha = hex_to_double(cfg.at("alpha").get<std::string>());
  model.config.eta = hex_to_double(cfg.at("eta").get<std::string>());
  model.config.w_init = hex_to_double(cfg.at("w_init").get<std::string>());
  model.config.learning_rate = hex_to_double(cfg.at("learning_rate").get<std::string>());
  model.config.gamma = hex_to_double(cfg.at("gamma").get<std::string>());
  model.config.max_iters = cfg.at("max_iters").get<int>();
  model.config.param_floor = hex_to_double(cfg.at("param_floor").get<std::string>());
  model.config.seed = cfg.at("seed").get<std::uint64_t>();
  return model;
}

}  // namespace r2sl::latent
