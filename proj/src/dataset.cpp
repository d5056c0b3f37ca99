#include "r2sl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "r2sl/errors.hpp"
#include "r2sl/jsonio.hpp"

namespace r2sl::data {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t") == std::string::npos;
}

double parse_double(const std::string& tok, std::size_t line_no) {
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw DataError("unparseable numeric cell '" + tok + "' at line " +
                    std::to_string(line_no));
  }
  return v;
}

struct MetaRow {
  int id;
  std::string city;
  std::string as;
};

// "id <TAB> city_label <TAB> as_label"; a non-numeric first field on the
// first line is treated as a header.
std::vector<MetaRow> parse_meta(const std::string& text, const std::string& what) {
  std::vector<MetaRow> rows;
  auto lines = split_lines(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    if (is_blank(line)) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, '\t')) fields.push_back(field);
    if (fields.size() < 3) {
      throw DataError(what + " metadata line " + std::to_string(li + 1) +
                      ": expected 'id<TAB>city<TAB>as'");
    }
    char* end = nullptr;
    long id = std::strtol(fields[0].c_str(), &end, 10);
    if (end == fields[0].c_str() || *end != '\0') {
      if (li == 0) continue;  // header
      throw DataError(what + " metadata line " + std::to_string(li + 1) +
                      ": bad id '" + fields[0] + "'");
    }
    rows.push_back({static_cast<int>(id), fields[1], fields[2]});
  }
  std::sort(rows.begin(), rows.end(),
            [](const MetaRow& a, const MetaRow& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].id != static_cast<int>(i)) {
      throw DataError(what + " metadata: ids must be dense 0..n-1, gap at " +
                      std::to_string(i));
    }
  }
  return rows;
}

RegionCodebook build_codebook(RegionKind kind, const std::vector<std::string>& labels) {
  RegionCodebook cb;
  cb.kind = kind;
  std::vector<std::string> uniq = labels;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  cb.index_to_raw = uniq;
  for (std::size_t i = 0; i < uniq.size(); ++i) cb.raw_to_index[uniq[i]] = static_cast<int>(i);
  return cb;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ParseResult parse_matrix(const std::string& matrix_text,
                         const std::string& user_meta_text,
                         const std::string& service_meta_text,
                         double missing_sentinel, double value_cap) {
  auto users = parse_meta(user_meta_text, "user");
  auto services = parse_meta(service_meta_text, "service");

  std::vector<std::string> ucities, uas, scities, sas;
  for (const auto& r : users) { ucities.push_back(r.city); uas.push_back(r.as); }
  for (const auto& r : services) { scities.push_back(r.city); sas.push_back(r.as); }

  ParseResult out;
  out.codebooks.user_city = build_codebook(RegionKind::user_city, ucities);
  out.codebooks.user_as = build_codebook(RegionKind::user_as, uas);
  out.codebooks.service_city = build_codebook(RegionKind::service_city, scities);
  out.codebooks.service_as = build_codebook(RegionKind::service_as, sas);
  out.n_users = static_cast<int>(users.size());
  out.n_services = static_cast<int>(services.size());

  auto lines = split_lines(matrix_text);
  std::vector<std::string> rows;
  for (auto& l : lines)
    if (!is_blank(l)) rows.push_back(l);
  if (rows.size() != users.size()) {
    throw DataError("matrix has " + std::to_string(rows.size()) +
                    " rows but user metadata has " + std::to_string(users.size()));
  }

  for (std::size_t u = 0; u < rows.size(); ++u) {
    std::istringstream in(rows[u]);
    std::string tok;
    std::size_t s = 0;
    while (in >> tok) {
      if (s >= services.size()) {
        throw DataError("matrix row " + std::to_string(u + 1) + " has more than " +
                        std::to_string(services.size()) + " columns");
      }
      double v = parse_double(tok, u + 1);
      if (v != missing_sentinel) {
        if (v <= 0.0) {
          ++out.dropped_nonpositive;
        } else if (v > value_cap) {
          ++out.dropped_over_cap;
        } else {
          QosRecord rec;
          rec.user_id = static_cast<int>(u);
          rec.service_id = static_cast<int>(s);
          rec.value = v;
          rec.user_city = out.codebooks.user_city.raw_to_index.at(users[u].city);
          rec.user_as = out.codebooks.user_as.raw_to_index.at(users[u].as);
          rec.service_city = out.codebooks.service_city.raw_to_index.at(services[s].city);
          rec.service_as = out.codebooks.service_as.raw_to_index.at(services[s].as);
          out.records.push_back(rec);
        }
      }
      ++s;
    }
    if (s != services.size()) {
      throw DataError("matrix row " + std::to_string(u + 1) + " has " +
                      std::to_string(s) + " columns, expected " +
                      std::to_string(services.size()));
    }
  }
  return out;
}

ParseResult parse_matrix_files(const std::string& matrix_path,
                               const std::string& user_meta_path,
                               const std::string& service_meta_path,
                               double missing_sentinel, double value_cap) {
  return parse_matrix(read_file(matrix_path), read_file(user_meta_path),
                      read_file(service_meta_path), missing_sentinel, value_cap);
}

DensitySplit make_splits(std::size_t n_records, double density,
                         double train_frac, double test_frac, double valid_frac,
                         std::uint64_t seed) {
  if (density <= 0.0 || density > 1.0) throw UsageError("density must be in (0, 1]");
  double fsum = train_frac + test_frac + valid_frac;
  if (std::abs(fsum - 1.0) > 1e-9) throw UsageError("split fractions must sum to 1");
  if (n_records == 0) throw DataError("cannot split an empty record list");

  std::vector<std::size_t> idx(n_records);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);

  std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * n_records));
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_frac * n_records));
  n_train = std::min(n_train, n_records);
  n_test = std::min(n_test, n_records - n_train);

  DensitySplit split;
  split.density = density;
  split.train_frac = train_frac;
  split.test_frac = test_frac;
  split.valid_frac = valid_frac;
  split.seed = seed;
  split.train.assign(idx.begin(), idx.begin() + n_train);
  split.test.assign(idx.begin() + n_train, idx.begin() + n_train + n_test);
  split.valid.assign(idx.begin() + n_train + n_test, idx.end());
  return split;
}

DistributionReport distribution_report(const std::vector<QosRecord>& records,
                                       const std::vector<double>& bucket_edges) {
  if (records.empty()) throw DataError("distribution_report: empty record list");
  DistributionReport rep;
  rep.bucket_edges = bucket_edges;
  rep.n = records.size();
  rep.bucket_counts.assign(bucket_edges.size() + 1, 0);
  rep.tail_fractions.assign(bucket_edges.size(), 0.0);

  double sum = 0.0;
  for (const auto& r : records) sum += r.value;
  rep.mean = sum / static_cast<double>(rep.n);

  double ss = 0.0;
  for (const auto& r : records) {
    double d = r.value - rep.mean;
    ss += d * d;
    std::size_t b = 0;
    while (b < bucket_edges.size() && r.value > bucket_edges[b]) ++b;
    ++rep.bucket_counts[b];
    for (std::size_t e = 0; e < bucket_edges.size(); ++e)
      if (r.value > bucket_edges[e]) rep.tail_fractions[e] += 1.0;
  }
  rep.variance = ss / static_cast<double>(rep.n);
  for (auto& f : rep.tail_fractions) f /= static_cast<double>(rep.n);
  return rep;
}

namespace {

void check_columns_normalized(const std::vector<double>& mat, int m, int cols,
                              const char* name) {
  for (int q = 0; q < cols; ++q) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += mat[j + static_cast<std::size_t>(q) * m];
    if (std::abs(s - 1.0) > 1e-9) {
      throw DataError(std::string("synth spec: column ") + std::to_string(q) +
                      " of " + name + " sums to " + std::to_string(s));
    }
  }
}

// Discrete draw from the renormalized elementwise product of the city and AS
// state columns for one object.
int draw_state(const std::vector<double>& city_mat, int city,
               const std::vector<double>& as_mat, int as, int m, Rng& rng) {
  std::vector<double> p(m);
  double z = 0.0;
  for (int j = 0; j < m; ++j) {
    p[j] = city_mat[j + static_cast<std::size_t>(city) * m] *
           as_mat[j + static_cast<std::size_t>(as) * m];
    z += p[j];
  }
  if (z <= 0.0) throw NumericalError("synthesize: zero-mass state product");
  double u = rng.uniform() * z;
  double acc = 0.0;
  for (int j = 0; j < m; ++j) {
    acc += p[j];
    if (u < acc) return j;
  }
  return m - 1;
}

// Sample T from the piecewise exponential density: rate 1/(cu*cs) below eta,
// rate 1/(cu*cs*w) at or above eta, normalized over the two branches.
double draw_qos(double mean_fast, double mean_slow, double eta, Rng& rng) {
  double p_fast = 1.0 - std::exp(-eta / mean_fast);   // mass below eta
  double p_slow = std::exp(-eta / mean_slow);         // mass at/above eta
  double z = p_fast + p_slow;
  if (rng.uniform() * z < p_fast) {
    // truncated to [0, eta) by inversion
    double u = rng.uniform();
    return -mean_fast * std::log(1.0 - u * p_fast);
  }
  return eta + rng.exponential(mean_slow);  // memoryless tail
}

}  // namespace

SynthResult synthesize(const SynthSpec& spec) {
  if (spec.m < 1) throw UsageError("synth spec: m must be >= 1");
  check_columns_normalized(spec.theta_u, spec.m, spec.n_user_cities, "theta_u");
  check_columns_normalized(spec.theta_s, spec.m, spec.n_service_cities, "theta_s");
  check_columns_normalized(spec.delta_u, spec.m, spec.n_user_as, "delta_u");
  check_columns_normalized(spec.delta_s, spec.m, spec.n_service_as, "delta_s");
  for (double c : spec.c_u)
    if (c <= 0.0) throw DataError("synth spec: c_u must be positive");
  for (double c : spec.c_s)
    if (c <= 0.0) throw DataError("synth spec: c_s must be positive");
  if (spec.w <= 0.0) throw DataError("synth spec: w must be positive");

  SynthResult out;
  out.user_city.resize(spec.n_users);
  out.user_as.resize(spec.n_users);
  out.service_city.resize(spec.n_services);
  out.service_as.resize(spec.n_services);
  for (int u = 0; u < spec.n_users; ++u) {
    out.user_city[u] = u % spec.n_user_cities;
    out.user_as[u] = u % spec.n_user_as;
  }
  for (int s = 0; s < spec.n_services; ++s) {
    out.service_city[s] = s % spec.n_service_cities;
    out.service_as[s] = s % spec.n_service_as;
  }

  Rng rng(spec.seed);
  out.records.reserve(spec.n_records);
  out.states.reserve(spec.n_records);
  for (std::size_t i = 0; i < spec.n_records; ++i) {
    int u = static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_users)));
    int s = static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_services)));
    int j = draw_state(spec.theta_u, out.user_city[u], spec.delta_u, out.user_as[u],
                       spec.m, rng);
    int k = draw_state(spec.theta_s, out.service_city[s], spec.delta_s, out.service_as[s],
                       spec.m, rng);
    double mean_fast = spec.c_u[j] * spec.c_s[k];
    double mean_slow = mean_fast * spec.w;
    double t = draw_qos(mean_fast, mean_slow, spec.eta, rng);
    while (t > spec.value_cap || t <= 0.0)
      t = draw_qos(mean_fast, mean_slow, spec.eta, rng);

    QosRecord rec;
    rec.user_id = u;
    rec.service_id = s;
    rec.value = t;
    rec.user_city = out.user_city[u];
    rec.user_as = out.user_as[u];
    rec.service_city = out.service_city[s];
    rec.service_as = out.service_as[s];
    out.records.push_back(rec);
    out.states.emplace_back(j, k);
  }
  return out;
}

namespace {

// Column q prefers state q % m with weight 0.8, remainder spread uniformly.
std::vector<double> peaked_matrix(int m, int cols) {
  std::vector<double> mat(static_cast<std::size_t>(m) * cols);
  for (int q = 0; q < cols; ++q) {
    for (int j = 0; j < m; ++j) {
      double v = (j == q % m) ? 0.8 : 0.2 / std::max(m - 1, 1);
      if (m == 1) v = 1.0;
      mat[static_cast<std::size_t>(q) * m + j] = v;
    }
  }
  return mat;
}

}  // namespace

SynthSpec make_regional_synth_spec(int m, int n_users, int n_services,
                                   int n_user_cities, int n_user_as,
                                   int n_service_cities, int n_service_as,
                                   std::size_t n_records, std::uint64_t seed) {
  SynthSpec spec;
  spec.m = m;
  spec.n_users = n_users;
  spec.n_services = n_services;
  spec.n_user_cities = n_user_cities;
  spec.n_user_as = n_user_as;
  spec.n_service_cities = n_service_cities;
  spec.n_service_as = n_service_as;
  spec.theta_u = peaked_matrix(m, n_user_cities);
  spec.theta_s = peaked_matrix(m, n_service_cities);
  spec.delta_u = peaked_matrix(m, n_user_as);
  spec.delta_s = peaked_matrix(m, n_service_as);
  spec.c_u.resize(m);
  spec.c_s.resize(m);
  for (int j = 0; j < m; ++j) {
    spec.c_u[j] = 0.35 * std::pow(2.2, j);
    spec.c_s[j] = 0.8 * std::pow(1.8, j);
  }
  spec.w = 50.0;
  spec.eta = 2.5;
  spec.value_cap = 20.0;
  spec.n_records = n_records;
  spec.seed = seed;
  return spec;
}

std::string records_to_csv(const std::vector<QosRecord>& records) {
  std::ostringstream out;
  out << "user_id,service_id,value,user_city,user_as,service_city,service_as\n";
  for (const auto& r : records) {
    out << r.user_id << ',' << r.service_id << ',' << format_value(r.value) << ','
        << r.user_city << ',' << r.user_as << ',' << r.service_city << ','
        << r.service_as << '\n';
  }
  return out.str();
}

std::vector<QosRecord> records_from_csv(const std::string& csv_text) {
  auto lines = split_lines(csv_text);
  std::vector<QosRecord> records;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    if (is_blank(line)) continue;
    if (li == 0 && line.rfind("user_id,", 0) == 0) continue;
    std::vector<std::string> f;
    std::string tok;
    std::istringstream in(line);
    while (std::getline(in, tok, ',')) f.push_back(tok);
    if (f.size() != 7) {
      throw DataError("record CSV line " + std::to_string(li + 1) +
                      ": expected 7 fields, got " + std::to_string(f.size()));
    }
    QosRecord r;
    r.user_id = static_cast<int>(std::stol(f[0]));
    r.service_id = static_cast<int>(std::stol(f[1]));
    r.value = parse_double(f[2], li + 1);
    r.user_city = static_cast<int>(std::stol(f[3]));
    r.user_as = static_cast<int>(std::stol(f[4]));
    r.service_city = static_cast<int>(std::stol(f[5]));
    r.service_as = static_cast<int>(std::stol(f[6]));
    records.push_back(r);
  }
  return records;
}

void save_records_csv(const std::string& path, const std::vector<QosRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << records_to_csv(records);
}

std::vector<QosRecord> load_records_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return records_from_csv(ss.str());
}

void save_split_manifest(const std::string& path, const DensitySplit& split) {
  nlohmann::json j;
  j["schema"] = "r2sl-split-v1";
  j["density"] = split.density;
  j["train_frac"] = split.train_frac;
  j["test_frac"] = split.test_frac;
  j["valid_frac"] = split.valid_frac;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["test"] = split.test;
  j["valid"] = split.valid;
  save_json_file(path, j);
}

DensitySplit load_split_manifest(const std::string& path) {
  auto j = load_json_file(path);
  DensitySplit s;
  s.density = j.at("density").get<double>();
  s.train_frac = j.at("train_frac").get<double>();
  s.test_frac = j.at("test_frac").get<double>();
  s.valid_frac = j.at("valid_frac").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<std::size_t>>();
  s.test = j.at("test").get<std::vector<std::size_t>>();
  s.valid = j.at("valid").get<std::vector<std::size_t>>();
  return s;
}

std::vector<QosRecord> select(const std::vector<QosRecord>& records,
                              const std::vector<std::size_t>& idx) {
  std::vector<QosRecord> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(records.at(i));
  return out;
}

Dims infer_dims(const std::vector<QosRecord>& records) {
  Dims d;
  for (const auto& r : records) {
    d.n_users = std::max(d.n_users, r.user_id + 1);
    d.n_services = std::max(d.n_services, r.service_id + 1);
    d.n_user_cities = std::max(d.n_user_cities, r.user_city + 1);
    d.n_user_as = std::max(d.n_user_as, r.user_as + 1);
    d.n_service_cities = std::max(d.n_service_cities, r.service_city + 1);
    d.n_service_as = std::max(d.n_service_as, r.service_as + 1);
  }
  return d;
}

}  // namespace r2sl::data
