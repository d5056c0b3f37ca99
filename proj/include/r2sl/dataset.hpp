#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "r2sl/rng.hpp"

namespace r2sl::data {

// One QoS observation with its four region codes (dense indices).
struct QosRecord {
  int user_id = 0;
  int service_id = 0;
  double value = 0.0;  // seconds for RT, kbps for TP
  int user_city = 0;
  int user_as = 0;
  int service_city = 0;
  int service_as = 0;
};

enum class RegionKind { user_city, user_as, service_city, service_as };

// Raw region labels -> dense codes, deterministic (sorted raw labels).
struct RegionCodebook {
  RegionKind kind;
  std::map<std::string, int> raw_to_index;
  std::vector<std::string> index_to_raw;

  int size() const { return static_cast<int>(index_to_raw.size()); }
};

struct Codebooks {
  RegionCodebook user_city;
  RegionCodebook user_as;
  RegionCodebook service_city;
  RegionCodebook service_as;
};

struct ParseResult {
  std::vector<QosRecord> records;
  Codebooks codebooks;
  int n_users = 0;
  int n_services = 0;
  std::size_t dropped_over_cap = 0;
  std::size_t dropped_nonpositive = 0;
};

struct DensitySplit {
  double density = 0.0;
  double train_frac = 0.0;
  double test_frac = 0.0;
  double valid_frac = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> valid;
};

struct DistributionReport {
  std::vector<double> bucket_edges;
  std::vector<std::size_t> bucket_counts;  // edges.size()+1 buckets
  std::vector<double> tail_fractions;      // fraction of values strictly above each edge
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::size_t n = 0;
};

// True parameters for the generative model, used to synthesize records for
// oracle tests. Distribution matrices are m x n_regions, column-major, each
// column summing to 1.
struct SynthSpec {
  int m = 1;
  int n_users = 1;
  int n_services = 1;
  int n_user_cities = 1;
  int n_user_as = 1;
  int n_service_cities = 1;
  int n_service_as = 1;
  std::vector<double> theta_u;  // m x n_user_cities
  std::vector<double> theta_s;  // m x n_service_cities
  std::vector<double> delta_u;  // m x n_user_as
  std::vector<double> delta_s;  // m x n_service_as
  std::vector<double> c_u;      // length m
  std::vector<double> c_s;      // length m
  double w = 50.0;
  double eta = 2.5;
  double value_cap = 20.0;
  std::size_t n_records = 0;
  std::uint64_t seed = 0;
};

struct SynthResult {
  std::vector<QosRecord> records;
  std::vector<std::pair<int, int>> states;  // hidden (j, k) per record
  // Deterministic per-object region assignments used during sampling.
  std::vector<int> user_city, user_as, service_city, service_as;
};

// Builds a SynthSpec with peaked region-state columns (each region prefers
// state region % m) and geometrically spread complexity factors, producing
// RT-like values. Used for synthetic-oracle runs and desk-scale experiments.
SynthSpec make_regional_synth_spec(int m, int n_users, int n_services,
                                   int n_user_cities, int n_user_as,
                                   int n_service_cities, int n_service_as,
                                   std::size_t n_records, std::uint64_t seed);

// Matrix file: whitespace-separated reals, one user per line.
// Metadata file: "id <TAB> city_label <TAB> as_label", optional header.
ParseResult parse_matrix(const std::string& matrix_text,
                         const std::string& user_meta_text,
                         const std::string& service_meta_text,
                         double missing_sentinel = -1.0,
                         double value_cap = 20.0);

ParseResult parse_matrix_files(const std::string& matrix_path,
                               const std::string& user_meta_path,
                               const std::string& service_meta_path,
                               double missing_sentinel = -1.0,
                               double value_cap = 20.0);

DensitySplit make_splits(std::size_t n_records, double density,
                         double train_frac, double test_frac, double valid_frac,
                         std::uint64_t seed);

DistributionReport distribution_report(const std::vector<QosRecord>& records,
                                       const std::vector<double>& bucket_edges);

SynthResult synthesize(const SynthSpec& spec);

// Canonical interchange CSV:
// user_id,service_id,value,user_city,user_as,service_city,service_as
std::string records_to_csv(const std::vector<QosRecord>& records);
std::vector<QosRecord> records_from_csv(const std::string& csv_text);
void save_records_csv(const std::string& path, const std::vector<QosRecord>& records);
std::vector<QosRecord> load_records_csv(const std::string& path);

void save_split_manifest(const std::string& path, const DensitySplit& split);
DensitySplit load_split_manifest(const std::string& path);

std::vector<QosRecord> select(const std::vector<QosRecord>& records,
                              const std::vector<std::size_t>& idx);

struct Dims {
  int n_users = 0, n_services = 0;
  int n_user_cities = 0, n_user_as = 0, n_service_cities = 0, n_service_as = 0;
};
Dims infer_dims(const std::vector<QosRecord>& records);

}  // namespace r2sl::data
