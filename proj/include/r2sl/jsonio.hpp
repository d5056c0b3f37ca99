#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace r2sl {

// Doubles persisted as C99 hex-float strings so model documents round-trip
// to the exact bit pattern.
std::string double_to_hex(double x);
double hex_to_double(const std::string& s);

nlohmann::json dvec_to_json(const std::vector<double>& v);
std::vector<double> json_to_dvec(const nlohmann::json& j);

// FNV-1a over a byte string; used for config snapshot and record-set hashes.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hash_hex(std::uint64_t h);

nlohmann::json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace r2sl
