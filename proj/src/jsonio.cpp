#include "r2sl/jsonio.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "r2sl/errors.hpp"

namespace r2sl {

std::string double_to_hex(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", x);
  return buf;
}

double hex_to_double(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw DataError("unparseable float: " + s);
  return v;
}

nlohmann::json dvec_to_json(const std::vector<double>& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : v) arr.push_back(double_to_hex(x));
  return arr;
}

std::vector<double> json_to_dvec(const nlohmann::json& j) {
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& e : j) {
    if (e.is_string()) {
      v.push_back(hex_to_double(e.get<std::string>()));
    } else {
      v.push_back(e.get<double>());
    }
  }
  return v;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

void save_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace r2sl
