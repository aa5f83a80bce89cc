#pragma once

#include <fstream>
#include <map>
#include <string>

#include "opseg/exemplar.hpp"
#include "opseg/synth.hpp"

namespace opseg {

/// Flat dotted-key config text: one `key = value` per line, `#` comments.
inline std::map<std::string, std::string> parse_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t\r";
    const std::size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) return std::string();
    const std::size_t b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    kv[key] = value;
  }
  return kv;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': bad number '" + v + "'");
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': bad integer '" + v + "'");
  }
}

}  // namespace detail

/// Apply `engine.*` keys onto an EngineConfig; unknown keys are an error so
/// typos do not silently fall back to defaults.
inline void apply_engine_config(const std::map<std::string, std::string>& kv,
                                EngineConfig& cfg) {
  for (const auto& [key, value] : kv) {
    if (key.rfind("engine.", 0) != 0) continue;
    const std::string name = key.substr(7);
    if (name == "k_clusters")
      cfg.k_clusters = static_cast<std::uint32_t>(detail::to_u64(key, value));
    else if (name == "cluster_interval_steps")
      cfg.cluster_interval_steps =
          static_cast<std::uint32_t>(detail::to_u64(key, value));
    else if (name == "top_cluster_fraction")
      cfg.top_cluster_fraction = detail::to_double(key, value);
    else if (name == "objectness_start")
      cfg.objectness_start = detail::to_double(key, value);
    else if (name == "objectness_end")
      cfg.objectness_end = detail::to_double(key, value);
    else if (name == "objectness_ramp_per_class")
      cfg.objectness_ramp_per_class = detail::to_double(key, value);
    else if (name == "membership_cos_dist")
      cfg.membership_cos_dist = detail::to_double(key, value);
    else if (name == "mining_cos_dist_start")
      cfg.mining_cos_dist_start = detail::to_double(key, value);
    else if (name == "mining_cos_dist_end")
      cfg.mining_cos_dist_end = detail::to_double(key, value);
    else if (name == "mining_ramp_per_class")
      cfg.mining_ramp_per_class = detail::to_double(key, value);
    else if (name == "max_proposals_per_batch")
      cfg.max_proposals_per_batch =
          static_cast<std::size_t>(detail::to_u64(key, value));
    else if (name == "min_box_area")
      cfg.min_box_area = static_cast<std::int64_t>(detail::to_u64(key, value));
    else if (name == "nms_iou")
      cfg.nms_iou = detail::to_double(key, value);
    else if (name == "rng_seed")
      cfg.rng_seed = detail::to_u64(key, value);
    else
      throw std::runtime_error("unknown config key '" + key + "'");
  }
}

}  // namespace opseg
