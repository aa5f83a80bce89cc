#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace opseg {

/// FNV-1a 64-bit fingerprint of a file's bytes (provenance, not crypto).
inline std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for hashing: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Reproducibility record written next to every CLI output: fingerprints of
/// the inputs plus the effective configuration.
inline void write_run_manifest(
    const std::string& output_path, const std::string& command,
    const std::vector<std::string>& input_paths,
    const std::map<std::string, std::string>& effective_config) {
  nlohmann::json doc;
  doc["command"] = command;
  doc["hash_algorithm"] = "fnv1a64";
  doc["inputs"] = nlohmann::json::object();
  for (const std::string& p : input_paths)
    doc["inputs"][p] = hex64(fnv1a64_file(p));
  doc["config"] = nlohmann::json::object();
  for (const auto& [k, v] : effective_config) doc["config"][k] = v;

  const std::string path = output_path + ".manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create manifest: " + path);
  out << doc.dump(2) << '\n';
}

}  // namespace opseg
