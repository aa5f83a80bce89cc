#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "opseg/metrics.hpp"

namespace opseg {

/// Machine-readable report with the MetricReport field names; category keys
/// are decimal ids (the collapsed unknown class uses its sentinel id) and a
/// display name rides along for rendering without the category table.
inline nlohmann::json report_to_json(const MetricReport& report,
                                     const CategoryNamer& namer) {
  nlohmann::json doc;
  doc["per_category"] = nlohmann::json::object();
  for (const auto& [cls, m] : report.per_category) {
    nlohmann::json c;
    c["name"] = namer(cls);
    c["iou_sum"] = m.iou_sum;
    c["tp"] = m.tp;
    c["fp"] = m.fp;
    c["fn"] = m.fn;
    c["pq"] = m.pq;
    c["sq"] = m.sq;
    c["rq"] = m.rq;
    doc["per_category"][std::to_string(cls)] = c;
  }
  doc["groups"] = nlohmann::json::object();
  for (const auto& [name, g] : report.groups) {
    nlohmann::json j;
    j["pq"] = g.pq;
    j["sq"] = g.sq;
    j["rq"] = g.rq;
    j["n_categories"] = g.n_categories;
    doc["groups"][name] = j;
  }
  return doc;
}

inline nlohmann::json report_to_json(const MetricReport& report,
                                     const CategoryTable& cats) {
  return report_to_json(report, [&](CategoryId cls) {
    return category_display_name(cls, cats);
  });
}

struct NamedReport {
  MetricReport report;
  std::map<CategoryId, std::string> names;

  std::string name_of(CategoryId cls) const {
    auto it = names.find(cls);
    return it != names.end() ? it->second : std::to_string(cls);
  }
};

inline NamedReport report_from_json(const nlohmann::json& doc) {
  NamedReport out;
  for (const auto& [key, c] : doc.at("per_category").items()) {
    const CategoryId cls = static_cast<CategoryId>(std::stoull(key));
    CategoryMetrics m;
    m.iou_sum = c.at("iou_sum").get<double>();
    m.tp = c.at("tp").get<std::uint64_t>();
    m.fp = c.at("fp").get<std::uint64_t>();
    m.fn = c.at("fn").get<std::uint64_t>();
    m.pq = c.at("pq").get<double>();
    m.sq = c.at("sq").get<double>();
    m.rq = c.at("rq").get<double>();
    out.report.per_category[cls] = m;
    out.names[cls] = c.value("name", key);
  }
  for (const auto& [name, j] : doc.at("groups").items()) {
    GroupMetrics g;
    g.pq = j.at("pq").get<double>();
    g.sq = j.at("sq").get<double>();
    g.rq = j.at("rq").get<double>();
    g.n_categories = j.at("n_categories").get<std::size_t>();
    out.report.groups[name] = g;
  }
  return out;
}

inline void write_report_json(const std::string& path,
                              const MetricReport& report,
                              const CategoryTable& cats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create report file: " + path);
  out << report_to_json(report, cats).dump(2) << '\n';
}

}  // namespace opseg
