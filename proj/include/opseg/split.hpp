#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "opseg/coco.hpp"
#include "opseg/core.hpp"

namespace opseg {

enum class SplitRole { Train, Eval };

/// Built-in benchmark splits. Each tier stacks on the previous one, so the
/// 10% split contains the 5% classes and the 20% split contains both.
inline const std::vector<SplitSpec>& preset_splits() {
  static const std::vector<SplitSpec> presets = {
      {"5", {"car", "cow", "pizza", "toilet"}, std::nullopt},
      {"10", {"boat", "tie", "zebra", "stop sign"}, std::string("5")},
      {"20",
       {"dining table", "banana", "bicycle", "cake", "sink", "cat", "keyboard",
        "bear"},
       std::string("10")},
  };
  return presets;
}

inline const SplitSpec* find_split(const std::vector<SplitSpec>& specs,
                                   const std::string& name) {
  for (const SplitSpec& s : specs)
    if (s.name == name) return &s;
  return nullptr;
}

/// Resolve a spec to its full class-name list, walking cumulative_base
/// chains. Duplicate names after expansion are an error.
inline std::vector<std::string> expand_split(
    const SplitSpec& spec, const std::vector<SplitSpec>& registry) {
  std::vector<std::string> names;
  std::set<std::string> seen_specs;
  const SplitSpec* cur = &spec;
  std::vector<const SplitSpec*> chain;
  while (true) {
    if (!seen_specs.insert(cur->name).second)
      throw std::invalid_argument("split '" + spec.name +
                                  "': cyclic cumulative_base chain");
    chain.push_back(cur);
    if (!cur->cumulative_base) break;
    const SplitSpec* base = find_split(registry, *cur->cumulative_base);
    if (!base)
      throw std::invalid_argument("split '" + cur->name +
                                  "': unknown base split '" +
                                  *cur->cumulative_base + "'");
    cur = base;
  }
  std::set<std::string> seen_names;
  for (auto it = chain.rbegin(); it != chain.rend(); ++it)
    for (const std::string& n : (*it)->unknown_class_names) {
      if (!seen_names.insert(n).second)
        throw std::invalid_argument("split '" + spec.name +
                                    "': duplicate class '" + n +
                                    "' after cumulative expansion");
      names.push_back(n);
    }
  return names;
}

/// Load a user-defined split from JSON:
///   {"name": ..., "unknown_class_names": [...], "cumulative_base": ...}
inline SplitSpec load_split_spec(const std::string& path) {
  const nlohmann::json doc = detail::read_json_file(path);
  SplitSpec spec;
  spec.name = doc.at("name").get<std::string>();
  for (const auto& n : doc.at("unknown_class_names"))
    spec.unknown_class_names.push_back(n.get<std::string>());
  if (doc.contains("cumulative_base"))
    spec.cumulative_base = doc.at("cumulative_base").get<std::string>();
  return spec;
}

/// Turn a closed-set dataset into an open-set benchmark split.
///
/// Both roles flip the selected classes to status=unknown in the output
/// categories. The train role additionally deletes every segment of those
/// classes, voiding its pixels, so no annotation trace survives; the eval
/// role keeps the segments as unknown-class ground truth. Crowd segments are
/// treated like any other segment of the class.
inline Dataset build_open_set_split(
    const Dataset& src, const SplitSpec& spec, SplitRole role,
    const std::vector<SplitSpec>& registry = preset_splits()) {
  const std::vector<std::string> names = expand_split(spec, registry);

  std::set<CategoryId> removed;
  for (const std::string& n : names) {
    const CategoryEntry* e = src.manifest.categories.find_by_name(n);
    if (!e)
      throw std::invalid_argument("split class '" + n +
                                  "' not present in the source categories");
    if (e->kind != Kind::Thing)
      throw std::invalid_argument("split class '" + n +
                                  "' is a stuff category");
    removed.insert(e->id);
  }

  Dataset out;
  std::vector<CategoryEntry> entries = src.manifest.categories.entries();
  for (CategoryEntry& e : entries)
    if (removed.count(e.id)) e.status = Status::Unknown;
  out.manifest.categories = CategoryTable(std::move(entries));
  out.manifest.images = src.manifest.images;
  out.manifest.split_name =
      spec.name + (role == SplitRole::Train ? "-train" : "-eval");

  out.maps.reserve(src.maps.size());
  for (const PanopticMap& src_map : src.maps) {
    PanopticMap map = src_map;
    if (role == SplitRole::Train) {
      std::set<SegmentId> doomed;
      for (const auto& [sid, info] : map.segments)
        if (removed.count(info.category_id)) doomed.insert(sid);
      if (!doomed.empty()) {
        for (SegmentId& px : map.pixels)
          if (doomed.count(px)) px = kVoidSegment;
        for (SegmentId sid : doomed) map.segments.erase(sid);
      }
    }
    out.maps.push_back(std::move(map));
  }
  return out;
}

}  // namespace opseg
