#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace opseg {

using CategoryId = std::uint32_t;
using SegmentId  = std::uint32_t;
using ImageId    = std::uint64_t;

// Segment id 0 is reserved for void / unlabeled pixels.
inline constexpr SegmentId kVoidSegment = 0;

// All unknown categories collapse onto this single id for evaluation.
inline constexpr CategoryId kCollapsedUnknown = 0xFFFFFFFFu;

enum class Kind : std::uint8_t { Thing, Stuff };
enum class Status : std::uint8_t { Known, Unknown, Void };

struct CategoryEntry {
  CategoryId id = 0;
  std::string name;
  Kind kind = Kind::Thing;
  Status status = Status::Known;
};

/// Category registry carrying thing/stuff kind and known/unknown/void status.
/// Construction enforces: unique ids, exactly one void entry, and every
/// unknown entry is a thing.
class CategoryTable {
 public:
  CategoryTable() = default;

  explicit CategoryTable(std::vector<CategoryEntry> entries)
      : entries_(std::move(entries)) {
    bool saw_void = false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const CategoryEntry& e = entries_[i];
      if (!index_.emplace(e.id, i).second)
        throw std::invalid_argument("CategoryTable: duplicate category id " +
                                    std::to_string(e.id));
      if (e.status == Status::Void) {
        if (saw_void)
          throw std::invalid_argument("CategoryTable: more than one void entry");
        saw_void = true;
        void_id_ = e.id;
      }
      if (e.status == Status::Unknown && e.kind != Kind::Thing)
        throw std::invalid_argument("CategoryTable: unknown category '" +
                                    e.name + "' must be a thing");
    }
    if (!saw_void)
      throw std::invalid_argument("CategoryTable: missing void entry");
  }

  const std::vector<CategoryEntry>& entries() const { return entries_; }

  const CategoryEntry* find(CategoryId id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  const CategoryEntry& at(CategoryId id) const {
    const CategoryEntry* e = find(id);
    if (!e)
      throw std::out_of_range("CategoryTable: no category with id " +
                              std::to_string(id));
    return *e;
  }

  const CategoryEntry* find_by_name(const std::string& name) const {
    for (const CategoryEntry& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  CategoryId void_id() const { return void_id_; }

  bool is_unknown(CategoryId id) const { return at(id).status == Status::Unknown; }

  /// Evaluation class of a category: known categories map to themselves,
  /// every unknown category maps to kCollapsedUnknown. The void entry has
  /// no evaluation class.
  CategoryId eval_class(CategoryId id) const {
    const CategoryEntry& e = at(id);
    if (e.status == Status::Void)
      throw std::invalid_argument("category " + std::to_string(id) +
                                  " is the void label, not a segment class");
    return e.status == Status::Unknown ? kCollapsedUnknown : id;
  }

 private:
  std::vector<CategoryEntry> entries_;
  std::unordered_map<CategoryId, std::size_t> index_;
  CategoryId void_id_ = 0;
};

/// Axis-aligned box with integer pixel corners and half-open extent
/// [x, x+w) x [y, y+h).
struct BoundingBox {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t w = 0;
  std::int32_t h = 0;

  std::int64_t area() const {
    return static_cast<std::int64_t>(w) * static_cast<std::int64_t>(h);
  }
  bool valid() const { return w > 0 && h > 0; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
  friend auto operator<=>(const BoundingBox&, const BoundingBox&) = default;
};

inline double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const std::int64_t ix = std::max<std::int64_t>(
      0, std::min<std::int64_t>(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const std::int64_t iy = std::max<std::int64_t>(
      0, std::min<std::int64_t>(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const std::int64_t inter = ix * iy;
  if (inter == 0) return 0.0;
  const std::int64_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct SegmentInfo {
  CategoryId category_id = 0;
  bool iscrowd = false;
  std::uint64_t area = 0;
};

/// Per-pixel segment-id grid plus the table mapping ids to categories.
/// Treated as immutable once built; all readers may share it freely.
struct PanopticMap {
  int width = 0;
  int height = 0;
  std::vector<SegmentId> pixels;            // row-major, 0 = void
  std::map<SegmentId, SegmentInfo> segments;

  SegmentId at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  SegmentId& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint64_t pixel_count() const {
    return static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  }

  /// Recompute every segment's area from the pixel grid, dropping entries
  /// that no longer own any pixel. For use by map builders.
  void recompute_areas() {
    std::unordered_map<SegmentId, std::uint64_t> counts;
    for (SegmentId id : pixels)
      if (id != kVoidSegment) ++counts[id];
    for (auto it = segments.begin(); it != segments.end();) {
      auto c = counts.find(it->first);
      if (c == counts.end()) {
        it = segments.erase(it);
      } else {
        it->second.area = c->second;
        ++it;
      }
    }
  }
};

enum class MapViolationKind {
  OrphanPixelId,     // pixel value with no segment-table entry
  AreaMismatch,      // stored area != actual pixel count
  UnknownCategoryId, // segment references a category the table lacks
  VoidIdInTable,     // reserved id 0 used as a table key
};

struct MapViolation {
  MapViolationKind kind;
  SegmentId segment = 0;
  std::string detail;
};

struct ValidationResult {
  std::vector<MapViolation> violations;
  bool ok() const { return violations.empty(); }
};

/// Diagnostic map check; violations are returned, never thrown.
inline ValidationResult validate_map(const PanopticMap& map,
                                     const CategoryTable& cats) {
  ValidationResult result;
  if (map.pixels.size() != map.pixel_count()) {
    result.violations.push_back({MapViolationKind::AreaMismatch, 0,
                                 "pixel buffer size does not match width*height"});
    return result;
  }

  std::unordered_map<SegmentId, std::uint64_t> counts;
  for (SegmentId id : map.pixels)
    if (id != kVoidSegment) ++counts[id];

  for (const auto& [id, count] : counts) {
    if (!map.segments.count(id))
      result.violations.push_back({MapViolationKind::OrphanPixelId, id,
                                   "orphan segment: pixel id " + std::to_string(id) +
                                       " missing from segment table"});
  }
  for (const auto& [id, info] : map.segments) {
    if (id == kVoidSegment) {
      result.violations.push_back({MapViolationKind::VoidIdInTable, id,
                                   "segment table uses reserved void id 0"});
      continue;
    }
    auto it = counts.find(id);
    const std::uint64_t actual = it == counts.end() ? 0 : it->second;
    if (actual != info.area)
      result.violations.push_back(
          {MapViolationKind::AreaMismatch, id,
           "area mismatch: table claims " + std::to_string(info.area) +
               ", grid has " + std::to_string(actual)});
    const CategoryEntry* cat = cats.find(info.category_id);
    if (!cat || cat->status == Status::Void)
      result.violations.push_back(
          {MapViolationKind::UnknownCategoryId, id,
           "segment " + std::to_string(id) + " references invalid category " +
               std::to_string(info.category_id)});
  }
  std::sort(result.violations.begin(), result.violations.end(),
            [](const MapViolation& a, const MapViolation& b) {
              return a.segment != b.segment ? a.segment < b.segment
                                            : a.kind < b.kind;
            });
  return result;
}

struct CategoryMetrics {
  double iou_sum = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
};

struct GroupMetrics {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  std::size_t n_categories = 0;
};

/// PQ/SQ/RQ per category and per group. The collapsed unknown class is
/// keyed by kCollapsedUnknown in per_category and by "Unknown" in groups.
/// Group names: "All-Known", "Known-Th", "Known-St", "Unknown".
struct MetricReport {
  std::map<CategoryId, CategoryMetrics> per_category;
  std::map<std::string, GroupMetrics> groups;
};

/// Named selection of thing classes to convert into unknowns, optionally
/// stacked on another split (cumulative removal).
struct SplitSpec {
  std::string name;
  std::vector<std::string> unknown_class_names;
  std::optional<std::string> cumulative_base;
};

}  // namespace opseg
