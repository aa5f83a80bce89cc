#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "opseg/core.hpp"

namespace opseg {

inline constexpr const char* kGroupAllKnown = "All-Known";
inline constexpr const char* kGroupKnownThing = "Known-Th";
inline constexpr const char* kGroupKnownStuff = "Known-St";
inline constexpr const char* kGroupUnknown = "Unknown";

/// Joint histogram key: gt segment id in the high 32 bits, pred segment id
/// in the low 32 bits. Id 0 (void) participates on both sides.
inline std::uint64_t pair_key(SegmentId gt, SegmentId pred) {
  return (static_cast<std::uint64_t>(gt) << 32) | pred;
}

using IntersectHistogram = std::unordered_map<std::uint64_t, std::uint64_t>;

/// Single-pass joint histogram of (gt id, pred id) pixel pairs. Counts over
/// all buckets sum to width*height. Segment maps are run-structured, so the
/// slot of the previous pixel is cached to skip hash lookups within runs.
inline IntersectHistogram intersect_histogram(const PanopticMap& gt,
                                              const PanopticMap& pred) {
  if (gt.width != pred.width || gt.height != pred.height)
    throw std::invalid_argument("intersect_histogram: dimension mismatch");
  IntersectHistogram hist;
  hist.reserve(gt.segments.size() * 2 + pred.segments.size() * 2 + 8);
  const std::size_t n = gt.pixels.size();
  std::uint64_t last_key = ~0ull;
  std::uint64_t* last_slot = nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t key = pair_key(gt.pixels[i], pred.pixels[i]);
    if (key != last_key) {
      last_slot = &hist[key];
      last_key = key;
    }
    ++*last_slot;
  }
  return hist;
}

struct Match {
  SegmentId gt_segment = 0;
  SegmentId pred_segment = 0;
  double iou = 0.0;
};

/// Per-image matching outcome. Tallies carry only iou_sum/tp/fp/fn; the
/// derived pq/sq/rq fields are filled by aggregate().
struct MatchResult {
  std::vector<Match> matches;
  std::vector<SegmentId> unmatched_gt;    // counted as FN (crowd excluded)
  std::vector<SegmentId> unmatched_pred;  // counted as FP
  std::vector<SegmentId> ignored_pred;    // removed from FP by the void/crowd rule
  std::map<CategoryId, CategoryMetrics> tallies;  // keyed by evaluation class
};

/// Segment matching per the standard panoptic metric with the open-set
/// collapse applied: every unknown category counts as one evaluation class.
///
/// IoU(g, p) = |g n p| / (|g| + |p| - |g n p| - |p n GTvoid|); a pair with
/// IoU > 0.5 is a true positive. Crowd ground-truth segments never match and
/// never count as FN. An unmatched prediction whose pixels lie more than 50%
/// on ground-truth void plus same-class crowd regions is ignored, not FP.
inline MatchResult match_segments(const PanopticMap& gt, const PanopticMap& pred,
                                  const CategoryTable& cats) {
  if (gt.width != pred.width || gt.height != pred.height)
    throw std::invalid_argument("match_segments: dimension mismatch");

  const IntersectHistogram hist = intersect_histogram(gt, pred);

  auto eval_class_of = [&](const SegmentInfo& info) {
    return cats.eval_class(info.category_id);  // throws on unknown category id
  };
  std::unordered_map<SegmentId, CategoryId> gt_class, pred_class;
  for (const auto& [id, info] : gt.segments) gt_class[id] = eval_class_of(info);
  for (const auto& [id, info] : pred.segments) pred_class[id] = eval_class_of(info);

  // Pixels of each prediction lying on ground-truth void.
  std::unordered_map<SegmentId, std::uint64_t> pred_void_overlap;
  for (const auto& [id, info] : pred.segments) {
    auto it = hist.find(pair_key(kVoidSegment, id));
    pred_void_overlap[id] = it == hist.end() ? 0 : it->second;
  }

  MatchResult result;
  std::unordered_map<SegmentId, bool> gt_matched, pred_matched;

  for (const auto& [gt_id, gt_info] : gt.segments) {
    if (gt_info.iscrowd) continue;
    const CategoryId cls = gt_class[gt_id];
    for (const auto& [pred_id, pred_info] : pred.segments) {
      if (pred_class[pred_id] != cls) continue;
      auto it = hist.find(pair_key(gt_id, pred_id));
      if (it == hist.end()) continue;
      const std::uint64_t inter = it->second;
      const std::uint64_t uni = gt_info.area + pred_info.area - inter -
                                pred_void_overlap[pred_id];
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      if (iou > 0.5) {
        result.matches.push_back({gt_id, pred_id, iou});
        gt_matched[gt_id] = true;
        pred_matched[pred_id] = true;
        CategoryMetrics& m = result.tallies[cls];
        m.iou_sum += iou;
        m.tp += 1;
      }
    }
  }

  for (const auto& [gt_id, gt_info] : gt.segments) {
    if (gt_info.iscrowd || gt_matched.count(gt_id)) continue;
    result.unmatched_gt.push_back(gt_id);
    result.tallies[gt_class[gt_id]].fn += 1;
  }

  for (const auto& [pred_id, pred_info] : pred.segments) {
    if (pred_matched.count(pred_id)) continue;
    std::uint64_t ignore_area = pred_void_overlap[pred_id];
    for (const auto& [gt_id, gt_info] : gt.segments) {
      if (!gt_info.iscrowd || gt_class[gt_id] != pred_class[pred_id]) continue;
      auto it = hist.find(pair_key(gt_id, pred_id));
      if (it != hist.end()) ignore_area += it->second;
    }
    if (static_cast<double>(ignore_area) >
        0.5 * static_cast<double>(pred_info.area)) {
      result.ignored_pred.push_back(pred_id);
    } else {
      result.unmatched_pred.push_back(pred_id);
      result.tallies[pred_class[pred_id]].fp += 1;
    }
  }

  std::sort(result.matches.begin(), result.matches.end(),
            [](const Match& a, const Match& b) {
              return a.gt_segment < b.gt_segment;
            });
  std::sort(result.unmatched_gt.begin(), result.unmatched_gt.end());
  std::sort(result.unmatched_pred.begin(), result.unmatched_pred.end());
  std::sort(result.ignored_pred.begin(), result.ignored_pred.end());
  return result;
}

/// Sum per-image tallies (in list order) and derive pq/sq/rq per category
/// plus unweighted group means over populated categories.
inline MetricReport aggregate(std::span<const MatchResult> results,
                              const CategoryTable& cats) {
  MetricReport report;
  for (const MatchResult& r : results) {
    for (const auto& [cls, m] : r.tallies) {
      CategoryMetrics& acc = report.per_category[cls];
      acc.iou_sum += m.iou_sum;
      acc.tp += m.tp;
      acc.fp += m.fp;
      acc.fn += m.fn;
    }
  }

  struct GroupAcc {
    double pq = 0, sq = 0, rq = 0;
    std::size_t n = 0;
  };
  std::map<std::string, GroupAcc> acc;

  for (auto& [cls, m] : report.per_category) {
    if (m.tp + m.fp + m.fn == 0) continue;
    m.sq = m.tp > 0 ? m.iou_sum / static_cast<double>(m.tp) : 0.0;
    m.rq = static_cast<double>(m.tp) /
           (static_cast<double>(m.tp) + 0.5 * static_cast<double>(m.fp) +
            0.5 * static_cast<double>(m.fn));
    m.pq = m.sq * m.rq;

    auto add_to = [&](const char* group) {
      GroupAcc& g = acc[group];
      g.pq += m.pq;
      g.sq += m.sq;
      g.rq += m.rq;
      g.n += 1;
    };
    if (cls == kCollapsedUnknown) {
      add_to(kGroupUnknown);
    } else {
      add_to(kGroupAllKnown);
      add_to(cats.at(cls).kind == Kind::Thing ? kGroupKnownThing
                                              : kGroupKnownStuff);
    }
  }

  for (const auto& [name, g] : acc) {
    const double n = static_cast<double>(g.n);
    report.groups[name] = {g.pq / n, g.sq / n, g.rq / n, g.n};
  }
  return report;
}

struct EvalItem {
  ImageId image_id = 0;
  const PanopticMap* gt = nullptr;
  const PanopticMap* pred = nullptr;
};

/// Thread count resolution: explicit value, else OPSEG_THREADS, else the
/// hardware concurrency.
inline unsigned resolve_workers(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("OPSEG_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

/// Batch evaluation over image pairs. Matching runs concurrently; results
/// are reduced in image-id order, so the report is bit-identical for any
/// worker count and any input order.
inline MetricReport evaluate_dataset(std::span<const EvalItem> items,
                                     const CategoryTable& cats,
                                     unsigned workers = 0) {
  const unsigned n_workers =
      std::max(1u, std::min<unsigned>(resolve_workers(workers),
                                      std::max<std::size_t>(items.size(), 1)));

  std::vector<MatchResult> results(items.size());
  std::vector<std::string> errors(items.size());
  std::atomic<std::size_t> next{0};

  auto run = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      try {
        results[i] = match_segments(*items[i].gt, *items[i].pred, cats);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };

  if (n_workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (unsigned t = 0; t < n_workers; ++t) pool.emplace_back(run);
    for (std::thread& t : pool) t.join();
  }

  for (std::size_t i = 0; i < items.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("image " + std::to_string(items[i].image_id) +
                               ": " + errors[i]);

  // Deterministic reduction order: sort by image id.
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return items[a].image_id < items[b].image_id;
  });
  std::vector<MatchResult> sorted;
  sorted.reserve(results.size());
  for (std::size_t i : order) sorted.push_back(std::move(results[i]));
  return aggregate(sorted, cats);
}

inline std::string category_display_name(CategoryId cls,
                                         const CategoryTable& cats) {
  if (cls == kCollapsedUnknown) return "unknown";
  const CategoryEntry* e = cats.find(cls);
  return e ? e->name : std::to_string(cls);
}

using CategoryNamer = std::function<std::string(CategoryId)>;

namespace detail {
inline std::string pct1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%5.1f", v * 100.0);
  return buf;
}
}  // namespace detail

/// Text rendering, one record per category and per group; PQ/SQ/RQ printed
/// as percentages with one decimal.
inline std::string format_report_text(const MetricReport& report,
                                      const CategoryNamer& namer) {
  std::ostringstream out;
  out << "category                      PQ    SQ    RQ      TP    FP    FN\n";
  for (const auto& [cls, m] : report.per_category) {
    if (m.tp + m.fp + m.fn == 0) continue;
    char line[160];
    std::snprintf(line, sizeof(line), "%-26s %s %s %s  %6llu %5llu %5llu\n",
                  namer(cls).c_str(),
                  detail::pct1(m.pq).c_str(), detail::pct1(m.sq).c_str(),
                  detail::pct1(m.rq).c_str(),
                  static_cast<unsigned long long>(m.tp),
                  static_cast<unsigned long long>(m.fp),
                  static_cast<unsigned long long>(m.fn));
    out << line;
  }
  out << "\ngroup                         PQ    SQ    RQ   #cats\n";
  for (const char* name :
       {kGroupAllKnown, kGroupKnownThing, kGroupKnownStuff, kGroupUnknown}) {
    auto it = report.groups.find(name);
    if (it == report.groups.end()) continue;
    const GroupMetrics& g = it->second;
    char line[160];
    std::snprintf(line, sizeof(line), "%-26s %s %s %s  %6zu\n", name,
                  detail::pct1(g.pq).c_str(), detail::pct1(g.sq).c_str(),
                  detail::pct1(g.rq).c_str(), g.n_categories);
    out << line;
  }
  return out.str();
}

inline std::string format_report_text(const MetricReport& report,
                                      const CategoryTable& cats) {
  return format_report_text(report, [&](CategoryId cls) {
    return category_display_name(cls, cats);
  });
}

}  // namespace opseg
