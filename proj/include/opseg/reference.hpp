#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "opseg/core.hpp"

namespace opseg::reference {

// Slow, obviously-correct matcher used as the independent check against the
// histogram-based engine. Every intersection is recounted with a fresh pixel
// scan; nothing here shares code with opseg/metrics.hpp.

struct RefMatch {
  SegmentId gt_segment = 0;
  SegmentId pred_segment = 0;
  double iou = 0.0;
};

struct RefMatchResult {
  std::vector<RefMatch> matches;
  std::vector<SegmentId> unmatched_gt;
  std::vector<SegmentId> unmatched_pred;
  std::vector<SegmentId> ignored_pred;
  std::map<CategoryId, CategoryMetrics> tallies;
};

inline std::uint64_t count_intersection(const PanopticMap& gt,
                                        const PanopticMap& pred, SegmentId g,
                                        SegmentId p) {
  std::uint64_t n = 0;
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x)
      if (gt.at(x, y) == g && pred.at(x, y) == p) ++n;
  return n;
}

inline std::uint64_t count_pixels(const PanopticMap& map, SegmentId id) {
  std::uint64_t n = 0;
  for (SegmentId v : map.pixels)
    if (v == id) ++n;
  return n;
}

inline RefMatchResult match_segments(const PanopticMap& gt,
                                     const PanopticMap& pred,
                                     const CategoryTable& cats) {
  if (gt.width != pred.width || gt.height != pred.height)
    throw std::invalid_argument("reference matcher: dimension mismatch");

  RefMatchResult result;
  std::map<SegmentId, bool> gt_matched, pred_matched;

  for (const auto& [g, gi] : gt.segments) {
    if (gi.iscrowd) continue;
    for (const auto& [p, pi] : pred.segments) {
      if (cats.eval_class(gi.category_id) != cats.eval_class(pi.category_id))
        continue;
      const std::uint64_t inter = count_intersection(gt, pred, g, p);
      if (inter == 0) continue;
      const std::uint64_t gt_area = count_pixels(gt, g);
      const std::uint64_t pred_area = count_pixels(pred, p);
      const std::uint64_t pred_on_void =
          count_intersection(gt, pred, kVoidSegment, p);
      const double iou =
          static_cast<double>(inter) /
          static_cast<double>(gt_area + pred_area - inter - pred_on_void);
      if (iou > 0.5) {
        result.matches.push_back({g, p, iou});
        gt_matched[g] = true;
        pred_matched[p] = true;
        CategoryMetrics& m = result.tallies[cats.eval_class(gi.category_id)];
        m.iou_sum += iou;
        m.tp += 1;
      }
    }
  }

  for (const auto& [g, gi] : gt.segments) {
    if (gi.iscrowd || gt_matched.count(g)) continue;
    result.unmatched_gt.push_back(g);
    result.tallies[cats.eval_class(gi.category_id)].fn += 1;
  }

  for (const auto& [p, pi] : pred.segments) {
    if (pred_matched.count(p)) continue;
    std::uint64_t ignore = count_intersection(gt, pred, kVoidSegment, p);
    for (const auto& [g, gi] : gt.segments)
      if (gi.iscrowd &&
          cats.eval_class(gi.category_id) == cats.eval_class(pi.category_id))
        ignore += count_intersection(gt, pred, g, p);
    if (static_cast<double>(ignore) >
        0.5 * static_cast<double>(count_pixels(pred, p))) {
      result.ignored_pred.push_back(p);
    } else {
      result.unmatched_pred.push_back(p);
      result.tallies[cats.eval_class(pi.category_id)].fp += 1;
    }
  }
  return result;
}

/// Sum tallies in list order and derive the report with the PQ = SQ * RQ
/// decomposition; group means are unweighted over populated categories.
inline MetricReport aggregate(std::span<const RefMatchResult> results,
                              const CategoryTable& cats) {
  MetricReport report;
  for (const RefMatchResult& r : results)
    for (const auto& [cls, m] : r.tallies) {
      CategoryMetrics& acc = report.per_category[cls];
      acc.iou_sum += m.iou_sum;
      acc.tp += m.tp;
      acc.fp += m.fp;
      acc.fn += m.fn;
    }

  std::map<std::string, std::pair<GroupMetrics, std::size_t>> acc;
  for (auto& [cls, m] : report.per_category) {
    if (m.tp + m.fp + m.fn == 0) continue;
    m.sq = m.tp > 0 ? m.iou_sum / static_cast<double>(m.tp) : 0.0;
    m.rq = static_cast<double>(m.tp) /
           (static_cast<double>(m.tp) + 0.5 * static_cast<double>(m.fp) +
            0.5 * static_cast<double>(m.fn));
    m.pq = m.sq * m.rq;
    const char* group;
    if (cls == kCollapsedUnknown) {
      group = "Unknown";
    } else {
      group = cats.at(cls).kind == Kind::Thing ? "Known-Th" : "Known-St";
      auto& all = acc["All-Known"];
      all.first.pq += m.pq;
      all.first.sq += m.sq;
      all.first.rq += m.rq;
      all.second += 1;
    }
    auto& g = acc[group];
    g.first.pq += m.pq;
    g.first.sq += m.sq;
    g.first.rq += m.rq;
    g.second += 1;
  }
  for (const auto& [name, g] : acc) {
    const double n = static_cast<double>(g.second);
    report.groups[name] = {g.first.pq / n, g.first.sq / n, g.first.rq / n,
                           g.second};
  }
  return report;
}

inline MetricReport evaluate(std::span<const PanopticMap> gts,
                             std::span<const PanopticMap> preds,
                             const CategoryTable& cats) {
  if (gts.size() != preds.size())
    throw std::invalid_argument("reference evaluate: pair count mismatch");
  std::vector<RefMatchResult> results;
  results.reserve(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i)
    results.push_back(reference::match_segments(gts[i], preds[i], cats));
  return reference::aggregate(results, cats);
}

}  // namespace opseg::reference
