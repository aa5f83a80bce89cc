#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "opseg/core.hpp"
#include "opseg/kmeans.hpp"
#include "opseg/proposals.hpp"
#include "opseg/reference.hpp"
#include "opseg/rng.hpp"

namespace opseg {

// ---------------------------------------------------------------------------
// Feature-space synthesis: planted unknown classes as tight unit-sphere
// clouds plus uniform distractors, with the ground truth kept for scoring
// discovery runs.
// ---------------------------------------------------------------------------

struct SynthFeatureConfig {
  std::uint32_t n_planted_classes = 8;
  std::uint32_t points_per_class = 500;
  double distractor_fraction = 0.4;      // fraction of the whole stream
  double intra_class_cos_dist_max = 0.05;  // bound on same-class pairs
  double inter_class_cos_dist_min = 0.3;   // bound on cross-class pairs
  double planted_objectness_min = 0.92;
  double planted_objectness_max = 1.0;
  double distractor_objectness_min = 0.0;
  double distractor_objectness_max = 0.5;
  std::uint32_t feature_dim = 1024;
  std::uint32_t proposals_per_step = 20;
  std::int32_t box_size = 40;  // area 1600 clears the 32^2 filter
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (!(distractor_fraction >= 0.0 && distractor_fraction <= 1.0))
      throw std::invalid_argument("distractor_fraction must be in [0, 1]");
    if (inter_class_cos_dist_min <= intra_class_cos_dist_max)
      throw std::invalid_argument("inter-class separation must exceed the intra-class bound");
    if (feature_dim == 0 || proposals_per_step == 0)
      throw std::invalid_argument("feature_dim and proposals_per_step must be >= 1");
  }
};

inline constexpr std::int32_t kDistractor = -1;

/// Batched proposal stream plus per-record planted-class assignments
/// (kDistractor for noise). Records are keyed by (image_id, box) for lookup.
struct SynthFeatures {
  std::vector<std::vector<ProposalRecord>> steps;
  std::vector<std::vector<std::int32_t>> truth;  // parallel to steps
  std::vector<std::vector<double>> centroids;    // planted directions
  std::uint64_t n_planted = 0;
  std::uint64_t n_distractors = 0;

  using Key = std::tuple<ImageId, std::int32_t, std::int32_t, std::int32_t,
                         std::int32_t>;
  std::map<Key, std::int32_t> index;

  std::int32_t truth_of(ImageId image_id, const BoundingBox& box) const {
    auto it = index.find({image_id, box.x, box.y, box.w, box.h});
    if (it == index.end())
      throw std::out_of_range("no synthetic record at that image/box");
    return it->second;
  }
};

/// Generate the planted stream. Separation is enforced by rejection
/// sampling with chord-bound margins, so the configured intra/inter
/// constraints hold for every emitted pair; 1000 consecutive rejections
/// mean the constraints are infeasible and raise an error.
inline SynthFeatures generate_synthetic_features(const SynthFeatureConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.rng_seed);
  const std::size_t dim = cfg.feature_dim;

  // Members stay within intra/4 of their centroid: two members of one class
  // are then within the intra bound (chord triangle inequality), and
  // centroids separated by (sqrt(2*inter) + 2*sqrt(2*r))^2 / 2 keep any
  // cross-class pair at least inter apart.
  const double member_radius = cfg.intra_class_cos_dist_max / 4.0;
  const double chord = std::sqrt(2.0 * cfg.inter_class_cos_dist_min);
  const double member_chord = std::sqrt(2.0 * member_radius);
  const double centroid_min_dist =
      0.5 * (chord + 2.0 * member_chord) * (chord + 2.0 * member_chord);
  const double distractor_min_dist =
      0.5 * (chord + member_chord) * (chord + member_chord);

  auto random_unit = [&]() {
    std::vector<double> v(dim);
    for (double& x : v) x = gaussian(rng);
    return normalized(v);
  };

  SynthFeatures out;
  for (std::uint32_t c = 0; c < cfg.n_planted_classes; ++c) {
    int tries = 0;
    while (true) {
      if (++tries > 1000)
        throw std::runtime_error("infeasible separation: cannot place centroid " +
                                 std::to_string(c));
      std::vector<double> cand = random_unit();
      bool ok = true;
      for (const auto& other : out.centroids)
        if (cos_distance(cand, other) < centroid_min_dist) {
          ok = false;
          break;
        }
      if (ok) {
        out.centroids.push_back(std::move(cand));
        break;
      }
    }
  }

  const double sigma = std::sqrt(member_radius / static_cast<double>(dim));
  auto planted_point = [&](std::uint32_t cls) {
    int tries = 0;
    while (true) {
      if (++tries > 1000)
        throw std::runtime_error("infeasible separation: intra-class radius too tight");
      std::vector<double> v = out.centroids[cls];
      for (double& x : v) x += sigma * gaussian(rng);
      v = normalized(v);
      if (cos_distance(v, out.centroids[cls]) <= member_radius) return v;
    }
  };
  auto distractor_point = [&]() {
    int tries = 0;
    while (true) {
      if (++tries > 1000)
        throw std::runtime_error("infeasible separation: distractor rejection loop");
      std::vector<double> v = random_unit();
      bool ok = true;
      for (const auto& c : out.centroids)
        if (cos_distance(v, c) < distractor_min_dist) {
          ok = false;
          break;
        }
      if (ok) return v;
    }
  };

  // distractor_fraction 1 means no planted structure at all: the stream
  // keeps its nominal size but every record is noise.
  const std::uint64_t nominal =
      static_cast<std::uint64_t>(cfg.n_planted_classes) * cfg.points_per_class;
  if (cfg.distractor_fraction == 1.0) {
    out.n_planted = 0;
    out.n_distractors = nominal;
  } else {
    out.n_planted = nominal;
    out.n_distractors = static_cast<std::uint64_t>(std::llround(
        static_cast<double>(nominal) * cfg.distractor_fraction /
        (1.0 - cfg.distractor_fraction)));
  }

  std::vector<std::int32_t> labels;
  labels.reserve(out.n_planted + out.n_distractors);
  if (out.n_planted > 0)
    for (std::uint32_t c = 0; c < cfg.n_planted_classes; ++c)
      labels.insert(labels.end(), cfg.points_per_class,
                    static_cast<std::int32_t>(c));
  labels.insert(labels.end(), out.n_distractors, kDistractor);
  // Fisher-Yates so planted and distractor records interleave.
  for (std::size_t i = labels.size(); i > 1; --i)
    std::swap(labels[i - 1], labels[uniform_index(rng, i)]);

  const std::int32_t stride = cfg.box_size + 8;
  for (std::size_t start = 0; start < labels.size();
       start += cfg.proposals_per_step) {
    const ImageId image = out.steps.size();
    std::vector<ProposalRecord> batch;
    std::vector<std::int32_t> batch_truth;
    const std::size_t end =
        std::min(labels.size(), start + cfg.proposals_per_step);
    for (std::size_t i = start; i < end; ++i) {
      const std::int32_t label = labels[i];
      ProposalRecord r;
      r.image_id = image;
      const std::int32_t slot = static_cast<std::int32_t>(i - start);
      r.box = {slot * stride, 0, cfg.box_size, cfg.box_size};
      r.in_void = true;
      std::vector<double> f;
      if (label == kDistractor) {
        r.objectness = uniform_range(rng, cfg.distractor_objectness_min,
                                     cfg.distractor_objectness_max);
        f = distractor_point();
      } else {
        r.objectness = uniform_range(rng, cfg.planted_objectness_min,
                                     cfg.planted_objectness_max);
        f = planted_point(static_cast<std::uint32_t>(label));
      }
      r.feature.assign(f.begin(), f.end());
      out.index[{r.image_id, r.box.x, r.box.y, r.box.w, r.box.h}] = label;
      batch.push_back(std::move(r));
      batch_truth.push_back(label);
    }
    out.steps.push_back(std::move(batch));
    out.truth.push_back(std::move(batch_truth));
  }
  return out;
}

/// Ground-truth assignment file for a generated stream: CSV records
/// (image_id, x, y, w, h, class_id) with -1 for distractors.
inline void write_truth_file(const std::string& path, const SynthFeatures& sf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create truth file: " + path);
  out << "image_id,x,y,w,h,class_id\n";
  for (std::size_t s = 0; s < sf.steps.size(); ++s)
    for (std::size_t i = 0; i < sf.steps[s].size(); ++i) {
      const ProposalRecord& r = sf.steps[s][i];
      out << r.image_id << ',' << r.box.x << ',' << r.box.y << ',' << r.box.w
          << ',' << r.box.h << ',' << sf.truth[s][i] << '\n';
    }
}

inline std::vector<ProposalRecord> flatten_steps(const SynthFeatures& sf) {
  std::vector<ProposalRecord> all;
  for (const auto& batch : sf.steps)
    all.insert(all.end(), batch.begin(), batch.end());
  return all;
}

/// Re-batch a flat record list by image id (ascending); the discovery CLI
/// treats each image as one step.
inline std::vector<std::vector<ProposalRecord>> batch_by_image(
    std::vector<ProposalRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const ProposalRecord& a, const ProposalRecord& b) {
                     return a.image_id < b.image_id;
                   });
  std::vector<std::vector<ProposalRecord>> steps;
  for (ProposalRecord& r : records) {
    if (steps.empty() || steps.back().front().image_id != r.image_id)
      steps.emplace_back();
    steps.back().push_back(std::move(r));
  }
  return steps;
}

// ---------------------------------------------------------------------------
// Panoptic-map synthesis: ground truth from random rectangles, predictions
// by controlled perturbation, expected metrics from the reference matcher.
// ---------------------------------------------------------------------------

struct SynthPanopticConfig {
  std::uint32_t n_images = 20;
  int width = 64;
  int height = 64;
  std::uint32_t segments_per_image = 8;
  std::uint32_t n_things = 6;
  std::uint32_t n_stuffs = 4;
  std::uint32_t n_unknown_things = 2;
  std::vector<std::string> thing_names;  // optional; override n_things
  std::vector<std::string> stuff_names;  // optional; override n_stuffs
  double crowd_prob = 0.1;
  double drop_prob = 0.0;
  double class_flip_prob = 0.0;
  double erode_prob = 0.0;
  double add_prob = 0.0;
  int erode_iters = 1;
  bool compute_expected = true;  // reference matcher is quadratic; optional
  std::uint64_t rng_seed = 7;
};

struct SynthPanoptic {
  CategoryTable categories;
  std::vector<ImageId> image_ids;
  std::vector<PanopticMap> gt;
  std::vector<PanopticMap> pred;
  MetricReport expected;
};

inline CategoryTable make_synth_categories(const SynthPanopticConfig& cfg) {
  std::vector<CategoryEntry> entries;
  entries.push_back({0, "void", Kind::Stuff, Status::Void});
  CategoryId next = 1;
  const std::uint32_t n_things =
      cfg.thing_names.empty() ? cfg.n_things
                              : static_cast<std::uint32_t>(cfg.thing_names.size());
  const std::uint32_t n_stuffs =
      cfg.stuff_names.empty() ? cfg.n_stuffs
                              : static_cast<std::uint32_t>(cfg.stuff_names.size());
  for (std::uint32_t i = 0; i < n_things; ++i, ++next)
    entries.push_back({next,
                       cfg.thing_names.empty() ? "thing-" + std::to_string(i + 1)
                                               : cfg.thing_names[i],
                       Kind::Thing, Status::Known});
  for (std::uint32_t i = 0; i < n_stuffs; ++i, ++next)
    entries.push_back({next,
                       cfg.stuff_names.empty() ? "stuff-" + std::to_string(i + 1)
                                               : cfg.stuff_names[i],
                       Kind::Stuff, Status::Known});
  for (std::uint32_t i = 0; i < cfg.n_unknown_things; ++i, ++next)
    entries.push_back({next, "unknown-" + std::to_string(i + 1), Kind::Thing,
                       Status::Unknown});
  return CategoryTable(std::move(entries));
}

/// Random panoptic map from overgrown rectangles; later rectangles overwrite
/// earlier ones, fully covered ones disappear, the rest of the grid is void.
inline PanopticMap random_panoptic_map(std::mt19937_64& rng, int width,
                                       int height, std::uint32_t max_segments,
                                       const CategoryTable& cats,
                                       double crowd_prob) {
  std::vector<CategoryId> usable;
  for (const CategoryEntry& e : cats.entries())
    if (e.status != Status::Void) usable.push_back(e.id);
  if (usable.empty()) throw std::invalid_argument("no non-void categories");

  PanopticMap map;
  map.width = width;
  map.height = height;
  map.pixels.assign(static_cast<std::size_t>(width) * height, kVoidSegment);

  const int max_w = std::max(2, width / 2);
  const int max_h = std::max(2, height / 2);
  const std::uint32_t n =
      1 + static_cast<std::uint32_t>(uniform_index(rng, max_segments));
  for (SegmentId id = 1; id <= n; ++id) {
    const int w = 1 + static_cast<int>(uniform_index(rng, max_w));
    const int h = 1 + static_cast<int>(uniform_index(rng, max_h));
    const int x0 = static_cast<int>(uniform_index(rng, std::max(1, width - w)));
    const int y0 = static_cast<int>(uniform_index(rng, std::max(1, height - h)));
    for (int y = y0; y < std::min(height, y0 + h); ++y)
      for (int x = x0; x < std::min(width, x0 + w); ++x) map.at(x, y) = id;
    const CategoryId cat = usable[uniform_index(rng, usable.size())];
    const bool crowd =
        cats.at(cat).kind == Kind::Thing && uniform_unit(rng) < crowd_prob;
    map.segments[id] = {cat, crowd, 0};
  }
  map.recompute_areas();
  return map;
}

namespace detail {

inline void erode_segment(PanopticMap& map, SegmentId id, int iters) {
  for (int it = 0; it < iters; ++it) {
    std::vector<std::size_t> boundary;
    for (int y = 0; y < map.height; ++y)
      for (int x = 0; x < map.width; ++x) {
        if (map.at(x, y) != id) continue;
        const bool edge = x == 0 || y == 0 || x == map.width - 1 ||
                          y == map.height - 1 || map.at(x - 1, y) != id ||
                          map.at(x + 1, y) != id || map.at(x, y - 1) != id ||
                          map.at(x, y + 1) != id;
        if (edge)
          boundary.push_back(static_cast<std::size_t>(y) * map.width + x);
      }
    for (std::size_t i : boundary) map.pixels[i] = kVoidSegment;
  }
}

}  // namespace detail

inline SynthPanoptic generate_synthetic_panoptic(const SynthPanopticConfig& cfg) {
  std::mt19937_64 rng(cfg.rng_seed);
  SynthPanoptic out;
  out.categories = make_synth_categories(cfg);

  std::vector<CategoryId> things, stuffs;
  for (const CategoryEntry& e : out.categories.entries()) {
    if (e.status == Status::Void) continue;
    (e.kind == Kind::Thing ? things : stuffs).push_back(e.id);
  }

  for (std::uint32_t i = 0; i < cfg.n_images; ++i) {
    out.image_ids.push_back(i + 1);
    PanopticMap gt = random_panoptic_map(rng, cfg.width, cfg.height,
                                         cfg.segments_per_image, out.categories,
                                         cfg.crowd_prob);
    PanopticMap pred = gt;

    // Perturb predictions segment by segment; draws are consumed
    // unconditionally so the stream stays aligned across configs.
    std::vector<SegmentId> ids;
    for (const auto& [sid, info] : pred.segments) ids.push_back(sid);
    for (SegmentId sid : ids) {
      const double u_drop = uniform_unit(rng);
      const double u_flip = uniform_unit(rng);
      const double u_erode = uniform_unit(rng);
      if (u_drop < cfg.drop_prob) {
        for (SegmentId& px : pred.pixels)
          if (px == sid) px = kVoidSegment;
        pred.segments.erase(sid);
        continue;
      }
      if (u_flip < cfg.class_flip_prob) {
        SegmentInfo& info = pred.segments.at(sid);
        const Kind kind = out.categories.at(info.category_id).kind;
        std::vector<CategoryId> pool;
        for (CategoryId c : kind == Kind::Thing ? things : stuffs)
          if (c != info.category_id) pool.push_back(c);
        if (!pool.empty())
          info.category_id = pool[uniform_index(rng, pool.size())];
      }
      if (u_erode < cfg.erode_prob)
        detail::erode_segment(pred, sid, cfg.erode_iters);
    }
    if (uniform_unit(rng) < cfg.add_prob) {
      // Spurious prediction dropped over whatever is there.
      const SegmentId sid = (pred.segments.empty() ? 0 : pred.segments.rbegin()->first) + 1;
      const int w = 2 + static_cast<int>(uniform_index(rng, std::max(2, cfg.width / 3)));
      const int h = 2 + static_cast<int>(uniform_index(rng, std::max(2, cfg.height / 3)));
      const int x0 = static_cast<int>(uniform_index(rng, std::max(1, cfg.width - w)));
      const int y0 = static_cast<int>(uniform_index(rng, std::max(1, cfg.height - h)));
      for (int y = y0; y < std::min(cfg.height, y0 + h); ++y)
        for (int x = x0; x < std::min(cfg.width, x0 + w); ++x)
          pred.at(x, y) = sid;
      std::vector<CategoryId> all = things;
      all.insert(all.end(), stuffs.begin(), stuffs.end());
      pred.segments[sid] = {all[uniform_index(rng, all.size())], false, 0};
    }
    pred.recompute_areas();

    out.gt.push_back(std::move(gt));
    out.pred.push_back(std::move(pred));
  }

  if (cfg.compute_expected)
    out.expected = reference::evaluate(out.gt, out.pred, out.categories);
  return out;
}

}  // namespace opseg
