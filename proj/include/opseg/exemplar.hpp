#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "opseg/kmeans.hpp"
#include "opseg/proposals.hpp"

namespace opseg {

/// Discovery hyper-parameters. Defaults are the reference operating point:
/// 128 clusters every 200 steps, top 10% of clusters by tightness, the
/// 0.9 -> 0.99 objectness ramp and the 0.025 -> 0.01 mining-distance ramp
/// (both advancing linearly with the number of found classes and saturating
/// at 20, past the largest benchmark split's 16 unknowns), membership
/// distance 0.15, boxes above 32^2 pixels, at most 20 proposals per batch,
/// and an NMS IoU of 1e-7 so any overlap deduplicates.
struct EngineConfig {
  std::uint32_t k_clusters = 128;
  std::uint32_t cluster_interval_steps = 200;
  double top_cluster_fraction = 0.10;
  double objectness_start = 0.90;
  double objectness_end = 0.99;
  double objectness_ramp_per_class = 0.0045;
  double membership_cos_dist = 0.15;
  double mining_cos_dist_start = 0.025;
  double mining_cos_dist_end = 0.01;
  double mining_ramp_per_class = 0.00075;
  std::size_t max_proposals_per_batch = 20;
  std::int64_t min_box_area = 32 * 32;
  double nms_iou = 1e-7;
  std::uint64_t rng_seed = 0;

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (k_clusters == 0) throw std::invalid_argument("k_clusters must be >= 1");
    if (cluster_interval_steps == 0)
      throw std::invalid_argument("cluster_interval_steps must be >= 1");
    if (!(top_cluster_fraction > 0.0 && top_cluster_fraction <= 1.0))
      throw std::invalid_argument("top_cluster_fraction must be in (0, 1]");
    if (!in01(objectness_start) || !in01(objectness_end) ||
        objectness_end < objectness_start)
      throw std::invalid_argument("objectness thresholds must satisfy 0 <= start <= end <= 1");
    auto dist_ok = [](double v) { return v >= 0.0 && v <= 2.0; };
    if (!dist_ok(membership_cos_dist) || !dist_ok(mining_cos_dist_start) ||
        !dist_ok(mining_cos_dist_end) ||
        mining_cos_dist_end > mining_cos_dist_start)
      throw std::invalid_argument("cosine distances must be in [0, 2] with end <= start");
    if (nms_iou < 0.0) throw std::invalid_argument("nms_iou must be >= 0");
  }

  /// Objectness gate after `found` classes: linear ramp from start, capped
  /// at end (reaches the cap at 20 classes with the default slope).
  double objectness_threshold(std::size_t found) const {
    return std::min(objectness_end,
                    objectness_start + objectness_ramp_per_class *
                                           static_cast<double>(found));
  }

  /// Mining distance after `found` classes: linear decay from start,
  /// floored at end.
  double mining_distance(std::size_t found) const {
    return std::max(mining_cos_dist_end,
                    mining_cos_dist_start - mining_ramp_per_class *
                                                static_cast<double>(found));
  }
};

/// A stored exemplar: the original proposal plus its current unit-normalized
/// feature (recomputed whenever the feature provider is refreshed).
struct Exemplar {
  ProposalRecord record;
  std::vector<double> feature;
};

struct UnknownClass {
  std::uint32_t id = 0;
  std::vector<Exemplar> exemplars;
};

/// Discovered unknown classes with the adaptive thresholds. Class ids are
/// assigned sequentially and never reused within a run.
struct ExemplarStore {
  std::map<std::uint32_t, UnknownClass> classes;
  double current_objectness_threshold = 0.0;
  double current_mining_distance = 0.0;
  std::uint32_t found_class_count = 0;
  std::uint32_t next_class_id = 0;

  static ExemplarStore init(const EngineConfig& cfg) {
    ExemplarStore s;
    s.current_objectness_threshold = cfg.objectness_threshold(0);
    s.current_mining_distance = cfg.mining_distance(0);
    return s;
  }

  bool empty() const { return classes.empty(); }

  std::size_t exemplar_count() const {
    std::size_t n = 0;
    for (const auto& [id, cls] : classes) n += cls.exemplars.size();
    return n;
  }
};

/// Per-cluster summary from one clustering round. Members index into the
/// buffer the round clustered.
struct ClusterReport {
  std::vector<double> centroid;  // unit vector
  std::vector<std::size_t> members;
  double avg_cos_similarity = 0.0;  // between members and centroid
  double avg_objectness = 0.0;
};

inline std::vector<double> unit_feature(const ProposalRecord& r) {
  std::vector<double> f(r.feature.begin(), r.feature.end());
  return normalized(f);
}

/// Build reports for the non-empty clusters of a k-means round.
inline std::vector<ClusterReport> build_cluster_reports(
    const KMeansResult& km, std::span<const std::vector<double>> points,
    std::span<const ProposalRecord> buffer) {
  std::vector<ClusterReport> reports;
  for (std::uint32_t c = 0; c < km.centroids.size(); ++c) {
    ClusterReport rep;
    rep.centroid = km.centroids[c];
    for (std::size_t i = 0; i < km.assignments.size(); ++i)
      if (km.assignments[i] == c) rep.members.push_back(i);
    if (rep.members.empty()) continue;
    double sim = 0.0, obj = 0.0;
    for (std::size_t i : rep.members) {
      sim += dot(points[i], rep.centroid);
      obj += buffer[i].objectness;
    }
    rep.avg_cos_similarity = sim / static_cast<double>(rep.members.size());
    rep.avg_objectness = obj / static_cast<double>(rep.members.size());
    reports.push_back(std::move(rep));
  }
  return reports;
}

/// Found-class admission: rank clusters by tightness, keep the top
/// ceil(fraction * k), and accept those whose average objectness clears the
/// current ramp value. Members within membership_cos_dist of the centroid
/// become the exemplars of a fresh class; a cluster whose members all fall
/// outside that radius founds nothing. Thresholds advance as classes are
/// created. Returns the new class ids.
inline std::vector<std::uint32_t> select_unknown_clusters(
    std::span<const ClusterReport> reports, std::span<const ProposalRecord> buffer,
    ExemplarStore& store, const EngineConfig& cfg) {
  std::vector<std::size_t> order(reports.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (reports[a].avg_cos_similarity != reports[b].avg_cos_similarity)
      return reports[a].avg_cos_similarity > reports[b].avg_cos_similarity;
    return a < b;
  });
  const std::size_t considered = std::min<std::size_t>(
      order.size(),
      static_cast<std::size_t>(std::ceil(cfg.top_cluster_fraction *
                                         static_cast<double>(cfg.k_clusters))));

  std::vector<std::uint32_t> created;
  for (std::size_t rank = 0; rank < considered; ++rank) {
    const ClusterReport& rep = reports[order[rank]];
    if (rep.avg_objectness < store.current_objectness_threshold) continue;

    UnknownClass cls;
    for (std::size_t i : rep.members) {
      const std::vector<double> f = unit_feature(buffer[i]);
      if (cos_distance(f, rep.centroid) <= cfg.membership_cos_dist)
        cls.exemplars.push_back({buffer[i], f});
    }
    if (cls.exemplars.empty()) continue;

    cls.id = store.next_class_id++;
    created.push_back(cls.id);
    store.classes.emplace(cls.id, std::move(cls));
    store.found_class_count += 1;
    store.current_objectness_threshold =
        cfg.objectness_threshold(store.found_class_count);
    store.current_mining_distance = cfg.mining_distance(store.found_class_count);
  }
  return created;
}

struct MinedExemplar {
  std::size_t proposal_index = 0;
  std::uint32_t class_id = 0;
  double distance = 0.0;
};

/// Grow existing classes by similarity: a proposal joins the class holding
/// its nearest exemplar when that cosine distance is within the current
/// mining threshold (ties to the lowest class id). Proposals are processed
/// in order and accepted ones become exemplars immediately, visible to the
/// rest of the batch. No-op on an empty store.
inline std::vector<MinedExemplar> mine_exemplars(
    std::span<const ProposalRecord> proposals, ExemplarStore& store,
    [[maybe_unused]] const EngineConfig& cfg) {
  std::vector<MinedExemplar> accepted;
  if (store.empty()) return accepted;

  const std::size_t dim =
      store.classes.begin()->second.exemplars.front().feature.size();

  for (std::size_t pi = 0; pi < proposals.size(); ++pi) {
    const ProposalRecord& p = proposals[pi];
    if (p.feature.size() != dim)
      throw std::invalid_argument(
          "mine_exemplars: proposal feature dimension " +
          std::to_string(p.feature.size()) + " does not match store " +
          std::to_string(dim));
    const std::vector<double> f = unit_feature(p);

    double best_dist = std::numeric_limits<double>::infinity();
    std::uint32_t best_class = 0;
    for (const auto& [cid, cls] : store.classes) {
      for (const Exemplar& ex : cls.exemplars) {
        const double d = cos_distance(f, ex.feature);
        if (d < best_dist) {  // strict: ties keep the lowest class id
          best_dist = d;
          best_class = cid;
        }
      }
    }
    if (best_dist <= store.current_mining_distance) {
      store.classes.at(best_class).exemplars.push_back({p, f});
      accepted.push_back({pi, best_class, best_dist});
    }
  }
  return accepted;
}

/// Callback producing a fresh feature for a stored exemplar's patch.
using FeatureProvider =
    std::function<std::vector<float>(const ProposalRecord&)>;

/// Recompute and re-normalize every stored exemplar feature. Class
/// membership never changes here. A provider failure aborts with the
/// offending exemplar named.
inline void refresh_features(ExemplarStore& store,
                             const FeatureProvider& provider) {
  for (auto& [cid, cls] : store.classes) {
    for (std::size_t i = 0; i < cls.exemplars.size(); ++i) {
      Exemplar& ex = cls.exemplars[i];
      std::vector<float> fresh;
      try {
        fresh = provider(ex.record);
      } catch (const std::exception& e) {
        throw std::runtime_error(
            "feature provider failed for class " + std::to_string(cid) +
            " exemplar " + std::to_string(i) + " (image " +
            std::to_string(ex.record.image_id) + "): " + e.what());
      }
      std::vector<double> f(fresh.begin(), fresh.end());
      ex.feature = normalized(f);
    }
  }
}

enum class LabelSource { Cluster, Mined };

struct PseudoLabel {
  ImageId image_id = 0;
  BoundingBox box;
  std::uint32_t class_id = 0;
  LabelSource source = LabelSource::Cluster;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

struct DiscoveryResult {
  ExemplarStore store;
  std::vector<PseudoLabel> labels;
};

/// The alternating discovery loop over an ordered stream of proposal
/// batches. Per step: NMS-dedup, objectness-weighted sampling of void
/// proposals, buffer, then mining against the current store. At every
/// cluster interval: refresh stored features, cluster the buffer, admit new
/// classes, clear the buffer (the buffer holds fresh samples only, never
/// previously stored exemplars). Returns the final store plus every
/// clustered or mined exemplar as a pseudo-label.
inline DiscoveryResult run_discovery(
    std::span<const std::vector<ProposalRecord>> steps, const EngineConfig& cfg,
    const FeatureProvider& provider) {
  cfg.validate();
  DiscoveryResult out;
  out.store = ExemplarStore::init(cfg);
  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<ProposalRecord> buffer;

  for (std::size_t step = 1; step <= steps.size(); ++step) {
    try {
      std::vector<ProposalRecord> deduped =
          dedup_nms(steps[step - 1], cfg.nms_iou);
      std::vector<ProposalRecord> sampled = sample_proposals(
          deduped, cfg.max_proposals_per_batch, cfg.min_box_area, rng);
      buffer.insert(buffer.end(), sampled.begin(), sampled.end());

      for (const MinedExemplar& m : mine_exemplars(sampled, out.store, cfg))
        out.labels.push_back({sampled[m.proposal_index].image_id,
                              sampled[m.proposal_index].box, m.class_id,
                              LabelSource::Mined});

      if (step % cfg.cluster_interval_steps == 0) {
        refresh_features(out.store, provider);

        if (!buffer.empty()) {
          std::vector<std::vector<double>> points;
          points.reserve(buffer.size());
          for (const ProposalRecord& r : buffer)
            points.push_back(unit_feature(r));

          const KMeansResult km =
              spherical_kmeans(points, cfg.k_clusters, rng());
          const std::vector<ClusterReport> reports =
              build_cluster_reports(km, points, buffer);
          const std::vector<std::uint32_t> fresh =
              select_unknown_clusters(reports, buffer, out.store, cfg);
          for (std::uint32_t cid : fresh)
            for (const Exemplar& ex : out.store.classes.at(cid).exemplars)
              out.labels.push_back({ex.record.image_id, ex.record.box, cid,
                                    LabelSource::Cluster});
          buffer.clear();
        }
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("discovery step " + std::to_string(step) + ": " +
                               e.what());
    }
  }
  return out;
}

inline const char* to_string(LabelSource s) {
  return s == LabelSource::Cluster ? "cluster" : "mined";
}

/// Pseudo-label text output: one comma-separated record per line.
inline void write_pseudo_labels(const std::string& path,
                                std::span<const PseudoLabel> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create label file: " + path);
  out << "image_id,x,y,w,h,class_id,source\n";
  for (const PseudoLabel& l : labels)
    out << l.image_id << ',' << l.box.x << ',' << l.box.y << ',' << l.box.w
        << ',' << l.box.h << ',' << l.class_id << ',' << to_string(l.source)
        << '\n';
}

inline std::vector<PseudoLabel> read_pseudo_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "image_id,x,y,w,h,class_id,source")
    throw std::runtime_error("bad pseudo-label header in " + path);
  std::vector<PseudoLabel> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    PseudoLabel l;
    char source[16] = {0};
    unsigned long long img = 0, cid = 0;
    if (std::sscanf(line.c_str(), "%llu,%d,%d,%d,%d,%llu,%15s", &img, &l.box.x,
                    &l.box.y, &l.box.w, &l.box.h, &cid, source) != 7)
      throw std::runtime_error("bad pseudo-label line: " + line);
    l.image_id = img;
    l.class_id = static_cast<std::uint32_t>(cid);
    if (std::string(source) == "cluster")
      l.source = LabelSource::Cluster;
    else if (std::string(source) == "mined")
      l.source = LabelSource::Mined;
    else
      throw std::runtime_error("bad pseudo-label source: " + line);
    labels.push_back(l);
  }
  return labels;
}

}  // namespace opseg
