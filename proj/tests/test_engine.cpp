#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "opseg/config.hpp"
#include "opseg/exemplar.hpp"
#include "opseg/synth.hpp"

using namespace opseg;
namespace fs = std::filesystem;

namespace {

ProposalRecord record_at(std::vector<float> feature, double objectness = 0.95,
                         ImageId image = 1, std::int32_t x = 0) {
  ProposalRecord r;
  r.image_id = image;
  r.box = {x, 0, 40, 40};
  r.objectness = objectness;
  r.in_void = true;
  r.feature = std::move(feature);
  return r;
}

// Unit 3-vector at a chosen cosine distance from (1, 0, 0).
std::vector<float> at_distance(double d) {
  const double c = 1.0 - d;
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  return {static_cast<float>(c), static_cast<float>(s), 0.0f};
}

const std::vector<double> kAxis = {1.0, 0.0, 0.0};

EngineConfig small_config() {
  EngineConfig cfg;
  cfg.k_clusters = 16;
  cfg.cluster_interval_steps = 10;
  cfg.top_cluster_fraction = 0.25;
  cfg.rng_seed = 3;
  return cfg;
}

FeatureProvider identity_provider() {
  return [](const ProposalRecord& r) { return r.feature; };
}

}  // namespace

TEST_CASE("engine config ramps and validation") {
  EngineConfig cfg;
  REQUIRE_NOTHROW(cfg.validate());

  // Reference operating point.
  REQUIRE(cfg.k_clusters == 128);
  REQUIRE(cfg.cluster_interval_steps == 200);
  REQUIRE(cfg.top_cluster_fraction == 0.10);
  REQUIRE(cfg.membership_cos_dist == 0.15);
  REQUIRE(cfg.max_proposals_per_batch == 20);
  REQUIRE(cfg.min_box_area == 1024);
  REQUIRE(cfg.nms_iou == 1e-7);

  REQUIRE(cfg.objectness_threshold(0) == 0.90);
  REQUIRE(cfg.objectness_threshold(10) == Catch::Approx(0.945));
  REQUIRE(cfg.objectness_threshold(20) == Catch::Approx(0.99));
  REQUIRE(cfg.objectness_threshold(50) == Catch::Approx(0.99));
  REQUIRE(cfg.mining_distance(0) == 0.025);
  REQUIRE(cfg.mining_distance(10) == Catch::Approx(0.0175));
  REQUIRE(cfg.mining_distance(20) == Catch::Approx(0.01));
  REQUIRE(cfg.mining_distance(50) == Catch::Approx(0.01));

  EngineConfig bad = cfg;
  bad.top_cluster_fraction = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.mining_cos_dist_end = 0.5;  // above start
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.objectness_end = 0.5;  // below start
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("select_unknown_clusters admission") {
  const EngineConfig cfg;  // defaults: k=128, fraction 0.10, threshold 0.9

  SECTION("low average objectness founds nothing") {
    std::vector<ProposalRecord> buffer = {record_at(at_distance(0.0), 0.5)};
    std::vector<ClusterReport> reports(3);
    for (auto& rep : reports) {
      rep.centroid = kAxis;
      rep.members = {0};
      rep.avg_cos_similarity = 0.99;
      rep.avg_objectness = 0.5;
    }
    ExemplarStore store = ExemplarStore::init(cfg);
    REQUIRE(select_unknown_clusters(reports, buffer, store, cfg).empty());
    REQUIRE(store.found_class_count == 0);
  }

  SECTION("at most ceil(fraction * k) clusters are considered") {
    // 20 qualifying reports but only ceil(0.10 * 128) = 13 may found classes.
    std::vector<ProposalRecord> buffer = {record_at(at_distance(0.0), 1.0)};
    std::vector<ClusterReport> reports(20);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      reports[i].centroid = kAxis;
      reports[i].members = {0};
      reports[i].avg_cos_similarity = 1.0 - 0.001 * static_cast<double>(i);
      reports[i].avg_objectness = 1.0;
    }
    ExemplarStore store = ExemplarStore::init(cfg);
    const auto created = select_unknown_clusters(reports, buffer, store, cfg);
    REQUIRE(created.size() == 13);
  }

  SECTION("membership radius filters exemplars") {
    std::vector<ProposalRecord> buffer = {
        record_at(at_distance(0.05), 0.95, 1, 0),
        record_at(at_distance(0.10), 0.95, 1, 50),
        record_at(at_distance(0.30), 0.95, 1, 100),
    };
    ClusterReport rep;
    rep.centroid = kAxis;
    rep.members = {0, 1, 2};
    rep.avg_cos_similarity = 0.85;
    rep.avg_objectness = 0.95;
    ExemplarStore store = ExemplarStore::init(cfg);
    const std::vector<ClusterReport> reports = {rep};
    const auto created = select_unknown_clusters(reports, buffer, store, cfg);
    REQUIRE(created.size() == 1);
    REQUIRE(store.classes.at(created[0]).exemplars.size() == 2);
  }

  SECTION("threshold ramp advances with each found class") {
    std::vector<ProposalRecord> buffer = {record_at(at_distance(0.0), 0.903)};
    std::vector<ClusterReport> reports(2);
    for (std::size_t i = 0; i < 2; ++i) {
      reports[i].centroid = kAxis;
      reports[i].members = {0};
      reports[i].avg_cos_similarity = 0.99 - 0.001 * static_cast<double>(i);
      reports[i].avg_objectness = 0.903;
    }
    ExemplarStore store = ExemplarStore::init(cfg);
    const auto created = select_unknown_clusters(reports, buffer, store, cfg);
    REQUIRE(created.size() == 1);  // the second cluster fails the raised bar
    REQUIRE(store.current_objectness_threshold == Catch::Approx(0.9045));
    REQUIRE(store.current_mining_distance == Catch::Approx(0.02425));
  }

  SECTION("a cluster whose members all fall outside the radius founds nothing") {
    std::vector<ProposalRecord> buffer = {record_at(at_distance(0.5), 1.0)};
    ClusterReport rep;
    rep.centroid = kAxis;
    rep.members = {0};
    rep.avg_cos_similarity = 0.5;
    rep.avg_objectness = 1.0;
    ExemplarStore store = ExemplarStore::init(cfg);
    const std::vector<ClusterReport> reports = {rep};
    REQUIRE(select_unknown_clusters(reports, buffer, store, cfg).empty());
    REQUIRE(store.found_class_count == 0);
  }
}

TEST_CASE("mine_exemplars") {
  const EngineConfig cfg;
  ExemplarStore store = ExemplarStore::init(cfg);

  SECTION("empty store mines nothing") {
    const std::vector<ProposalRecord> props = {record_at(at_distance(0.0))};
    REQUIRE(mine_exemplars(props, store, cfg).empty());
  }

  UnknownClass cls0;
  cls0.id = 0;
  cls0.exemplars.push_back({record_at(at_distance(0.0)), kAxis});
  store.classes[0] = cls0;
  store.found_class_count = 1;
  store.next_class_id = 1;

  SECTION("identical proposal is accepted at distance zero") {
    const std::vector<ProposalRecord> props = {record_at(at_distance(0.0))};
    const auto mined = mine_exemplars(props, store, cfg);
    REQUIRE(mined.size() == 1);
    REQUIRE(mined[0].class_id == 0);
    REQUIRE(mined[0].distance == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(store.classes.at(0).exemplars.size() == 2);
  }

  SECTION("distance above the mining threshold is rejected") {
    REQUIRE(store.current_mining_distance == Catch::Approx(0.025));
    const std::vector<ProposalRecord> props = {record_at(at_distance(0.05))};
    REQUIRE(mine_exemplars(props, store, cfg).empty());
    REQUIRE(store.classes.at(0).exemplars.size() == 1);
  }

  SECTION("nearest qualifying class wins; ties go to the lowest id") {
    UnknownClass cls1;
    cls1.id = 1;
    cls1.exemplars.push_back({record_at(at_distance(0.0)), kAxis});
    store.classes[1] = cls1;  // same exemplar as class 0
    const std::vector<ProposalRecord> props = {record_at(at_distance(0.0))};
    const auto mined = mine_exemplars(props, store, cfg);
    REQUIRE(mined.size() == 1);
    REQUIRE(mined[0].class_id == 0);
  }

  SECTION("acceptance within a batch is sequential") {
    // The second proposal is within range of the first one only.
    store.current_mining_distance = 0.02;
    const std::vector<ProposalRecord> props = {
        record_at(at_distance(0.015), 0.9, 2, 0),
        record_at(at_distance(0.03), 0.9, 2, 50),
    };
    const auto mined = mine_exemplars(props, store, cfg);
    REQUIRE(mined.size() == 2);  // second rides on the freshly mined first
  }

  SECTION("feature dimension mismatch throws") {
    std::vector<ProposalRecord> props = {record_at({1.0f, 0.0f})};
    REQUIRE_THROWS_AS(mine_exemplars(props, store, cfg),
                      std::invalid_argument);
  }
}

TEST_CASE("refresh_features") {
  const EngineConfig cfg;
  ExemplarStore store = ExemplarStore::init(cfg);
  UnknownClass cls;
  cls.id = 0;
  cls.exemplars.push_back({record_at(at_distance(0.0)), kAxis});
  store.classes[0] = cls;
  store.found_class_count = 1;

  SECTION("identity provider changes nothing") {
    refresh_features(store, identity_provider());
    REQUIRE(store.classes.at(0).exemplars[0].feature == kAxis);
  }
  SECTION("scaling provider is absorbed by normalization") {
    refresh_features(store, [](const ProposalRecord& r) {
      std::vector<float> f = r.feature;
      for (float& v : f) v *= 5.0f;
      return f;
    });
    REQUIRE(l2_norm(store.classes.at(0).exemplars[0].feature) ==
            Catch::Approx(1.0).margin(1e-12));
    REQUIRE(store.classes.at(0).exemplars[0].feature[0] ==
            Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("permuting provider moves the class in feature space") {
    // Before: proposal on the axis mines into class 0. After rotating the
    // stored exemplar to (0, 1, 0) the same proposal is at distance 1.
    const std::vector<ProposalRecord> props = {record_at(at_distance(0.0))};
    REQUIRE(mine_exemplars(props, store, cfg).size() == 1);
    store.classes.at(0).exemplars.resize(1);

    refresh_features(store, [](const ProposalRecord&) {
      return std::vector<float>{0.0f, 1.0f, 0.0f};
    });
    const double d = cos_distance(store.classes.at(0).exemplars[0].feature,
                                  unit_feature(props[0]));
    REQUIRE(d == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(mine_exemplars(props, store, cfg).empty());
  }
  SECTION("provider failure names the exemplar") {
    try {
      refresh_features(store, [](const ProposalRecord&) -> std::vector<float> {
        throw std::runtime_error("backend gone");
      });
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      const std::string what = e.what();
      REQUIRE(what.find("class 0") != std::string::npos);
      REQUIRE(what.find("backend gone") != std::string::npos);
    }
  }
}

TEST_CASE("run_discovery basics") {
  SECTION("empty stream gives an empty store") {
    const std::vector<std::vector<ProposalRecord>> steps;
    const DiscoveryResult r =
        run_discovery(steps, small_config(), identity_provider());
    REQUIRE(r.store.classes.empty());
    REQUIRE(r.labels.empty());
  }

  SECTION("clustering fires exactly at the interval") {
    SynthFeatureConfig scfg;
    scfg.n_planted_classes = 3;
    scfg.points_per_class = 60;
    scfg.distractor_fraction = 0.25;
    scfg.feature_dim = 24;
    scfg.rng_seed = 17;
    const SynthFeatures sf = generate_synthetic_features(scfg);
    EngineConfig cfg = small_config();

    // One step short of the interval: nothing is founded, nothing mined.
    const std::size_t shy = cfg.cluster_interval_steps - 1;
    std::vector<std::vector<ProposalRecord>> truncated(
        sf.steps.begin(), sf.steps.begin() + shy);
    const DiscoveryResult before =
        run_discovery(truncated, cfg, identity_provider());
    REQUIRE(before.store.classes.empty());
    REQUIRE(before.labels.empty());

    // At the interval the buffered points cluster and classes appear.
    std::vector<std::vector<ProposalRecord>> exact(
        sf.steps.begin(), sf.steps.begin() + cfg.cluster_interval_steps);
    const DiscoveryResult after =
        run_discovery(exact, cfg, identity_provider());
    REQUIRE(after.store.found_class_count > 0);
    for (const PseudoLabel& l : after.labels)
      REQUIRE(l.source == LabelSource::Cluster);
  }
}

TEST_CASE("discovery on a planted stream recovers and stays pure") {
  SynthFeatureConfig scfg;
  scfg.n_planted_classes = 4;
  scfg.points_per_class = 60;
  scfg.distractor_fraction = 0.3;
  scfg.feature_dim = 128;
  scfg.rng_seed = 23;
  const SynthFeatures sf = generate_synthetic_features(scfg);

  EngineConfig cfg = small_config();
  const DiscoveryResult r = run_discovery(sf.steps, cfg, identity_provider());

  REQUIRE(r.store.found_class_count >= 3);

  std::set<std::int32_t> recovered;
  std::size_t distractors_accepted = 0;
  for (const auto& [cid, cls] : r.store.classes) {
    std::map<std::int32_t, std::size_t> counts;
    for (const Exemplar& ex : cls.exemplars) {
      const std::int32_t truth = sf.truth_of(ex.record.image_id, ex.record.box);
      counts[truth] += 1;
      if (truth == kDistractor) ++distractors_accepted;
      // unit-norm storage invariant
      REQUIRE(std::abs(l2_norm(ex.feature) - 1.0) < 1e-9);
    }
    std::int32_t majority = kDistractor;
    std::size_t best = 0, total = 0;
    for (const auto& [truth, n] : counts) {
      total += n;
      if (n > best) {
        best = n;
        majority = truth;
      }
    }
    REQUIRE(static_cast<double>(best) / static_cast<double>(total) >= 0.9);
    if (majority != kDistractor) recovered.insert(majority);
  }
  REQUIRE(recovered.size() >= 3);
  REQUIRE(distractors_accepted == 0);

  SECTION("pseudo-labels cover every stored exemplar source") {
    std::size_t cluster_labels = 0, mined_labels = 0;
    for (const PseudoLabel& l : r.labels) {
      if (l.source == LabelSource::Cluster) ++cluster_labels;
      else ++mined_labels;
    }
    REQUIRE(cluster_labels > 0);
    REQUIRE(mined_labels > 0);
  }

  SECTION("determinism: same stream and seed, bit-identical outcome") {
    const DiscoveryResult again =
        run_discovery(sf.steps, cfg, identity_provider());
    REQUIRE(again.labels == r.labels);
    REQUIRE(again.store.found_class_count == r.store.found_class_count);
    REQUIRE(again.store.classes.size() == r.store.classes.size());
    for (const auto& [cid, cls] : r.store.classes) {
      const UnknownClass& other = again.store.classes.at(cid);
      REQUIRE(other.exemplars.size() == cls.exemplars.size());
      for (std::size_t i = 0; i < cls.exemplars.size(); ++i) {
        REQUIRE(other.exemplars[i].record == cls.exemplars[i].record);
        REQUIRE(other.exemplars[i].feature == cls.exemplars[i].feature);
      }
    }
    REQUIRE(again.store.current_objectness_threshold ==
            r.store.current_objectness_threshold);
    REQUIRE(again.store.current_mining_distance ==
            r.store.current_mining_distance);
  }

  SECTION("scale invariance of clustering and mining decisions") {
    std::vector<std::vector<ProposalRecord>> scaled = sf.steps;
    for (auto& batch : scaled)
      for (ProposalRecord& p : batch)
        for (float& f : p.feature) f *= 3.7f;
    const DiscoveryResult s = run_discovery(scaled, cfg, identity_provider());
    REQUIRE(s.store.found_class_count == r.store.found_class_count);
    REQUIRE(s.labels.size() == r.labels.size());
    for (std::size_t i = 0; i < r.labels.size(); ++i)
      REQUIRE(s.labels[i] == r.labels[i]);
  }
}

TEST_CASE("buffer is cleared between clustering rounds") {
  // Planted mass only in the first interval; the second interval is pure
  // low-objectness noise, so a second founding round would have to reuse
  // stale buffer contents to create anything.
  SynthFeatureConfig planted_cfg;
  planted_cfg.n_planted_classes = 2;
  planted_cfg.points_per_class = 80;  // 200 records: fills the 10-step interval
  planted_cfg.distractor_fraction = 0.2;
  planted_cfg.feature_dim = 24;
  planted_cfg.rng_seed = 5;
  const SynthFeatures planted = generate_synthetic_features(planted_cfg);

  SynthFeatureConfig noise_cfg = planted_cfg;
  noise_cfg.n_planted_classes = 1;
  noise_cfg.points_per_class = 1;
  noise_cfg.distractor_fraction = 0.99;
  noise_cfg.rng_seed = 6;
  const SynthFeatures noise = generate_synthetic_features(noise_cfg);
  std::vector<std::vector<ProposalRecord>> noise_steps;
  for (std::size_t s = 0; s < noise.steps.size(); ++s) {
    std::vector<ProposalRecord> batch;
    for (std::size_t i = 0; i < noise.steps[s].size(); ++i)
      if (noise.truth[s][i] == kDistractor) batch.push_back(noise.steps[s][i]);
    noise_steps.push_back(std::move(batch));
  }

  EngineConfig cfg = small_config();
  std::vector<std::vector<ProposalRecord>> stream;
  for (std::size_t i = 0; i < cfg.cluster_interval_steps; ++i)
    stream.push_back(planted.steps.at(i));
  for (std::size_t i = 0; i < cfg.cluster_interval_steps; ++i)
    stream.push_back(noise_steps.at(i % noise_steps.size()));

  const DiscoveryResult r = run_discovery(stream, cfg, identity_provider());
  const std::uint32_t after_first = [&] {
    std::vector<std::vector<ProposalRecord>> first_half(
        stream.begin(), stream.begin() + cfg.cluster_interval_steps);
    return run_discovery(first_half, cfg, identity_provider())
        .store.found_class_count;
  }();
  REQUIRE(after_first > 0);
  REQUIRE(r.store.found_class_count == after_first);
}

TEST_CASE("threshold monotonicity over a run") {
  const EngineConfig cfg;
  ExemplarStore store = ExemplarStore::init(cfg);
  double last_obj = store.current_objectness_threshold;
  double last_mine = store.current_mining_distance;
  std::vector<ProposalRecord> buffer = {record_at(at_distance(0.0), 1.0)};
  for (int round = 0; round < 25; ++round) {
    ClusterReport rep;
    rep.centroid = kAxis;
    rep.members = {0};
    rep.avg_cos_similarity = 1.0;
    rep.avg_objectness = 1.0;
    const std::vector<ClusterReport> reports = {rep};
    select_unknown_clusters(reports, buffer, store, cfg);
    REQUIRE(store.current_objectness_threshold >= last_obj);
    REQUIRE(store.current_mining_distance <= last_mine);
    last_obj = store.current_objectness_threshold;
    last_mine = store.current_mining_distance;
  }
  REQUIRE(store.current_objectness_threshold == Catch::Approx(0.99));
  REQUIRE(store.current_mining_distance == Catch::Approx(0.01));
}

TEST_CASE("pseudo-label file round trip") {
  const fs::path dir = fs::temp_directory_path() / "opseg_test_labels";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "labels.csv").string();

  const std::vector<PseudoLabel> labels = {
      {3, {0, 0, 40, 40}, 0, LabelSource::Cluster},
      {5, {80, 16, 32, 64}, 2, LabelSource::Mined},
  };
  write_pseudo_labels(path, labels);
  REQUIRE(read_pseudo_labels(path) == labels);
}

TEST_CASE("engine config file application") {
  const fs::path dir = fs::temp_directory_path() / "opseg_test_cfg";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "engine.cfg").string();
  {
    std::ofstream out(path);
    out << "# discovery knobs\n";
    out << "engine.k_clusters = 64\n";
    out << "engine.top_cluster_fraction = 0.2\n";
    out << "engine.rng_seed = 99\n";
  }
  EngineConfig cfg;
  apply_engine_config(parse_config_file(path), cfg);
  REQUIRE(cfg.k_clusters == 64);
  REQUIRE(cfg.top_cluster_fraction == 0.2);
  REQUIRE(cfg.rng_seed == 99);
  REQUIRE(cfg.cluster_interval_steps == 200);  // untouched default

  {
    std::ofstream out(path);
    out << "engine.k_cluster = 64\n";  // typo
  }
  EngineConfig cfg2;
  REQUIRE_THROWS(apply_engine_config(parse_config_file(path), cfg2));
}
