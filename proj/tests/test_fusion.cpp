#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <random>

#include "opseg/fusion.hpp"
#include "opseg/rng.hpp"

using namespace opseg;
namespace fs = std::filesystem;

namespace {

CategoryTable fusion_table() {
  return CategoryTable({
      {0, "void", Kind::Stuff, Status::Void},
      {1, "car", Kind::Thing, Status::Known},
      {2, "person", Kind::Thing, Status::Known},
      {10, "sky", Kind::Stuff, Status::Known},
      {11, "grass", Kind::Stuff, Status::Known},
      {20, "mystery", Kind::Thing, Status::Unknown},
  });
}

BinaryMask rect_mask(int w, int h, int x0, int y0, int bw, int bh) {
  BinaryMask m;
  m.width = w;
  m.height = h;
  m.data.assign(static_cast<std::size_t>(w) * h, 0);
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x)
      m.data[static_cast<std::size_t>(y) * w + x] = 1;
  return m;
}

std::vector<CategoryId> uniform_semantic(int w, int h, CategoryId cat) {
  return std::vector<CategoryId>(static_cast<std::size_t>(w) * h, cat);
}

FusionConfig small_stuff_ok() {
  FusionConfig cfg;
  cfg.stuff_area_min = 1;  // keep test grids tiny
  return cfg;
}

}  // namespace

TEST_CASE("single instance on a void background") {
  const CategoryTable cats = fusion_table();
  const std::vector<InstancePrediction> known = {
      {rect_mask(10, 10, 2, 2, 4, 4), 1, 0.9}};
  const std::vector<CategoryId> semantic = uniform_semantic(10, 10, 0);
  const PanopticMap out =
      fuse_panoptic(known, {}, semantic, 10, 10, cats, small_stuff_ok());
  REQUIRE(out.segments.size() == 1);
  REQUIRE(out.segments.begin()->second.area == 16);
  REQUIRE(out.segments.begin()->second.category_id == 1);
  REQUIRE(validate_map(out, cats).ok());
}

TEST_CASE("overlap resolution drops the low-confidence loser") {
  // Two 5x4 masks overlapping on 60% of their area: the 0.9 instance paints
  // fully, the 0.8 instance would keep only 40% < 50% and is dropped.
  const CategoryTable cats = fusion_table();
  const std::vector<InstancePrediction> known = {
      {rect_mask(10, 10, 0, 0, 5, 4), 1, 0.9},
      {rect_mask(10, 10, 2, 0, 5, 4), 2, 0.8},
  };
  const std::vector<CategoryId> semantic = uniform_semantic(10, 10, 0);
  const PanopticMap out =
      fuse_panoptic(known, {}, semantic, 10, 10, cats, small_stuff_ok());
  REQUIRE(out.segments.size() == 1);
  REQUIRE(out.segments.at(1).category_id == 1);
  REQUIRE(out.segments.at(1).area == 20);
  REQUIRE(validate_map(out, cats).ok());
}

TEST_CASE("exactly half surviving is kept") {
  const CategoryTable cats = fusion_table();
  const std::vector<InstancePrediction> known = {
      {rect_mask(10, 10, 0, 0, 4, 4), 1, 0.9},
      {rect_mask(10, 10, 2, 0, 4, 4), 2, 0.8},  // loses 8 of 16 px
  };
  const std::vector<CategoryId> semantic = uniform_semantic(10, 10, 0);
  const PanopticMap out =
      fuse_panoptic(known, {}, semantic, 10, 10, cats, small_stuff_ok());
  REQUIRE(out.segments.size() == 2);
  REQUIRE(out.segments.at(2).area == 8);
}

TEST_CASE("stuff fills leftovers and respects the area floor") {
  const CategoryTable cats = fusion_table();
  const std::vector<InstancePrediction> known = {
      {rect_mask(8, 8, 0, 0, 4, 8), 1, 0.9}};
  std::vector<CategoryId> semantic = uniform_semantic(8, 8, 10);
  // A 2-pixel sliver of another stuff class.
  semantic[static_cast<std::size_t>(7) * 8 + 6] = 11;
  semantic[static_cast<std::size_t>(7) * 8 + 7] = 11;

  FusionConfig cfg;
  cfg.stuff_area_min = 4;
  const PanopticMap out = fuse_panoptic(known, {}, semantic, 8, 8, cats, cfg);

  // sky keeps 30 px (half the image minus the sliver), grass is voided.
  std::size_t sky_segments = 0;
  for (const auto& [sid, info] : out.segments) {
    REQUIRE(info.category_id != 11);
    sky_segments += info.category_id == 10;
  }
  REQUIRE(sky_segments == 1);
  REQUIRE(validate_map(out, cats).ok());
}

TEST_CASE("unknown instances paint only void") {
  const CategoryTable cats = fusion_table();

  SECTION("fully covered unknown disappears") {
    const std::vector<InstancePrediction> known = {
        {rect_mask(10, 10, 0, 0, 6, 6), 1, 0.9}};
    const std::vector<InstancePrediction> unknown = {
        {rect_mask(10, 10, 1, 1, 3, 3), 20, 0.8}};
    const PanopticMap out = fuse_panoptic(known, unknown, uniform_semantic(10, 10, 0),
                                          10, 10, cats, small_stuff_ok());
    REQUIRE(out.segments.size() == 1);
    REQUIRE(out.segments.begin()->second.category_id == 1);
  }
  SECTION("unknown lands on the remaining void") {
    const std::vector<InstancePrediction> unknown = {
        {rect_mask(10, 10, 1, 1, 3, 3), 20, 0.8}};
    const PanopticMap out = fuse_panoptic({}, unknown, uniform_semantic(10, 10, 0),
                                          10, 10, cats, small_stuff_ok());
    REQUIRE(out.segments.size() == 1);
    REQUIRE(out.segments.begin()->second.category_id == 20);
    REQUIRE(out.segments.begin()->second.area == 9);
  }
  SECTION("unknown may not claim stuff unless configured") {
    std::vector<CategoryId> semantic = uniform_semantic(10, 10, 10);
    const std::vector<InstancePrediction> unknown = {
        {rect_mask(10, 10, 1, 1, 3, 3), 20, 0.8}};
    const PanopticMap plain = fuse_panoptic({}, unknown, semantic, 10, 10,
                                            cats, small_stuff_ok());
    REQUIRE(plain.segments.size() == 1);  // stuff only; unknown dropped
    REQUIRE(plain.segments.begin()->second.category_id == 10);

    FusionConfig cfg = small_stuff_ok();
    cfg.unknown_over_stuff = true;
    const PanopticMap loose = fuse_panoptic({}, unknown, semantic, 10, 10,
                                            cats, cfg);
    REQUIRE(loose.segments.size() == 2);
    bool has_unknown = false;
    for (const auto& [sid, info] : loose.segments)
      has_unknown |= info.category_id == 20;
    REQUIRE(has_unknown);
    REQUIRE(validate_map(loose, cats).ok());
  }
}

TEST_CASE("input validation") {
  const CategoryTable cats = fusion_table();
  const std::vector<CategoryId> semantic = uniform_semantic(8, 8, 0);

  SECTION("dimension mismatch") {
    const std::vector<InstancePrediction> known = {
        {rect_mask(4, 4, 0, 0, 2, 2), 1, 0.9}};
    REQUIRE_THROWS_AS(fuse_panoptic(known, {}, semantic, 8, 8, cats),
                      std::invalid_argument);
  }
  SECTION("empty mask") {
    BinaryMask empty;
    empty.width = 8;
    empty.height = 8;
    empty.data.assign(64, 0);
    const std::vector<InstancePrediction> known = {{empty, 1, 0.9}};
    REQUIRE_THROWS_AS(fuse_panoptic(known, {}, semantic, 8, 8, cats),
                      std::invalid_argument);
  }
  SECTION("confidence out of range") {
    const std::vector<InstancePrediction> known = {
        {rect_mask(8, 8, 0, 0, 2, 2), 1, 1.5}};
    REQUIRE_THROWS_AS(fuse_panoptic(known, {}, semantic, 8, 8, cats),
                      std::invalid_argument);
  }
  SECTION("thing id in the semantic grid") {
    REQUIRE_THROWS_AS(fuse_panoptic({}, {}, uniform_semantic(8, 8, 1), 8, 8, cats),
                      std::invalid_argument);
  }
  SECTION("known instance with an unknown category") {
    const std::vector<InstancePrediction> known = {
        {rect_mask(8, 8, 0, 0, 2, 2), 20, 0.9}};
    REQUIRE_THROWS_AS(fuse_panoptic(known, {}, semantic, 8, 8, cats),
                      std::invalid_argument);
  }
}

TEST_CASE("equal-confidence painting order is canonical", "[property]") {
  const CategoryTable cats = fusion_table();
  std::mt19937_64 rng(808);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<InstancePrediction> known;
    for (int i = 0; i < 5; ++i) {
      const int x = static_cast<int>(uniform_index(rng, 10));
      const int y = static_cast<int>(uniform_index(rng, 10));
      const int w = 2 + static_cast<int>(uniform_index(rng, 6));
      const int h = 2 + static_cast<int>(uniform_index(rng, 6));
      known.push_back({rect_mask(16, 16, x, y, std::min(w, 16 - x),
                                 std::min(h, 16 - y)),
                       static_cast<CategoryId>(1 + uniform_index(rng, 2)),
                       0.75});
    }
    const std::vector<CategoryId> semantic = uniform_semantic(16, 16, 10);
    const PanopticMap a =
        fuse_panoptic(known, {}, semantic, 16, 16, cats, small_stuff_ok());
    std::vector<InstancePrediction> shuffled = known;
    std::reverse(shuffled.begin(), shuffled.end());
    const PanopticMap b =
        fuse_panoptic(shuffled, {}, semantic, 16, 16, cats, small_stuff_ok());
    REQUIRE(a.pixels == b.pixels);
    REQUIRE(a.segments.size() == b.segments.size());
  }
}

TEST_CASE("removing an unknown instance never disturbs known segments",
          "[property]") {
  const CategoryTable cats = fusion_table();
  std::mt19937_64 rng(909);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<InstancePrediction> known, unknown;
    for (int i = 0; i < 3; ++i) {
      known.push_back({rect_mask(16, 16, uniform_index(rng, 8),
                                 uniform_index(rng, 8),
                                 2 + uniform_index(rng, 6),
                                 2 + uniform_index(rng, 6)),
                       1, uniform_range(rng, 0.5, 1.0)});
      unknown.push_back({rect_mask(16, 16, uniform_index(rng, 8),
                                   uniform_index(rng, 8),
                                   2 + uniform_index(rng, 6),
                                   2 + uniform_index(rng, 6)),
                         20, uniform_range(rng, 0.5, 1.0)});
    }
    const std::vector<CategoryId> semantic = uniform_semantic(16, 16, 11);
    const PanopticMap all = fuse_panoptic(known, unknown, semantic, 16, 16,
                                          cats, small_stuff_ok());
    std::vector<InstancePrediction> fewer(unknown.begin(), unknown.end() - 1);
    const PanopticMap less = fuse_panoptic(known, fewer, semantic, 16, 16,
                                           cats, small_stuff_ok());

    // Known instances paint first and identically in both runs.
    for (const auto& [sid, info] : all.segments) {
      if (cats.at(info.category_id).kind != Kind::Thing ||
          cats.at(info.category_id).status != Status::Known)
        continue;
      REQUIRE(less.segments.count(sid) == 1);
      REQUIRE(less.segments.at(sid).area == info.area);
    }
  }
}

TEST_CASE("random fusion inputs always produce valid maps", "[property]") {
  const CategoryTable cats = fusion_table();
  std::mt19937_64 rng(111);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<InstancePrediction> known, unknown;
    const int n_known = static_cast<int>(uniform_index(rng, 6));
    const int n_unknown = static_cast<int>(uniform_index(rng, 4));
    for (int i = 0; i < n_known; ++i)
      known.push_back({rect_mask(20, 20, uniform_index(rng, 12),
                                 uniform_index(rng, 12),
                                 1 + uniform_index(rng, 8),
                                 1 + uniform_index(rng, 8)),
                       static_cast<CategoryId>(1 + uniform_index(rng, 2)),
                       uniform_unit(rng)});
    for (int i = 0; i < n_unknown; ++i)
      unknown.push_back({rect_mask(20, 20, uniform_index(rng, 12),
                                   uniform_index(rng, 12),
                                   1 + uniform_index(rng, 8),
                                   1 + uniform_index(rng, 8)),
                         20, uniform_unit(rng)});
    std::vector<CategoryId> semantic(400, 0);
    for (CategoryId& c : semantic) {
      const double u = uniform_unit(rng);
      c = u < 0.3 ? 0 : (u < 0.7 ? 10u : 11u);
    }
    FusionConfig cfg;
    cfg.stuff_area_min = uniform_index(rng, 2) ? 1 : 64;
    cfg.unknown_over_stuff = uniform_index(rng, 2) == 0;
    const PanopticMap out =
        fuse_panoptic(known, unknown, semantic, 20, 20, cats, cfg);
    const ValidationResult v = validate_map(out, cats);
    REQUIRE(v.ok());
  }
}

TEST_CASE("mask RLE and the OPSM file round trip") {
  std::mt19937_64 rng(77);

  SECTION("rle round trip on random masks") {
    for (int trial = 0; trial < 50; ++trial) {
      BinaryMask m;
      m.width = 1 + static_cast<int>(uniform_index(rng, 20));
      m.height = 1 + static_cast<int>(uniform_index(rng, 20));
      m.data.resize(static_cast<std::size_t>(m.width) * m.height);
      for (auto& v : m.data) v = uniform_unit(rng) < 0.4;
      const std::vector<std::uint32_t> runs = rle_encode(m);
      const BinaryMask back = rle_decode(runs, m.width, m.height);
      REQUIRE(back.data == m.data);
    }
  }
  SECTION("mask file round trip") {
    const fs::path dir = fs::temp_directory_path() / "opseg_test_opsm";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string path = (dir / "m.opsm").string();

    std::vector<MaskRecord> records;
    for (int i = 0; i < 7; ++i) {
      MaskRecord r;
      r.image_id = i / 2;
      r.category_id = 1 + (i % 3);
      r.confidence = 0.125f * static_cast<float>(i);
      r.mask.width = 9;
      r.mask.height = 5;
      r.mask.data.resize(45);
      for (auto& v : r.mask.data) v = uniform_unit(rng) < 0.5;
      records.push_back(std::move(r));
    }
    write_mask_file(path, records);
    const std::vector<MaskRecord> back = read_mask_file(path);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      REQUIRE(back[i].image_id == records[i].image_id);
      REQUIRE(back[i].category_id == records[i].category_id);
      REQUIRE(back[i].confidence == records[i].confidence);
      REQUIRE(back[i].mask.data == records[i].mask.data);
    }
  }
  SECTION("corrupt runs rejected") {
    REQUIRE_THROWS(rle_decode(std::vector<std::uint32_t>{3, 3}, 2, 2));
    REQUIRE_THROWS(rle_decode(std::vector<std::uint32_t>{1, 1}, 2, 2));
  }
}
