#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "opseg/core.hpp"
#include "opseg/proposals.hpp"

namespace opseg {

/// Image-sized binary mask, row-major, one byte per pixel (0/1).
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  std::uint64_t count() const {
    std::uint64_t n = 0;
    for (std::uint8_t v : data) n += v != 0;
    return n;
  }
  bool at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x] != 0;
  }
};

struct InstancePrediction {
  BinaryMask mask;
  CategoryId category_id = 0;
  double confidence = 0.0;  // objectness for unknown instances
};

struct FusionConfig {
  double overlap_keep_fraction = 0.5;  // drop instances keeping less than this
  std::uint64_t stuff_area_min = 4096; // smaller stuff regions become void
  bool unknown_over_stuff = false;     // allow unknowns to claim stuff pixels
};

namespace detail {

struct MaskKey {
  double confidence;
  CategoryId category;
  double centroid_y;
  double centroid_x;
};

inline MaskKey paint_key(const InstancePrediction& inst) {
  double sy = 0, sx = 0;
  std::uint64_t n = 0;
  for (int y = 0; y < inst.mask.height; ++y)
    for (int x = 0; x < inst.mask.width; ++x)
      if (inst.mask.at(x, y)) {
        sy += y;
        sx += x;
        ++n;
      }
  const double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
  return {inst.confidence, inst.category_id, sy * inv, sx * inv};
}

inline bool key_before(const MaskKey& a, const MaskKey& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.category != b.category) return a.category < b.category;
  if (a.centroid_y != b.centroid_y) return a.centroid_y < b.centroid_y;
  return a.centroid_x < b.centroid_x;
}

}  // namespace detail

/// Combine instance predictions and a stuff semantic map into one panoptic
/// map, then overlay unknown instances on the remaining void.
///
/// Known instances paint in descending confidence (ties resolved by
/// category id, then mask centroid); claimed pixels are never overwritten
/// and an instance keeping less than overlap_keep_fraction of its mask is
/// dropped. Unclaimed pixels take their semantic stuff class, one segment
/// per class, voided below stuff_area_min. Unknown instances then paint
/// under the same ordering and survival rule, restricted to void pixels
/// (or void-plus-stuff with unknown_over_stuff).
inline PanopticMap fuse_panoptic(std::span<const InstancePrediction> known_instances,
                                 std::span<const InstancePrediction> unknown_instances,
                                 std::span<const CategoryId> semantic, int width,
                                 int height, const CategoryTable& cats,
                                 const FusionConfig& cfg = {}) {
  const std::size_t n_px =
      static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (semantic.size() != n_px)
    throw std::invalid_argument("fuse_panoptic: semantic grid size mismatch");
  for (std::size_t i = 0; i < semantic.size(); ++i)
    if (semantic[i] != kVoidSegment && cats.at(semantic[i]).kind != Kind::Stuff)
      throw std::invalid_argument("fuse_panoptic: semantic grid carries a non-stuff category");

  auto check_instances = [&](std::span<const InstancePrediction> list,
                             bool expect_unknown) {
    for (const InstancePrediction& inst : list) {
      if (inst.mask.width != width || inst.mask.height != height)
        throw std::invalid_argument("fuse_panoptic: mask dimension mismatch");
      if (inst.mask.count() == 0)
        throw std::invalid_argument("fuse_panoptic: empty instance mask");
      if (!(inst.confidence >= 0.0 && inst.confidence <= 1.0))
        throw std::invalid_argument("fuse_panoptic: confidence outside [0, 1]");
      const CategoryEntry& e = cats.at(inst.category_id);
      if (expect_unknown && e.status != Status::Unknown)
        throw std::invalid_argument("fuse_panoptic: unknown instance carries a known category");
      if (!expect_unknown && !(e.status == Status::Known && e.kind == Kind::Thing))
        throw std::invalid_argument("fuse_panoptic: known instance must carry a known thing category");
    }
  };
  check_instances(known_instances, false);
  check_instances(unknown_instances, true);

  PanopticMap out;
  out.width = width;
  out.height = height;
  out.pixels.assign(n_px, kVoidSegment);
  SegmentId next_id = 1;

  auto sorted_order = [](std::span<const InstancePrediction> list) {
    std::vector<std::size_t> order(list.size());
    std::vector<detail::MaskKey> keys(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      order[i] = i;
      keys[i] = detail::paint_key(list[i]);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return detail::key_before(keys[a], keys[b]);
    });
    return order;
  };

  auto paint = [&](const InstancePrediction& inst, auto&& available) {
    std::vector<std::size_t> take;
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < n_px; ++i) {
      if (!inst.mask.data[i]) continue;
      ++total;
      if (available(i)) take.push_back(i);
    }
    if (static_cast<double>(take.size()) <
        cfg.overlap_keep_fraction * static_cast<double>(total))
      return;  // dropped: too little of the mask survives
    const SegmentId id = next_id++;
    for (std::size_t i : take) out.pixels[i] = id;
    out.segments[id] = {inst.category_id, false, take.size()};
  };

  for (std::size_t i : sorted_order(known_instances))
    paint(known_instances[i],
          [&](std::size_t px) { return out.pixels[px] == kVoidSegment; });

  // Stuff fill: one segment per class over the unclaimed pixels.
  std::map<CategoryId, std::vector<std::size_t>> stuff_pixels;
  for (std::size_t i = 0; i < n_px; ++i)
    if (out.pixels[i] == kVoidSegment && semantic[i] != kVoidSegment)
      stuff_pixels[semantic[i]].push_back(i);
  std::vector<SegmentId> stuff_ids;
  for (const auto& [cat, px] : stuff_pixels) {
    if (px.size() < cfg.stuff_area_min) continue;
    const SegmentId id = next_id++;
    for (std::size_t i : px) out.pixels[i] = id;
    out.segments[id] = {cat, false, px.size()};
    stuff_ids.push_back(id);
  }

  auto unknown_available = [&](std::size_t px) {
    if (out.pixels[px] == kVoidSegment) return true;
    if (!cfg.unknown_over_stuff) return false;
    return std::find(stuff_ids.begin(), stuff_ids.end(), out.pixels[px]) !=
           stuff_ids.end();
  };
  for (std::size_t i : sorted_order(unknown_instances))
    paint(unknown_instances[i], unknown_available);

  out.recompute_areas();  // stuff areas can shrink under unknown_over_stuff
  return out;
}

// ---------------------------------------------------------------------------
// Instance-mask file (OPSM), the feature-file companion. Little-endian:
//   magic "OPSM", version u16, record_count u64
//   record: image_id u64, category_id u32, confidence f32,
//           width u32, height u32, run_count u64, runs u32[run_count]
// Runs are row-major and alternate zeros/ones starting with zeros.
// ---------------------------------------------------------------------------

inline constexpr char kMaskMagic[4] = {'O', 'P', 'S', 'M'};
inline constexpr std::uint16_t kMaskVersion = 1;

struct MaskRecord {
  ImageId image_id = 0;
  CategoryId category_id = 0;
  double confidence = 0.0;
  BinaryMask mask;
};

inline std::vector<std::uint32_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;  // runs start with zeros
  std::uint32_t length = 0;
  for (std::uint8_t v : mask.data) {
    const std::uint8_t bit = v != 0;
    if (bit == current) {
      ++length;
    } else {
      runs.push_back(length);
      current = bit;
      length = 1;
    }
  }
  runs.push_back(length);
  return runs;
}

inline BinaryMask rle_decode(std::span<const std::uint32_t> runs, int width,
                             int height) {
  BinaryMask mask;
  mask.width = width;
  mask.height = height;
  mask.data.assign(static_cast<std::size_t>(width) * height, 0);
  std::size_t pos = 0;
  std::uint8_t current = 0;
  for (std::uint32_t run : runs) {
    if (pos + run > mask.data.size())
      throw std::runtime_error("RLE runs exceed the mask size");
    if (current) std::memset(mask.data.data() + pos, 1, run);
    pos += run;
    current = !current;
  }
  if (pos != mask.data.size())
    throw std::runtime_error("RLE runs do not cover the mask");
  return mask;
}

inline void write_mask_file(const std::string& path,
                            std::span<const MaskRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create mask file: " + path);
  out.write(kMaskMagic, 4);
  detail::put<std::uint16_t>(out, kMaskVersion);
  detail::put<std::uint64_t>(out, records.size());
  for (const MaskRecord& r : records) {
    detail::put<std::uint64_t>(out, r.image_id);
    detail::put<std::uint32_t>(out, r.category_id);
    detail::put<float>(out, static_cast<float>(r.confidence));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.mask.width));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.mask.height));
    const std::vector<std::uint32_t> runs = rle_encode(r.mask);
    detail::put<std::uint64_t>(out, runs.size());
    out.write(reinterpret_cast<const char*>(runs.data()),
              static_cast<std::streamsize>(runs.size() * sizeof(std::uint32_t)));
  }
  if (!out) throw std::runtime_error("failed writing mask file: " + path);
}

inline std::vector<MaskRecord> read_mask_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open mask file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMaskMagic, 4) != 0)
    throw std::runtime_error("not an instance-mask file: " + path);
  const auto version = detail::get<std::uint16_t>(in);
  if (version != kMaskVersion)
    throw std::runtime_error("unsupported mask file version " +
                             std::to_string(version));
  const auto count = detail::get<std::uint64_t>(in);
  std::vector<MaskRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    MaskRecord r;
    r.image_id = detail::get<std::uint64_t>(in);
    r.category_id = detail::get<std::uint32_t>(in);
    r.confidence = detail::get<float>(in);
    const auto w = detail::get<std::uint32_t>(in);
    const auto h = detail::get<std::uint32_t>(in);
    const auto run_count = detail::get<std::uint64_t>(in);
    std::vector<std::uint32_t> runs(run_count);
    in.read(reinterpret_cast<char*>(runs.data()),
            static_cast<std::streamsize>(run_count * sizeof(std::uint32_t)));
    if (!in) throw std::runtime_error("truncated mask file: " + path);
    r.mask = rle_decode(runs, static_cast<int>(w), static_cast<int>(h));
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace opseg
