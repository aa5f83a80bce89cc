#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "opseg/core.hpp"
#include "opseg/rng.hpp"

namespace opseg {

/// One candidate box with its pooled feature vector. The feature dimension
/// is fixed per run (1024 by default upstream).
struct ProposalRecord {
  ImageId image_id = 0;
  BoundingBox box;
  double objectness = 0.0;
  bool in_void = false;
  std::vector<float> feature;

  friend bool operator==(const ProposalRecord&, const ProposalRecord&) = default;
};

// ---------------------------------------------------------------------------
// Proposal-feature file (OPSF), little-endian:
//   magic "OPSF", version u16, feature_dim u32, record_count u64
//   record: image_id u64, box 4*f32 (x,y,w,h), objectness f32,
//           in_void u8, padding u8*3, feature f32*D
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "OPSF I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("unexpected end of feature file");
  return v;
}

}  // namespace detail

inline constexpr char kFeatureMagic[4] = {'O', 'P', 'S', 'F'};
inline constexpr std::uint16_t kFeatureVersion = 1;

inline void write_feature_file(const std::string& path,
                               std::span<const ProposalRecord> records,
                               std::uint32_t feature_dim) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create feature file: " + path);
  out.write(kFeatureMagic, 4);
  detail::put<std::uint16_t>(out, kFeatureVersion);
  detail::put<std::uint32_t>(out, feature_dim);
  detail::put<std::uint64_t>(out, records.size());
  for (const ProposalRecord& r : records) {
    if (r.feature.size() != feature_dim)
      throw std::invalid_argument("record feature dimension " +
                                  std::to_string(r.feature.size()) +
                                  " does not match header " +
                                  std::to_string(feature_dim));
    detail::put<std::uint64_t>(out, r.image_id);
    detail::put<float>(out, static_cast<float>(r.box.x));
    detail::put<float>(out, static_cast<float>(r.box.y));
    detail::put<float>(out, static_cast<float>(r.box.w));
    detail::put<float>(out, static_cast<float>(r.box.h));
    detail::put<float>(out, static_cast<float>(r.objectness));
    detail::put<std::uint8_t>(out, r.in_void ? 1 : 0);
    detail::put<std::uint8_t>(out, 0);
    detail::put<std::uint8_t>(out, 0);
    detail::put<std::uint8_t>(out, 0);
    out.write(reinterpret_cast<const char*>(r.feature.data()),
              static_cast<std::streamsize>(feature_dim * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing feature file: " + path);
}

inline std::vector<ProposalRecord> read_feature_file(
    const std::string& path, std::uint32_t* feature_dim_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw std::runtime_error("not a proposal-feature file: " + path);
  const auto version = detail::get<std::uint16_t>(in);
  if (version != kFeatureVersion)
    throw std::runtime_error("unsupported feature file version " +
                             std::to_string(version));
  const auto dim = detail::get<std::uint32_t>(in);
  const auto count = detail::get<std::uint64_t>(in);
  if (feature_dim_out) *feature_dim_out = dim;

  std::vector<ProposalRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ProposalRecord r;
    r.image_id = detail::get<std::uint64_t>(in);
    r.box.x = static_cast<std::int32_t>(detail::get<float>(in));
    r.box.y = static_cast<std::int32_t>(detail::get<float>(in));
    r.box.w = static_cast<std::int32_t>(detail::get<float>(in));
    r.box.h = static_cast<std::int32_t>(detail::get<float>(in));
    r.objectness = detail::get<float>(in);
    r.in_void = detail::get<std::uint8_t>(in) != 0;
    detail::get<std::uint8_t>(in);
    detail::get<std::uint8_t>(in);
    detail::get<std::uint8_t>(in);
    r.feature.resize(dim);
    in.read(reinterpret_cast<char*>(r.feature.data()),
            static_cast<std::streamsize>(dim * sizeof(float)));
    if (!in) throw std::runtime_error("truncated feature file: " + path);
    records.push_back(std::move(r));
  }
  return records;
}

/// Greedy NMS in descending objectness order (ties: image id, then box
/// coordinates, lexicographic). Suppression applies within an image; a box
/// is dropped when its IoU with an already-kept box of the same image
/// exceeds the threshold. The default engine threshold of 1e-7 makes any
/// positive overlap suppress.
inline std::vector<ProposalRecord> dedup_nms(std::vector<ProposalRecord> proposals,
                                             double iou_thresh) {
  std::sort(proposals.begin(), proposals.end(),
            [](const ProposalRecord& a, const ProposalRecord& b) {
              if (a.objectness != b.objectness) return a.objectness > b.objectness;
              if (a.image_id != b.image_id) return a.image_id < b.image_id;
              return a.box < b.box;
            });
  std::vector<ProposalRecord> kept;
  for (ProposalRecord& p : proposals) {
    bool suppressed = false;
    for (const ProposalRecord& q : kept) {
      if (q.image_id != p.image_id) continue;
      if (box_iou(p.box, q.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(p));
  }
  return kept;
}

/// Draw up to n void-region proposals without replacement, probability
/// proportional to objectness, after dropping boxes smaller than min_area.
/// Deterministic for a given rng state.
inline std::vector<ProposalRecord> sample_proposals(
    std::span<const ProposalRecord> proposals, std::size_t n,
    std::int64_t min_area, std::mt19937_64& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < proposals.size(); ++i)
    if (proposals[i].in_void && proposals[i].box.area() >= min_area)
      eligible.push_back(i);

  std::vector<ProposalRecord> picked;
  const std::size_t want = std::min(n, eligible.size());
  picked.reserve(want);
  std::vector<double> weights;
  weights.reserve(eligible.size());
  for (std::size_t i : eligible) weights.push_back(proposals[i].objectness);

  while (picked.size() < want) {
    const std::size_t j = weighted_pick(weights, rng);
    picked.push_back(proposals[eligible[j]]);
    eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(j));
    weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return picked;
}

}  // namespace opseg
