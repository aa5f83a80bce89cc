#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opseg/core.hpp"
#include "opseg/png.hpp"

namespace opseg {

struct ImageRecord {
  ImageId id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;  // panoptic PNG name, relative to the PNG directory
};

struct DatasetManifest {
  std::vector<ImageRecord> images;
  CategoryTable categories;
  std::string split_name;
};

/// Manifest plus one panoptic map per image (parallel to manifest.images).
struct Dataset {
  DatasetManifest manifest;
  std::vector<PanopticMap> maps;
};

namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open JSON file: " + path);
  nlohmann::json doc;
  in >> doc;
  return doc;
}

// Tight boxes for every segment in one pass over the grid.
inline std::map<SegmentId, BoundingBox> tight_bboxes(const PanopticMap& map) {
  struct Extent {
    int min_x, min_y, max_x, max_y;
  };
  std::map<SegmentId, Extent> extents;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const SegmentId id = map.at(x, y);
      if (id == kVoidSegment) continue;
      auto [it, fresh] = extents.try_emplace(id, Extent{x, y, x, y});
      if (!fresh) {
        Extent& e = it->second;
        e.min_x = std::min(e.min_x, x);
        e.min_y = std::min(e.min_y, y);
        e.max_x = std::max(e.max_x, x);
        e.max_y = std::max(e.max_y, y);
      }
    }
  std::map<SegmentId, BoundingBox> boxes;
  for (const auto& [id, e] : extents)
    boxes[id] = {e.min_x, e.min_y, e.max_x - e.min_x + 1, e.max_y - e.min_y + 1};
  return boxes;
}

}  // namespace detail

inline constexpr CategoryId kVoidCategoryId = 0;

/// Load a COCO-format panoptic dataset: annotation JSON plus one id-encoded
/// PNG per image. Categories arrive with status=known unless the entry
/// carries an explicit "status" field (written by the split builder). A void
/// entry with id 0 is synthesized. Segment areas are recomputed from pixels.
inline Dataset load_coco_panoptic(const std::string& json_path,
                                  const std::string& png_dir) {
  const nlohmann::json doc = detail::read_json_file(json_path);

  std::vector<CategoryEntry> entries;
  entries.push_back({kVoidCategoryId, "void", Kind::Stuff, Status::Void});
  for (const auto& c : doc.at("categories")) {
    CategoryEntry e;
    e.id = c.at("id").get<CategoryId>();
    if (e.id == kVoidCategoryId)
      throw std::runtime_error("category id 0 is reserved for void");
    e.name = c.at("name").get<std::string>();
    e.kind = c.at("isthing").get<int>() != 0 ? Kind::Thing : Kind::Stuff;
    e.status = Status::Known;
    if (c.contains("status") && c.at("status").get<std::string>() == "unknown")
      e.status = Status::Unknown;
    entries.push_back(e);
  }

  Dataset ds;
  ds.manifest.categories = CategoryTable(std::move(entries));
  if (doc.contains("split_name"))
    ds.manifest.split_name = doc.at("split_name").get<std::string>();

  std::map<ImageId, const nlohmann::json*> annotations;
  for (const auto& a : doc.at("annotations"))
    annotations[a.at("image_id").get<ImageId>()] = &a;

  for (const auto& im : doc.at("images")) {
    ImageRecord rec;
    rec.id = im.at("id").get<ImageId>();
    rec.width = im.at("width").get<int>();
    rec.height = im.at("height").get<int>();

    auto ann_it = annotations.find(rec.id);
    if (ann_it == annotations.end())
      throw std::runtime_error("image " + std::to_string(rec.id) +
                               " has no annotation entry");
    const nlohmann::json& ann = *ann_it->second;
    rec.file_name = ann.at("file_name").get<std::string>();

    const std::string png_path =
        (std::filesystem::path(png_dir) / rec.file_name).string();
    const RgbImage img = read_png_rgb8(png_path);
    if (img.width != rec.width || img.height != rec.height)
      throw std::runtime_error("PNG dimensions disagree with image record " +
                               std::to_string(rec.id));

    PanopticMap map;
    map.width = img.width;
    map.height = img.height;
    map.pixels = decode_segment_ids(img);

    for (const auto& s : ann.at("segments_info")) {
      SegmentInfo info;
      const SegmentId sid = s.at("id").get<SegmentId>();
      info.category_id = s.at("category_id").get<CategoryId>();
      info.iscrowd = s.value("iscrowd", 0) != 0;
      if (!ds.manifest.categories.find(info.category_id))
        throw std::runtime_error("segment category " +
                                 std::to_string(info.category_id) +
                                 " missing from categories list");
      if (!map.segments.emplace(sid, info).second)
        throw std::runtime_error("duplicate segment id " + std::to_string(sid) +
                                 " in image " + std::to_string(rec.id));
    }

    for (SegmentId id : map.pixels)
      if (id != kVoidSegment && !map.segments.count(id))
        throw std::runtime_error("PNG id " + std::to_string(id) +
                                 " absent from segments_info of image " +
                                 std::to_string(rec.id));
    map.recompute_areas();
    for (const auto& s : ann.at("segments_info")) {
      const SegmentId sid = s.at("id").get<SegmentId>();
      if (!map.segments.count(sid))
        throw std::runtime_error("segment " + std::to_string(sid) +
                                 " of image " + std::to_string(rec.id) +
                                 " owns no pixels");
    }

    ds.manifest.images.push_back(std::move(rec));
    ds.maps.push_back(std::move(map));
  }
  return ds;
}

/// Inverse of load_coco_panoptic; identical datasets always serialize to
/// identical bytes (sorted JSON keys, fixed PNG encoder settings).
inline void save_coco_panoptic(const Dataset& ds, const std::string& json_path,
                               const std::string& png_dir) {
  if (ds.manifest.images.size() != ds.maps.size())
    throw std::invalid_argument("dataset image/map count mismatch");
  std::filesystem::create_directories(png_dir);

  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  doc["categories"] = nlohmann::json::array();
  if (!ds.manifest.split_name.empty())
    doc["split_name"] = ds.manifest.split_name;

  for (const CategoryEntry& e : ds.manifest.categories.entries()) {
    if (e.status == Status::Void) continue;  // implicit, id 0
    nlohmann::json c;
    c["id"] = e.id;
    c["name"] = e.name;
    c["isthing"] = e.kind == Kind::Thing ? 1 : 0;
    if (e.status == Status::Unknown) c["status"] = "unknown";
    doc["categories"].push_back(c);
  }

  for (std::size_t i = 0; i < ds.manifest.images.size(); ++i) {
    const ImageRecord& rec = ds.manifest.images[i];
    const PanopticMap& map = ds.maps[i];

    nlohmann::json im;
    im["id"] = rec.id;
    im["width"] = rec.width;
    im["height"] = rec.height;
    im["file_name"] = rec.file_name;
    doc["images"].push_back(im);

    nlohmann::json ann;
    ann["image_id"] = rec.id;
    ann["file_name"] = rec.file_name;
    ann["segments_info"] = nlohmann::json::array();
    const std::map<SegmentId, BoundingBox> boxes = detail::tight_bboxes(map);
    for (const auto& [sid, info] : map.segments) {
      nlohmann::json s;
      s["id"] = sid;
      s["category_id"] = info.category_id;
      s["iscrowd"] = info.iscrowd ? 1 : 0;
      s["area"] = info.area;
      const auto bb_it = boxes.find(sid);
      const BoundingBox bb = bb_it == boxes.end() ? BoundingBox{} : bb_it->second;
      s["bbox"] = {bb.x, bb.y, bb.w, bb.h};
      ann["segments_info"].push_back(s);
    }
    doc["annotations"].push_back(ann);

    write_png_rgb8((std::filesystem::path(png_dir) / rec.file_name).string(),
                   encode_segment_ids(map));
  }

  std::ofstream out(json_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create JSON file: " + json_path);
  out << doc.dump(2) << '\n';
}

}  // namespace opseg
