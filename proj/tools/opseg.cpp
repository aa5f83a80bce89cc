// Command-line front end: benchmark-split construction, open-set PQ
// evaluation, exemplar discovery, panoptic fusion, synthetic data, and
// report rendering. Every run writes a <output>.manifest.json with input
// fingerprints and the effective configuration.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opseg/coco.hpp"
#include "opseg/config.hpp"
#include "opseg/core.hpp"
#include "opseg/exemplar.hpp"
#include "opseg/fusion.hpp"
#include "opseg/manifest.hpp"
#include "opseg/metrics.hpp"
#include "opseg/report_io.hpp"
#include "opseg/split.hpp"
#include "opseg/synth.hpp"

namespace {

namespace fs = std::filesystem;

std::string default_png_dir(const std::string& json_path) {
  std::string p = json_path;
  if (p.size() > 5 && p.substr(p.size() - 5) == ".json") p.resize(p.size() - 5);
  return p;
}

opseg::CategoryTable load_categories_json(const std::string& path) {
  const nlohmann::json doc = opseg::detail::read_json_file(path);
  const nlohmann::json& list = doc.is_array() ? doc : doc.at("categories");
  std::vector<opseg::CategoryEntry> entries;
  entries.push_back({0, "void", opseg::Kind::Stuff, opseg::Status::Void});
  for (const auto& c : list) {
    opseg::CategoryEntry e;
    e.id = c.at("id").get<opseg::CategoryId>();
    e.name = c.at("name").get<std::string>();
    e.kind = c.at("isthing").get<int>() != 0 ? opseg::Kind::Thing
                                             : opseg::Kind::Stuff;
    e.status = opseg::Status::Known;
    if (c.contains("status") && c.at("status").get<std::string>() == "unknown")
      e.status = opseg::Status::Unknown;
    entries.push_back(e);
  }
  return opseg::CategoryTable(std::move(entries));
}

int run_build_split(const std::string& src, std::string src_pngs,
                    const std::string& split, const std::string& role,
                    const std::string& out, std::string out_pngs) {
  if (src_pngs.empty()) src_pngs = default_png_dir(src);
  if (out_pngs.empty()) out_pngs = default_png_dir(out);

  const opseg::Dataset dataset = opseg::load_coco_panoptic(src, src_pngs);

  opseg::SplitSpec spec;
  std::vector<std::string> manifest_inputs = {src};
  if (const opseg::SplitSpec* preset =
          opseg::find_split(opseg::preset_splits(), split)) {
    spec = *preset;
  } else {
    spec = opseg::load_split_spec(split);
    manifest_inputs.push_back(split);
  }
  const opseg::SplitRole r =
      role == "train" ? opseg::SplitRole::Train : opseg::SplitRole::Eval;

  const opseg::Dataset result = opseg::build_open_set_split(dataset, spec, r);
  opseg::save_coco_panoptic(result, out, out_pngs);
  opseg::write_run_manifest(out, "build-split", manifest_inputs,
                            {{"split", split}, {"role", role}});

  std::cout << "wrote " << result.manifest.images.size() << " images, split '"
            << result.manifest.split_name << "' ("
            << opseg::expand_split(spec, opseg::preset_splits()).size()
            << " unknown classes)\n";
  return 0;
}

int run_evaluate(const std::string& gt_json, std::string gt_pngs,
                 const std::string& pred_json, std::string pred_pngs,
                 const std::string& out, unsigned workers) {
  if (gt_pngs.empty()) gt_pngs = default_png_dir(gt_json);
  if (pred_pngs.empty()) pred_pngs = default_png_dir(pred_json);

  const opseg::Dataset gt = opseg::load_coco_panoptic(gt_json, gt_pngs);
  const opseg::Dataset pred = opseg::load_coco_panoptic(pred_json, pred_pngs);

  std::map<opseg::ImageId, const opseg::PanopticMap*> pred_by_id;
  for (std::size_t i = 0; i < pred.manifest.images.size(); ++i)
    pred_by_id[pred.manifest.images[i].id] = &pred.maps[i];

  std::vector<opseg::EvalItem> items;
  for (std::size_t i = 0; i < gt.manifest.images.size(); ++i) {
    auto it = pred_by_id.find(gt.manifest.images[i].id);
    if (it == pred_by_id.end())
      throw std::runtime_error("prediction missing for image " +
                               std::to_string(gt.manifest.images[i].id));
    items.push_back({gt.manifest.images[i].id, &gt.maps[i], it->second});
  }

  const opseg::MetricReport report =
      opseg::evaluate_dataset(items, gt.manifest.categories, workers);
  std::cout << opseg::format_report_text(report, gt.manifest.categories);

  if (!out.empty()) {
    opseg::write_report_json(out, report, gt.manifest.categories);
    opseg::write_run_manifest(out, "evaluate", {gt_json, pred_json},
                              {{"workers", std::to_string(workers)}});
  }
  return 0;
}

int run_discover(const std::string& features, const std::string& config,
                 std::uint64_t seed, bool seed_set, const std::string& out) {
  opseg::EngineConfig cfg;
  std::map<std::string, std::string> file_cfg;
  if (!config.empty()) {
    file_cfg = opseg::parse_config_file(config);
    opseg::apply_engine_config(file_cfg, cfg);
  }
  if (seed_set) cfg.rng_seed = seed;
  cfg.validate();

  std::uint32_t dim = 0;
  std::vector<opseg::ProposalRecord> records =
      opseg::read_feature_file(features, &dim);
  const auto steps = opseg::batch_by_image(std::move(records));

  // File-backed features are the provider: stored records keep their vectors.
  const opseg::FeatureProvider provider =
      [](const opseg::ProposalRecord& r) { return r.feature; };

  const opseg::DiscoveryResult result =
      opseg::run_discovery(steps, cfg, provider);
  opseg::write_pseudo_labels(out, result.labels);

  std::map<std::string, std::string> effective = file_cfg;
  effective["engine.rng_seed"] = std::to_string(cfg.rng_seed);
  std::vector<std::string> inputs = {features};
  if (!config.empty()) inputs.push_back(config);
  opseg::write_run_manifest(out, "discover", inputs, effective);

  std::cout << "steps: " << steps.size()
            << "  classes found: " << result.store.found_class_count
            << "  exemplars: " << result.store.exemplar_count()
            << "  pseudo-labels: " << result.labels.size() << "\n";
  return 0;
}

int run_fuse(const std::string& masks, const std::string& semantic_dir,
             const std::string& categories, const std::string& out,
             std::string out_pngs, double keep_fraction,
             std::uint64_t stuff_area_min, bool unknown_over_stuff) {
  if (out_pngs.empty()) out_pngs = default_png_dir(out);
  const opseg::CategoryTable cats = load_categories_json(categories);
  const std::vector<opseg::MaskRecord> mask_records =
      opseg::read_mask_file(masks);

  std::map<opseg::ImageId, std::vector<const opseg::MaskRecord*>> by_image;
  for (const opseg::MaskRecord& r : mask_records)
    by_image[r.image_id].push_back(&r);

  opseg::FusionConfig fcfg;
  fcfg.overlap_keep_fraction = keep_fraction;
  fcfg.stuff_area_min = stuff_area_min;
  fcfg.unknown_over_stuff = unknown_over_stuff;

  opseg::Dataset result;
  result.manifest.categories = cats;
  result.manifest.split_name = "fused";
  for (const auto& [image_id, recs] : by_image) {
    const std::string sem_path =
        (fs::path(semantic_dir) / (std::to_string(image_id) + ".png")).string();
    const opseg::RgbImage sem_img = opseg::read_png_rgb8(sem_path);
    const std::vector<opseg::SegmentId> sem_ids =
        opseg::decode_segment_ids(sem_img);
    std::vector<opseg::CategoryId> semantic(sem_ids.begin(), sem_ids.end());

    std::vector<opseg::InstancePrediction> known, unknown;
    for (const opseg::MaskRecord* r : recs) {
      opseg::InstancePrediction inst{r->mask, r->category_id, r->confidence};
      if (cats.at(r->category_id).status == opseg::Status::Unknown)
        unknown.push_back(std::move(inst));
      else
        known.push_back(std::move(inst));
    }
    const opseg::PanopticMap fused =
        opseg::fuse_panoptic(known, unknown, semantic, sem_img.width,
                             sem_img.height, cats, fcfg);

    opseg::ImageRecord rec;
    rec.id = image_id;
    rec.width = sem_img.width;
    rec.height = sem_img.height;
    rec.file_name = std::to_string(image_id) + ".png";
    result.manifest.images.push_back(rec);
    result.maps.push_back(fused);
  }

  opseg::save_coco_panoptic(result, out, out_pngs);
  opseg::write_run_manifest(
      out, "fuse", {masks, categories},
      {{"overlap_keep_fraction", std::to_string(keep_fraction)},
       {"stuff_area_min", std::to_string(stuff_area_min)},
       {"unknown_over_stuff", unknown_over_stuff ? "1" : "0"}});
  std::cout << "fused " << result.manifest.images.size() << " images\n";
  return 0;
}

int run_synth_features(const opseg::SynthFeatureConfig& cfg,
                       const std::string& out, const std::string& truth) {
  const opseg::SynthFeatures sf = opseg::generate_synthetic_features(cfg);
  const std::vector<opseg::ProposalRecord> flat = opseg::flatten_steps(sf);
  opseg::write_feature_file(out, flat, cfg.feature_dim);
  if (!truth.empty()) opseg::write_truth_file(truth, sf);
  opseg::write_run_manifest(
      out, "synth features", {},
      {{"classes", std::to_string(cfg.n_planted_classes)},
       {"points_per_class", std::to_string(cfg.points_per_class)},
       {"distractor_fraction", std::to_string(cfg.distractor_fraction)},
       {"feature_dim", std::to_string(cfg.feature_dim)},
       {"seed", std::to_string(cfg.rng_seed)}});
  std::cout << "wrote " << flat.size() << " proposals over " << sf.steps.size()
            << " steps\n";
  return 0;
}

int run_synth_panoptic(const opseg::SynthPanopticConfig& cfg,
                       const std::string& out_dir) {
  const opseg::SynthPanoptic sp = opseg::generate_synthetic_panoptic(cfg);
  fs::create_directories(out_dir);

  auto save = [&](const std::string& stem,
                  const std::vector<opseg::PanopticMap>& maps) {
    opseg::Dataset ds;
    ds.manifest.categories = sp.categories;
    ds.manifest.split_name = stem;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      opseg::ImageRecord rec;
      rec.id = sp.image_ids[i];
      rec.width = maps[i].width;
      rec.height = maps[i].height;
      rec.file_name = std::to_string(rec.id) + ".png";
      ds.manifest.images.push_back(rec);
      ds.maps.push_back(maps[i]);
    }
    opseg::save_coco_panoptic(ds, (fs::path(out_dir) / (stem + ".json")).string(),
                              (fs::path(out_dir) / stem).string());
  };
  save("gt", sp.gt);
  save("pred", sp.pred);

  if (cfg.compute_expected) {
    std::ofstream out((fs::path(out_dir) / "expected_report.json").string(),
                      std::ios::binary);
    out << opseg::report_to_json(sp.expected, sp.categories).dump(2) << '\n';
  }
  opseg::write_run_manifest(
      (fs::path(out_dir) / "gt.json").string(), "synth panoptic", {},
      {{"images", std::to_string(cfg.n_images)},
       {"width", std::to_string(cfg.width)},
       {"height", std::to_string(cfg.height)},
       {"seed", std::to_string(cfg.rng_seed)}});
  std::cout << "wrote " << sp.gt.size() << " gt/pred pairs under " << out_dir
            << "\n";
  return 0;
}

int run_report(const std::string& in) {
  const nlohmann::json doc = opseg::detail::read_json_file(in);
  const opseg::NamedReport named = opseg::report_from_json(doc);
  std::cout << opseg::format_report_text(
      named.report,
      [&](opseg::CategoryId cls) { return named.name_of(cls); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-set panoptic segmentation toolkit"};
  app.require_subcommand(1);

  // build-split
  auto* split_cmd =
      app.add_subcommand("build-split", "construct an open-set benchmark split");
  std::string bs_src, bs_src_pngs, bs_split = "5", bs_role = "train", bs_out,
              bs_out_pngs;
  split_cmd->add_option("--src", bs_src, "source panoptic JSON")->required();
  split_cmd->add_option("--src-pngs", bs_src_pngs,
                        "source PNG directory (default: JSON path minus .json)");
  split_cmd->add_option("--split", bs_split, "5 | 10 | 20 | path to a split JSON");
  split_cmd->add_option("--role", bs_role, "train | eval")
      ->check(CLI::IsMember({"train", "eval"}));
  split_cmd->add_option("--out", bs_out, "output panoptic JSON")->required();
  split_cmd->add_option("--out-pngs", bs_out_pngs, "output PNG directory");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "open-set PQ/SQ/RQ evaluation");
  std::string ev_gt, ev_gt_pngs, ev_pred, ev_pred_pngs, ev_out;
  unsigned ev_workers = 0;
  eval_cmd->add_option("--gt", ev_gt, "ground-truth panoptic JSON")->required();
  eval_cmd->add_option("--gt-pngs", ev_gt_pngs, "ground-truth PNG directory");
  eval_cmd->add_option("--pred", ev_pred, "prediction panoptic JSON")->required();
  eval_cmd->add_option("--pred-pngs", ev_pred_pngs, "prediction PNG directory");
  eval_cmd->add_option("--out", ev_out, "report JSON output path");
  eval_cmd->add_option("--workers", ev_workers,
                       "worker threads (0 = OPSEG_THREADS or hardware)");

  // discover
  auto* disc_cmd =
      app.add_subcommand("discover", "exemplar-based unknown-class discovery");
  std::string dc_features, dc_config, dc_out;
  std::uint64_t dc_seed = 0;
  disc_cmd->add_option("--features", dc_features, "proposal-feature file (OPSF)")
      ->required();
  disc_cmd->add_option("--config", dc_config, "dotted-key config file");
  auto* seed_opt = disc_cmd->add_option("--seed", dc_seed, "engine RNG seed");
  disc_cmd->add_option("--out", dc_out, "pseudo-label output file")->required();

  // fuse
  auto* fuse_cmd =
      app.add_subcommand("fuse", "combine instances and semantics into panoptic maps");
  std::string fu_masks, fu_semantic, fu_categories, fu_out, fu_out_pngs;
  double fu_keep = 0.5;
  std::uint64_t fu_stuff_min = 4096;
  bool fu_unknown_over_stuff = false;
  fuse_cmd->add_option("--masks", fu_masks, "instance-mask file (OPSM)")
      ->required();
  fuse_cmd->add_option("--semantic-dir", fu_semantic,
                       "directory of <image_id>.png semantic maps")
      ->required();
  fuse_cmd->add_option("--categories", fu_categories, "categories JSON")
      ->required();
  fuse_cmd->add_option("--out", fu_out, "output panoptic JSON")->required();
  fuse_cmd->add_option("--out-pngs", fu_out_pngs, "output PNG directory");
  fuse_cmd->add_option("--keep-fraction", fu_keep,
                       "minimum surviving mask fraction");
  fuse_cmd->add_option("--stuff-area-min", fu_stuff_min,
                       "void stuff regions below this pixel count");
  fuse_cmd->add_flag("--unknown-over-stuff", fu_unknown_over_stuff,
                     "let unknown instances claim stuff pixels");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "synthetic data generation");
  synth_cmd->require_subcommand(1);
  auto* synth_feat = synth_cmd->add_subcommand("features", "planted feature stream");
  opseg::SynthFeatureConfig sf_cfg;
  std::string sf_out, sf_truth;
  synth_feat->add_option("--out", sf_out, "feature file output (OPSF)")->required();
  synth_feat->add_option("--truth", sf_truth, "ground-truth assignment CSV");
  synth_feat->add_option("--classes", sf_cfg.n_planted_classes, "planted classes");
  synth_feat->add_option("--points-per-class", sf_cfg.points_per_class, "");
  synth_feat->add_option("--distractor-fraction", sf_cfg.distractor_fraction, "");
  synth_feat->add_option("--dim", sf_cfg.feature_dim, "feature dimension");
  synth_feat->add_option("--seed", sf_cfg.rng_seed, "generator seed");

  auto* synth_pan = synth_cmd->add_subcommand("panoptic", "gt/pred map pairs");
  opseg::SynthPanopticConfig sp_cfg;
  std::string sp_out_dir;
  bool sp_coco_names = false;
  synth_pan->add_option("--out-dir", sp_out_dir, "output directory")->required();
  synth_pan->add_option("--images", sp_cfg.n_images, "image count");
  synth_pan->add_option("--width", sp_cfg.width, "");
  synth_pan->add_option("--height", sp_cfg.height, "");
  synth_pan->add_option("--segments", sp_cfg.segments_per_image, "");
  synth_pan->add_option("--drop", sp_cfg.drop_prob, "segment drop probability");
  synth_pan->add_option("--flip", sp_cfg.class_flip_prob, "class flip probability");
  synth_pan->add_option("--erode", sp_cfg.erode_prob, "erosion probability");
  synth_pan->add_option("--add", sp_cfg.add_prob, "spurious segment probability");
  synth_pan->add_option("--seed", sp_cfg.rng_seed, "generator seed");
  synth_pan->add_flag("--coco-names", sp_coco_names,
                      "name the categories after the benchmark split classes");

  // report
  auto* report_cmd = app.add_subcommand("report", "render a report JSON as text");
  std::string rp_in;
  report_cmd->add_option("--in", rp_in, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;  // usage error
  }

  try {
    if (split_cmd->parsed())
      return run_build_split(bs_src, bs_src_pngs, bs_split, bs_role, bs_out,
                             bs_out_pngs);
    if (eval_cmd->parsed())
      return run_evaluate(ev_gt, ev_gt_pngs, ev_pred, ev_pred_pngs, ev_out,
                          ev_workers);
    if (disc_cmd->parsed())
      return run_discover(dc_features, dc_config, dc_seed, seed_opt->count() > 0,
                          dc_out);
    if (fuse_cmd->parsed())
      return run_fuse(fu_masks, fu_semantic, fu_categories, fu_out, fu_out_pngs,
                      fu_keep, fu_stuff_min, fu_unknown_over_stuff);
    if (synth_cmd->parsed()) {
      if (synth_feat->parsed()) return run_synth_features(sf_cfg, sf_out, sf_truth);
      if (synth_pan->parsed()) {
        if (sp_coco_names) {
          sp_cfg.thing_names = {"car",          "cow",    "pizza",   "toilet",
                                "boat",         "tie",    "zebra",   "stop sign",
                                "dining table", "banana", "bicycle", "cake",
                                "sink",         "cat",    "keyboard", "bear",
                                "person",       "dog"};
          sp_cfg.stuff_names = {"sky", "grass", "road"};
          sp_cfg.n_unknown_things = 0;
        }
        return run_synth_panoptic(sp_cfg, sp_out_dir);
      }
    }
    if (report_cmd->parsed()) return run_report(rp_in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 2;
}
