#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cxr/checkpoint.hpp"
#include "cxr/csv.hpp"
#include "cxr/data_pipeline.hpp"
#include "cxr/evaluation.hpp"
#include "cxr/image_io.hpp"
#include "cxr/parallel.hpp"
#include "cxr/prior_maps.hpp"
#include "cxr/render.hpp"
#include "cxr/roi_mask.hpp"
#include "cxr/run_manifest.hpp"
#include "cxr/synth.hpp"
#include "cxr/training.hpp"

namespace cxr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path.string());
}

void require_dir(const fs::path& path, const std::string& what) {
  if (!fs::is_directory(path)) throw UsageError(what + " not found: " + path.string());
}

/// Runs `fn` turning argument/config exceptions raised during validation into
/// usage errors.
template <typename Fn>
auto validating(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(what + ": " + e.what());
  }
}

RunManifest start_manifest(const std::string& subcommand, const std::vector<std::string>& argv) {
  RunManifest m;
  m.subcommand = subcommand;
  m.argv = argv;
  m.started = utc_timestamp();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& dir) {
  m.finished = utc_timestamp();
  write_manifest(dir / "run_manifest.json", m);
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

Dataset load_dataset_dir(const fs::path& root, std::uint64_t split_seed) {
  require_dir(root, "data directory");
  DatasetLayout layout;
  layout.root = root;
  require_file(root / layout.labels_csv, "label CSV");
  return validating("cannot load dataset " + root.string(),
                    [&] { return load_dataset(layout, split_seed); });
}

PriorMapSet load_priors_for(const fs::path& dir, const std::vector<std::string>& classes) {
  require_dir(dir, "prior directory");
  PriorMapSet set = validating("cannot load priors", [&] { return load_prior_set(dir); });
  if (set.class_names != classes) {
    throw UsageError("prior classes (" + join(set.class_names, ", ") +
                     ") do not match dataset classes (" + join(classes, ", ") + ")");
  }
  return set;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string out;
  int n_images = 2000;
  std::uint64_t seed = 7;
  int image_edge = 256;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  SynthConfig cfg = reference_synth_config();
  cfg.n_images = a.n_images;
  cfg.seed = a.seed;
  if (a.image_edge != cfg.image_edge) {
    // Scale the class regions with the canvas.
    const double s = static_cast<double>(a.image_edge) / cfg.image_edge;
    for (auto& r : cfg.lesion_regions) {
      r = {static_cast<int>(r.x * s), static_cast<int>(r.y * s), static_cast<int>(r.w * s),
           static_cast<int>(r.h * s)};
    }
    cfg.image_edge = a.image_edge;
  }
  validating("invalid synthetic config", [&] {
    cfg.validate();
    return 0;
  });
  RunManifest m = start_manifest("synth", argv);
  m.seed = cfg.seed;
  m.config_json = json({{"n_images", cfg.n_images},
                        {"image_edge", cfg.image_edge},
                        {"classes", cfg.class_names},
                        {"seed", cfg.seed}})
                      .dump();
  write_synth_dataset(cfg, a.out);
  m.outputs["dataset"] = a.out;
  finish_manifest(m, a.out);
  std::cout << "wrote " << cfg.n_images << " synthetic images to " << a.out << "\n";
  return 0;
}

// ------------------------------------------------------------- gen-priors

struct GenPriorsArgs {
  std::string bbox, classes, out, localization_classes, target_classes, mapping;
  int resolution = 1024;
};

int cmd_gen_priors(const GenPriorsArgs& a, const std::vector<std::string>& argv) {
  require_file(a.bbox, "bbox CSV");
  require_file(a.classes, "classes file");
  if (!a.localization_classes.empty()) require_file(a.localization_classes, "localization classes");
  if (!a.target_classes.empty() || !a.mapping.empty()) {
    if (a.target_classes.empty() || a.mapping.empty()) {
      throw UsageError("--target-classes and --mapping must be given together");
    }
    require_file(a.target_classes, "target classes file");
    require_file(a.mapping, "class mapping");
  }
  if (a.resolution < 1) throw UsageError("--resolution must be positive");

  const auto classes = validating("bad classes file", [&] { return load_class_names(a.classes); });
  std::vector<std::string> loc;
  if (!a.localization_classes.empty()) {
    loc = load_class_names(a.localization_classes);
  } else {
    for (const auto& n : nih_localization_classes()) {
      if (std::find(classes.begin(), classes.end(), n) != classes.end()) loc.push_back(n);
    }
    if (loc.empty()) loc = classes;
  }
  const auto boxes =
      validating("bad bbox CSV", [&] { return load_bbox_index(a.bbox, classes, loc); });
  if (boxes.empty()) warn("no annotations in " + a.bbox + "; every prior map is all ones");

  RunManifest m = start_manifest("gen-priors", argv);
  m.inputs = {{"bbox", a.bbox}, {"classes", a.classes}};
  m.config_json = json({{"resolution", a.resolution}}).dump();
  PriorMapSet set = validating("cannot build priors", [&] {
    return build_prior_set(boxes, classes, a.resolution, a.resolution);
  });
  if (!a.target_classes.empty()) {
    set = remap_prior_set(set, load_class_names(a.target_classes), load_class_mapping(a.mapping));
  }
  save_prior_set(set, a.out);
  m.outputs["priors"] = a.out;
  finish_manifest(m, a.out);
  int data_maps = 0;
  for (const auto& p : set.maps) data_maps += p.n_images > 0;
  std::cout << "wrote " << set.size() << " prior maps (" << data_maps << " from annotations, "
            << set.size() - data_maps << " all-ones) to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- gen-roi

struct GenRoiArgs {
  std::string images, out, segmenter = "fallback";
  int radius = 8;
  double threshold = 0.5;
  int working_edge = 256;
};

int cmd_gen_roi(const GenRoiArgs& a, const std::vector<std::string>& argv) {
  require_dir(a.images, "image directory");
  std::unique_ptr<Segmenter> seg;
  if (a.segmenter == "fallback") {
    seg = std::make_unique<OtsuSegmenter>();
  } else if (a.segmenter.rfind("external:", 0) == 0) {
    const fs::path dir = a.segmenter.substr(9);
    require_dir(dir, "external segmentation directory");
    seg = std::make_unique<ExternalSegmenter>(dir);
  } else {
    throw UsageError("--segmenter must be 'fallback' or 'external:DIR'");
  }
  if (a.radius < 0) throw UsageError("--radius must be >= 0");
  if (!(a.threshold >= 0 && a.threshold <= 1)) throw UsageError("--threshold must be in [0, 1]");
  const auto images = list_images(a.images);
  if (images.empty()) throw UsageError("no PNG images in " + a.images);

  RoiParams params;
  params.threshold = a.threshold;
  params.dilation_radius = a.radius;
  params.working_edge = a.working_edge;

  RunManifest m = start_manifest("gen-roi", argv);
  m.inputs["images"] = a.images;
  m.config_json = json({{"segmenter", seg->name()},
                        {"threshold", params.threshold},
                        {"keep_islands", params.keep_islands},
                        {"dilation_radius", params.dilation_radius},
                        {"working_edge", params.working_edge}})
                      .dump();
  fs::create_directories(a.out);
  std::vector<std::string> errors(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    try {
      const Tensor img = read_image(images[i]);
      const RoiMask roi = generate_roi_mask(img, images[i].filename().string(), *seg, params);
      save_roi_mask(fs::path(a.out) / images[i].filename(), roi.mask);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  int failed = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "error: " << images[i].filename().string() << ": " << errors[i] << "\n";
      ++failed;
    }
  }
  m.outputs["masks"] = a.out;
  finish_manifest(m, a.out);
  std::cout << "wrote " << images.size() - failed << " ROI masks to " << a.out << "\n";
  return failed ? 1 : 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config, data, priors, roi, out, init_weights;
  std::int64_t seed = -1;
  int epochs = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& text) {
  const json j = json::parse(text);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "model" && it.key() != "train") {
      throw std::invalid_argument("unknown top-level key '" + it.key() + "' (model, train)");
    }
  }
  RunConfig rc;
  const json model = j.value("model", json::object());
  rc.model = model_config_from_json(model.dump());
  rc.train = train_config_from_json(j.value("train", json::object()).dump());
  if (!model.contains("seed")) rc.model.seed = rc.train.seed;
  return rc;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  require_file(a.config, "config file");
  RunConfig rc = validating("invalid config " + a.config,
                            [&] { return parse_run_config(read_text(a.config)); });
  if (a.seed >= 0) {
    rc.train.seed = static_cast<std::uint64_t>(a.seed);
    rc.model.seed = static_cast<std::uint64_t>(a.seed);
  }
  if (a.epochs > 0) rc.train.epochs = a.epochs;
  const Dataset ds = load_dataset_dir(a.data, rc.train.seed);
  const int k = static_cast<int>(ds.class_names.size());
  if (rc.model.n_classes == 0) rc.model.n_classes = k;
  if (rc.model.n_classes != k) {
    throw UsageError("config has n_classes " + std::to_string(rc.model.n_classes) +
                     " but the dataset has " + std::to_string(k) + " classes");
  }
  validating("invalid config " + a.config, [&] {
    rc.model.validate();
    rc.train.validate();
    return 0;
  });

  std::optional<PriorMapSet> priors;
  if (uses_priors(rc.model.attention)) {
    if (a.priors.empty()) {
      throw UsageError(std::string("attention=") + attention_mode_name(rc.model.attention) +
                       " needs --priors");
    }
    priors = load_priors_for(a.priors, ds.class_names);
  } else if (!a.priors.empty()) {
    warn(std::string("attention=") + attention_mode_name(rc.model.attention) +
         " does not use prior maps; ignoring --priors");
  }
  std::optional<fs::path> roi_dir;
  if (uses_roi(rc.model.attention)) {
    if (!a.roi.empty()) {
      require_dir(a.roi, "ROI mask directory");
      roi_dir = a.roi;
    } else {
      warn("no --roi given; computing fallback ROI masks on the fly");
    }
  }
  if (!a.init_weights.empty()) require_file(a.init_weights, "initial weights");

  RunManifest m = start_manifest("train", argv);
  m.seed = rc.train.seed;
  m.config_json =
      json({{"model", json::parse(to_json(rc.model))}, {"train", json::parse(to_json(rc.train))}})
          .dump();
  m.inputs = {{"config", a.config}, {"data", a.data}};
  if (priors) m.inputs["priors"] = a.priors;
  if (roi_dir) m.inputs["roi"] = a.roi;

  Model model(rc.model);
  model.init();
  if (!a.init_weights.empty()) {
    const int n = import_parameters(a.init_weights, model);
    std::cout << "imported " << n << " tensors from " << a.init_weights << "\n";
  }
  TrainInputs in;
  in.dataset = &ds;
  in.priors = priors ? &*priors : nullptr;
  in.roi_dir = roi_dir;
  in.out_dir = a.out;
  fs::create_directories(a.out);
  write_text_atomic(fs::path(a.out) / "config.json", json::parse(m.config_json).dump(2) + "\n");
  std::cout << "epoch  lr        train_loss  val_mean_auc  seconds\n";
  const TrainResult result = train(model, in, rc.train, [](const EpochLog& e) {
    char line[128];
    std::snprintf(line, sizeof(line), "%5d  %.1e  %10.6f  %12s  %7.1f\n", e.epoch, e.lr,
                  e.train_loss,
                  e.val_mean_auc ? std::to_string(*e.val_mean_auc).c_str() : "nan", e.seconds);
    std::cout << line << std::flush;
  });
  m.outputs = {{"best_checkpoint", result.best_checkpoint.string()},
               {"last_checkpoint", result.last_checkpoint.string()},
               {"log", (fs::path(a.out) / "train_log.csv").string()}};
  finish_manifest(m, a.out);
  std::cout << "best epoch " << result.best_epoch << ", checkpoint " << result.best_checkpoint
            << "\n";
  return 0;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, data, priors, roi, out, mode = "cls", split = "test", thresholds;
  bool include_negatives = false;
};

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != trim(item).size() || !(v >= 0 && v < 1)) {
      throw UsageError("bad IoU threshold '" + item + "' (expected values in [0, 1))");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("no IoU thresholds given");
  return out;
}

struct LoadedModel {
  std::unique_ptr<Model> model;
  std::optional<PriorMapSet> priors;
  std::optional<fs::path> roi_dir;
};

LoadedModel load_model_inputs(const std::string& checkpoint, const Dataset& ds,
                              const std::string& priors_dir, const std::string& roi) {
  require_file(checkpoint, "checkpoint");
  LoadedModel lm;
  lm.model = validating("cannot load checkpoint", [&] { return load_checkpoint(checkpoint).model; });
  const ModelConfig& cfg = lm.model->config();
  if (cfg.n_classes != static_cast<int>(ds.class_names.size())) {
    throw UsageError("checkpoint has " + std::to_string(cfg.n_classes) +
                     " classes but the dataset has " + std::to_string(ds.class_names.size()));
  }
  if (uses_priors(cfg.attention)) {
    if (priors_dir.empty()) {
      throw UsageError(std::string("checkpoint uses attention=") +
                       attention_mode_name(cfg.attention) + "; --priors is required");
    }
    lm.priors = load_priors_for(priors_dir, ds.class_names);
  }
  if (uses_roi(cfg.attention) && !roi.empty()) {
    require_dir(roi, "ROI mask directory");
    lm.roi_dir = roi;
  }
  return lm;
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  if (a.mode != "cls" && a.mode != "loc" && a.mode != "both") {
    throw UsageError("--mode must be cls, loc or both");
  }
  LocalizationOptions loc;
  if (!a.thresholds.empty()) loc.thresholds = parse_thresholds(a.thresholds);
  loc.include_negatives = a.include_negatives;
  const Dataset ds = load_dataset_dir(a.data, 0);
  std::vector<std::size_t> records;
  if (a.split == "all") {
    records.resize(ds.records.size());
    std::iota(records.begin(), records.end(), 0);
  } else {
    const Split split = validating("bad --split", [&] { return parse_split(a.split); });
    if (split == Split::unassigned) throw UsageError("--split must be train, val, test or all");
    records = split_indices(ds, split);
  }
  if (records.empty()) throw UsageError("the " + a.split + " split of " + a.data + " is empty");
  LoadedModel lm = load_model_inputs(a.checkpoint, ds, a.priors, a.roi);
  const SampleSource source = make_sample_source(
      lm.model->config(), lm.priors ? &*lm.priors : nullptr, lm.roi_dir, CropMode::center);

  RunManifest m = start_manifest("eval", argv);
  m.inputs = {{"checkpoint", a.checkpoint}, {"data", a.data}};
  m.config_json = json({{"mode", a.mode},
                        {"split", a.split},
                        {"iou_thresholds", loc.thresholds},
                        {"include_negatives", loc.include_negatives}})
                      .dump();
  EvalReport report;
  if (a.mode != "loc") {
    report = evaluate_classification(*lm.model, source, ds, records);
  } else {
    report.class_names = ds.class_names;
    report.n_images = static_cast<int>(records.size());
  }
  if (a.mode != "cls") add_localization(report, *lm.model, source, ds, records, loc);

  fs::create_directories(a.out);
  write_text_atomic(fs::path(a.out) / "report.json", report.to_json());
  write_text_atomic(fs::path(a.out) / "report.txt", report.to_table());
  m.outputs = {{"report_json", (fs::path(a.out) / "report.json").string()},
               {"report_txt", (fs::path(a.out) / "report.txt").string()}};
  finish_manifest(m, a.out);
  std::cout << report.to_table();
  return 0;
}

// ----------------------------------------------------------------- render

struct RenderArgs {
  std::string checkpoint, images, data, priors, roi, out;
};

std::vector<fs::path> parse_image_list(const std::string& spec) {
  std::vector<fs::path> out;
  if (!spec.empty() && spec[0] == '@') {
    std::ifstream f(spec.substr(1));
    if (!f) throw UsageError("cannot read image list " + spec.substr(1));
    std::string line;
    while (std::getline(f, line)) {
      line = trim(line);
      if (!line.empty()) out.emplace_back(line);
    }
  } else {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.emplace_back(item);
    }
  }
  if (out.empty()) throw UsageError("--images lists no files");
  return out;
}

int cmd_render(const RenderArgs& a, const std::vector<std::string>& argv) {
  const auto images = parse_image_list(a.images);
  Dataset ds;
  if (!a.data.empty()) {
    ds = load_dataset_dir(a.data, 0);
  } else {
    throw UsageError("--data is required (class names and ground-truth boxes)");
  }
  LoadedModel lm = load_model_inputs(a.checkpoint, ds, a.priors, a.roi);
  const SampleSource source = make_sample_source(
      lm.model->config(), lm.priors ? &*lm.priors : nullptr, lm.roi_dir, CropMode::center);

  RunManifest m = start_manifest("render", argv);
  m.inputs = {{"checkpoint", a.checkpoint}, {"data", a.data}, {"images", a.images}};
  std::map<std::string, const ImageRecord*> by_file;
  for (const auto& r : ds.records) by_file[r.path.filename().string()] = &r;

  int rendered = 0, missing = 0;
  for (const fs::path& p : images) {
    fs::path path = p;
    if (!fs::exists(path) && fs::exists(fs::path(a.data) / "images" / p)) {
      path = fs::path(a.data) / "images" / p;
    }
    if (!fs::is_regular_file(path)) {
      warn("image not found, skipping: " + p.string());
      ++missing;
      continue;
    }
    ImageRecord rec;
    if (auto it = by_file.find(path.filename().string()); it != by_file.end()) {
      rec = *it->second;
      rec.path = path;
    } else {
      rec.image_id = path.filename().string();
      rec.path = path;
      rec.labels.assign(ds.class_names.size(), 0);
    }
    for (const auto& written :
         render_overlays(*lm.model, source, rec, ds.class_names, ds.boxes, a.out)) {
      m.outputs[written.filename().string()] = written.string();
      std::cout << "wrote " << written.string() << "\n";
    }
    ++rendered;
  }
  if (rendered == 0) {
    std::cerr << "error: none of the " << missing << " listed images exist\n";
    return 1;
  }
  finish_manifest(m, a.out);
  return 0;
}

}  // namespace

// -------------------------------------------------------------------- run

int run(const std::vector<std::string>& args) {
  CLI::App app{"Anatomy-prior attention for chest radiograph classification and localization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::function<int()> action;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic planted-lesion dataset");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--n-images", synth.n_images, "Number of images")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--image-edge", synth.image_edge, "Canvas edge in pixels")->capture_default_str()
      ->check(CLI::Range(64, 4096));
  s->callback([&] { action = [&] { return cmd_synth(synth, args); }; });

  GenPriorsArgs gp;
  auto* g = app.add_subcommand("gen-priors", "Build per-class anatomical prior maps from boxes");
  g->add_option("--bbox", gp.bbox, "Bounding-box CSV")->required();
  g->add_option("--classes", gp.classes, "Class names, one per line")->required();
  g->add_option("--out", gp.out, "Output directory")->required();
  g->add_option("--localization-classes", gp.localization_classes,
                "Classes scored for localization (default: the NIH eight present in --classes)");
  g->add_option("--resolution", gp.resolution, "Canvas edge of the annotations")
      ->capture_default_str();
  g->add_option("--target-classes", gp.target_classes,
                "Re-key the maps to this class list (with --mapping)");
  g->add_option("--mapping", gp.mapping, "CSV target,source class-name mapping");
  g->callback([&] { action = [&] { return cmd_gen_priors(gp, args); }; });

  GenRoiArgs gr;
  auto* r = app.add_subcommand("gen-roi", "Generate chest ROI masks");
  r->add_option("--images", gr.images, "Directory of PNG images")->required();
  r->add_option("--out", gr.out, "Output mask directory")->required();
  r->add_option("--radius", gr.radius, "Dilation radius at the working resolution")
      ->capture_default_str();
  r->add_option("--threshold", gr.threshold, "Binarization threshold")->capture_default_str();
  r->add_option("--working-edge", gr.working_edge, "Short edge the post-processing runs at")
      ->capture_default_str()->check(CLI::PositiveNumber);
  r->add_option("--segmenter", gr.segmenter, "fallback | external:DIR")->capture_default_str();
  r->callback([&] { action = [&] { return cmd_gen_roi(gr, args); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "JSON config with model and train sections")->required();
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--priors", tr.priors, "Prior map directory");
  t->add_option("--roi", tr.roi, "Pre-computed ROI mask directory");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--seed", tr.seed, "Override train and model seeds");
  t->add_option("--epochs", tr.epochs, "Override the epoch count");
  t->add_option("--init-weights", tr.init_weights,
                "Checkpoint whose matching tensors initialise the model");
  t->callback([&] { action = [&] { return cmd_train(tr, args); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate classification and/or localization");
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--priors", ev.priors, "Prior map directory");
  e->add_option("--roi", ev.roi, "Pre-computed ROI mask directory");
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--mode", ev.mode, "cls | loc | both")->capture_default_str();
  e->add_option("--split", ev.split, "train | val | test | all")->capture_default_str();
  e->add_option("--iou-thresholds", ev.thresholds, "Comma-separated IoU thresholds (0.1,0.3)");
  e->add_flag("--include-negatives", ev.include_negatives,
              "Also score images without the disease (correct when p < 0.5)");
  e->callback([&] { action = [&] { return cmd_eval(ev, args); }; });

  RenderArgs rd;
  auto* rn = app.add_subcommand("render", "Render heatmap and box overlays");
  rn->add_option("--checkpoint", rd.checkpoint, "Model checkpoint")->required();
  rn->add_option("--images", rd.images, "Comma-separated image paths or @listfile")->required();
  rn->add_option("--data", rd.data, "Dataset directory (classes, boxes)")->required();
  rn->add_option("--priors", rd.priors, "Prior map directory");
  rn->add_option("--roi", rd.roi, "Pre-computed ROI mask directory");
  rn->add_option("--out", rd.out, "Output directory")->required();
  rn->callback([&] { action = [&] { return cmd_render(rd, args); }; });

  std::string manifest_path;
  auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a run manifest");
  rp->add_option("--manifest", manifest_path, "run_manifest.json")->required();
  rp->callback([&] {
    action = [&] {
      require_file(manifest_path, "manifest");
      RunManifest m = read_manifest(manifest_path);
      if (m.argv.size() < 2 || m.argv[1] == "replay") throw UsageError("manifest has no command");
      if (m.tool_version != kToolVersion) {
        warn("manifest written by version " + m.tool_version + ", this is " + kToolVersion);
      }
      return run(m.argv);
    };
  });

  std::vector<const char*> cargv;
  for (const auto& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  try {
    return action();
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}

}  // namespace cxr::cli
