#include "xnet/cli.hpp"

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xnet/config.hpp"
#include "xnet/dataset.hpp"
#include "xnet/evaluate.hpp"
#include "xnet/grad_suite.hpp"
#include "xnet/train.hpp"

namespace xnet {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::vector<std::pair<std::string, std::string>> items;
};

// Pulls "--a.b=v" / "--a.b v" out of argv; everything else goes to CLI11.
std::vector<std::string> split_overrides(int argc, const char* const* argv, Overrides& ov) {
  std::vector<std::string> rest;
  for (int k = 0; k < argc; ++k) {
    const std::string a = argv[k];
    if (k > 0 && a.rfind("--", 0) == 0) {
      const std::string body = a.substr(2);
      const auto eq = body.find('=');
      const std::string key = body.substr(0, eq);
      if (key.find('.') != std::string::npos) {
        if (eq != std::string::npos) {
          ov.items.emplace_back(key, body.substr(eq + 1));
        } else if (k + 1 < argc) {
          ov.items.emplace_back(key, argv[++k]);
        } else {
          throw UsageError("override --" + key + " needs a value");
        }
        continue;
      }
    }
    rest.push_back(a);
  }
  return rest;
}

struct Common {
  std::string config_path;
  std::string preset = "desk";
  int threads = 0;
};

Config resolve_config(const Common& c, const Overrides& ov) {
  Config cfg;
  if (c.preset == "desk") {
    cfg = Config::desk();
  } else if (c.preset == "full") {
    cfg = Config::full();
  } else {
    throw UsageError("--preset must be desk or full");
  }
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw UsageError("config file not found: " + c.config_path);
    cfg = load_config(c.config_path);
  }
  for (const auto& [k, v] : ov.items) apply_override(cfg, k, v);
  if (c.threads > 0) cfg.train.threads = c.threads;
  if (cfg.train.threads > 0) omp_set_num_threads(cfg.train.threads);
  return cfg;
}

SyntheticSpec synthetic_spec(const Config& cfg) {
  SyntheticSpec s;
  s.image_size = cfg.data.image_size;
  s.num_classes = cfg.head.num_classes;
  s.min_side = cfg.data.min_side;
  s.max_side = cfg.data.max_side;
  s.max_aspect = cfg.data.max_aspect;
  s.min_boxes = cfg.data.min_boxes;
  s.max_boxes = cfg.data.max_boxes;
  return s;
}

Dataset load_split(const Config& cfg, bool val, std::ostream& err) {
  Dataset d;
  if (cfg.data.source == "synthetic") {
    const SyntheticSpec spec = synthetic_spec(cfg);
    d = val ? gen_synthetic(cfg.data.val_count, cfg.data.seed, spec, cfg.data.train_count)
            : gen_synthetic(cfg.data.train_count, cfg.data.seed, spec, 0);
  } else {
    const std::string& ann = val ? cfg.data.val_annotations : cfg.data.annotations;
    const std::string& img = val ? cfg.data.val_images : cfg.data.images;
    if (ann.empty()) {
      if (val) return d;
      throw UsageError("data.annotations is required for data.source=coco-json");
    }
    d = load_coco_json(ann, img);
  }
  for (const std::string& w : d.warnings) err << "warning: " << w << "\n";
  return d;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file (unknown keys are errors)");
  sub->add_option("--preset", c.preset, "Base defaults before --config: desk (128 px) or full (512 px)")
      ->check(CLI::IsMember({"desk", "full"}));
  sub->add_option("--threads", c.threads, "OpenMP threads (1 = deterministic single-threaded run)");
  sub->footer(
      "Any config entry can be overridden with --section.key=value, e.g. --train.epochs=5 "
      "--ranges.base_w=[6,12]. Sections: matrix ranges head render loss decode train data eval.");
}

std::ostream& open_or(const std::string& path, std::ofstream& file, std::ostream& fallback) {
  if (path.empty() || path == "-") return fallback;
  file.open(path);
  if (!file) throw DataError("cannot write " + path);
  return file;
}

int cmd_train(const Config& cfg, const std::string& out_dir, const std::string& resume, long long max_steps,
              const std::string& metrics_path, std::ostream& out, std::ostream& err) {
  const Dataset train_set = load_split(cfg, false, err);
  const Dataset val_set = load_split(cfg, true, err);
  err << "train: " << train_set.samples.size() << " images, held-out: " << val_set.samples.size() << "\n";
  std::ofstream metrics_file;
  std::ostream& metrics = open_or(metrics_path, metrics_file, out);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.metrics = &metrics;
  opts.log = &err;
  opts.resume = resume;
  opts.max_steps = max_steps;
  const TrainResult r = train(cfg, train_set, val_set.samples.empty() ? nullptr : &val_set, opts);
  if (r.status != 0) return kExitNumeric;
  if (!out_dir.empty()) {
    const std::string path = (fs::path(out_dir) / "final.ckpt").string();
    save_checkpoint(path, r.checkpoint);
    err << "wrote " << path << "\n";
  }
  return kExitOk;
}

Config config_for_checkpoint(const Checkpoint& ckpt, const Common& c, const Overrides& ov) {
  Config cfg = config_from_json(json::parse(ckpt.config_json));
  if (!c.config_path.empty()) {
    // data/eval/decode may come from a file; the architecture stays the checkpoint's
    const Config file = load_config(c.config_path);
    cfg.data = file.data;
    cfg.eval = file.eval;
    cfg.decode = file.decode;
  }
  for (const auto& [k, v] : ov.items) apply_override(cfg, k, v);
  if (c.threads > 0) omp_set_num_threads(c.threads);
  return cfg;
}

void truncate(Dataset& d, int count) {
  if (count >= 0 && d.samples.size() > static_cast<std::size_t>(count)) d.samples.resize(static_cast<std::size_t>(count));
}

int cmd_eval(const Common& c, const Overrides& ov, const std::string& ckpt_path, const std::string& dets_path,
             const std::string& split, int count, std::ostream& out, std::ostream& err) {
  if (!fs::exists(ckpt_path)) throw UsageError("checkpoint not found: " + ckpt_path);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  LoadedModel loaded = load_model(ckpt);
  const Config cfg = config_for_checkpoint(ckpt, c, ov);
  Dataset data = load_split(cfg, split == "val", err);
  truncate(data, count);
  std::vector<std::vector<Detection>> dets;
  const ApReport report = evaluate(loaded.model, data, cfg, &dets);
  if (!dets_path.empty()) {
    std::ofstream f;
    std::ostream& d = open_or(dets_path, f, out);
    for (std::size_t k = 0; k < dets.size(); ++k)
      for (const Detection& det : dets[k]) d << detection_json(data.samples[k].image_id, det).dump() << "\n";
  }
  out << report_json(report).dump() << "\n";
  for (const ThresholdAp& t : report.thresholds) err << "AP@" << t.iou << " = " << std::fixed << std::setprecision(4) << t.ap << "\n";
  return kExitOk;
}

int cmd_decode(const Common& c, const Overrides& ov, bool from_targets, const std::string& ckpt_path,
               const std::string& split, int count, std::ostream& out, std::ostream& err) {
  Config cfg;
  std::vector<std::vector<Detection>> dets;
  Dataset data;
  if (from_targets) {
    cfg = resolve_config(c, ov);
    data = load_split(cfg, split == "val", err);
    truncate(data, count);
    const RangeGrid grid = compute_ranges(cfg.ranges, cfg.matrix);
    const RenderOptions options = cfg.render_options();
    for (const Sample& s : data.samples) {
      check_input_extents(cfg.matrix, s.height(), s.width());
      const std::vector<LayerSpec> specs = layer_specs(cfg.matrix, s.height(), s.width());
      const TargetMaps t = render_targets(s.boxes, specs, grid, options);
      std::map<LayerCoord, LayerMaps> maps;
      for (const auto& [coord, lt] : t.layers) maps.emplace(coord, lt.maps);
      dets.push_back(decode(maps, specs, grid, ImageSize{int(s.height()), int(s.width())}, cfg.decode));
    }
  } else {
    if (ckpt_path.empty()) throw UsageError("decode needs --checkpoint or --from-targets");
    if (!fs::exists(ckpt_path)) throw UsageError("checkpoint not found: " + ckpt_path);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    LoadedModel loaded = load_model(ckpt);
    cfg = config_for_checkpoint(ckpt, c, ov);
    data = load_split(cfg, split == "val", err);
    truncate(data, count);
    dets = predict(loaded.model, data.samples, cfg);
  }

  std::size_t boxes = 0, recovered = 0, spurious = 0, emitted = 0;
  for (std::size_t k = 0; k < dets.size(); ++k) {
    const Sample& s = data.samples[k];
    for (const Detection& d : dets[k]) {
      out << detection_json(s.image_id, d).dump() << "\n";
      ++emitted;
      bool matches = false;
      for (const GroundTruthBox& b : s.boxes) matches = matches || (b.class_id == d.class_id && iou(d.box, b.box()) >= 0.5);
      if (!matches) ++spurious;
    }
    for (const GroundTruthBox& b : s.boxes) {
      ++boxes;
      bool found = false;
      for (const Detection& d : dets[k]) found = found || (d.class_id == b.class_id && iou(d.box, b.box()) >= 0.99);
      if (found) ++recovered;
    }
  }
  err << "decode: " << data.samples.size() << " images, " << emitted << " detections, " << recovered << "/" << boxes
      << " boxes recovered at IoU >= 0.99, " << spurious << " detections overlap no box of their class\n";
  return kExitOk;
}

int cmd_layer_stats(const Config& cfg, const std::string& split, int count, std::ostream& out, std::ostream& err) {
  Dataset data = load_split(cfg, split == "val", err);
  truncate(data, count);
  const RangeGrid grid = compute_ranges(cfg.ranges, cfg.matrix);
  const AssignMode mode = cfg.render_options().mode;
  std::map<LayerCoord, std::size_t> per_layer;
  for (const LayerCoord& c : live_coords(cfg.matrix)) per_layer[c] = 0;
  std::map<std::size_t, std::size_t> histogram;
  std::size_t boxes = 0, out_of_range = 0;
  for (const Sample& s : data.samples) {
    for (const GroundTruthBox& b : s.boxes) {
      ++boxes;
      const Assignment a = assign_with_clamp(b, grid, mode);
      if (a.clamped) ++out_of_range;
      ++histogram[a.clamped ? 0 : a.layers.size()];
      for (const LayerCoord& c : a.layers) ++per_layer[c];
    }
  }

  json layers = json::array();
  err << "layer    raw W range       raw H range        boxes\n";
  for (const auto& [coord, n] : per_layer) {
    const LayerRange& r = grid.at(coord);
    layers.push_back({{"layer", {coord.i, coord.j}},
                      {"boxes", n},
                      {"raw", {r.raw.w_min, r.raw.w_max, r.raw.h_min, r.raw.h_max}},
                      {"relaxed", {r.relaxed.w_min, r.relaxed.w_max, r.relaxed.h_min, r.relaxed.h_max}}});
    std::ostringstream row;
    row << std::left << std::setw(9) << coord.str() << std::right << std::fixed << std::setprecision(0) << "["
        << std::setw(4) << r.raw.w_min << "," << std::setw(4) << r.raw.w_max << "]      [" << std::setw(4)
        << r.raw.h_min << "," << std::setw(4) << r.raw.h_max << "]      " << std::setw(7) << n << "\n";
    err << row.str();
  }
  json hist = json::object();
  for (const auto& [k, n] : histogram) hist[std::to_string(k)] = n;
  err << per_layer.size() << " live layers, " << boxes << " boxes, " << out_of_range
      << " outside every relaxed range (clamped)\n";
  err << "layers per box:";
  for (const auto& [k, n] : histogram) err << "  " << k << ": " << n;
  err << "   (0 = clamped)\n";
  out << json{{"images", data.samples.size()},
              {"boxes", boxes},
              {"live_layers", per_layer.size()},
              {"layers", layers},
              {"assignment_histogram", hist},
              {"out_of_range", out_of_range}}
             .dump()
      << "\n";
  return kExitOk;
}

int cmd_gen_data(const Config& cfg, const std::string& dir, const std::string& split, int count, std::ostream& out,
                 std::ostream& err) {
  if (cfg.data.source != "synthetic") throw UsageError("gen-data needs data.source=synthetic");
  Dataset data = load_split(cfg, split == "val", err);
  truncate(data, count);
  write_coco(data, dir);
  std::size_t boxes = 0;
  for (const Sample& s : data.samples) boxes += s.boxes.size();
  out << json{{"images", data.samples.size()}, {"boxes", boxes}, {"dir", dir}}.dump() << "\n";
  err << "wrote " << data.samples.size() << " images to " << dir << "\n";
  return kExitOk;
}

int cmd_grad_check(int instances, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const std::vector<OpGradReport> reports = run_grad_suite(instances, seed);
  bool ok = true;
  for (const OpGradReport& r : reports) {
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    out << json{{"op", r.op}, {"instances", r.instances}, {"max_rel_error", r.max_rel_error}, {"pass", pass}}.dump()
        << "\n";
    err << std::left << std::setw(14) << r.op << std::scientific << std::setprecision(2) << r.max_rel_error
        << (pass ? "  ok" : "  FAIL") << "\n";
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"KP-xNet detector with matrix layers: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  Common common;
  std::string out_dir = "run", resume, metrics_path, ckpt_path, dets_path, split = "val", gen_dir;
  long long max_steps = -1;
  int count = -1, instances = 20;
  std::uint64_t gc_seed = 0;
  bool from_targets = false;

  CLI::App* train_cmd = app.add_subcommand("train", "Train on the configured data; JSON-line metrics on stdout");
  add_common(train_cmd, common);
  train_cmd->add_option("--out", out_dir, "Directory for last.ckpt, final.ckpt and last_good.ckpt");
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint");
  train_cmd->add_option("--max-steps", max_steps, "Stop after this many optimizer steps");
  train_cmd->add_option("--metrics", metrics_path, "Write metric lines here instead of stdout");

  CLI::App* eval_cmd = app.add_subcommand("eval", "AP of a checkpoint on a data split; report JSON on stdout");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--detections", dets_path, "Also write JSON-line detections here ('-' = stdout)");
  eval_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  eval_cmd->add_option("--count", count, "Use only the first N images");

  CLI::App* decode_cmd = app.add_subcommand("decode", "JSON-line detections from a checkpoint or from rendered targets");
  add_common(decode_cmd, common);
  decode_cmd->add_flag("--from-targets", from_targets, "Decode rendered ground-truth maps instead of network output");
  decode_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint to run");
  decode_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  decode_cmd->add_option("--count", count, "Use only the first N images");

  CLI::App* stats_cmd = app.add_subcommand("layer-stats", "Per-layer box assignment counts (JSON stdout, table stderr)");
  add_common(stats_cmd, common);
  stats_cmd->add_option("--split", split, "train (default) or val")->check(CLI::IsMember({"train", "val"}));
  stats_cmd->add_option("--count", count, "Use only the first N images");

  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic set as PNGs plus COCO-style annotations.json");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--out", gen_dir, "Output directory")->required();
  gen_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  gen_cmd->add_option("--count", count, "Write only the first N images");

  CLI::App* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of every op and loss; exit 0 iff all < 1e-4");
  gc_cmd->add_option("--instances", instances, "Random instances per op")->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed, "Instance seed")->capture_default_str();
  gc_cmd->add_option("--threads", common.threads, "OpenMP threads");

  try {
    Overrides ov;
    const std::vector<std::string> rest = split_overrides(argc, argv, ov);
    std::vector<const char*> ptrs;
    for (const std::string& s : rest) ptrs.push_back(s.c_str());
    try {
      app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n";
      const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
      err << sub->help();
      return kExitUsage;
    }

    if (*train_cmd) {
      const Config cfg = resolve_config(common, ov);
      return cmd_train(cfg, out_dir, resume, max_steps, metrics_path, out, err);
    }
    if (*eval_cmd) return cmd_eval(common, ov, ckpt_path, dets_path, split, count, out, err);
    if (*decode_cmd) return cmd_decode(common, ov, from_targets, ckpt_path, split, count, out, err);
    if (*stats_cmd) {
      if (stats_cmd->count("--split") == 0) split = "train";
      return cmd_layer_stats(resolve_config(common, ov), split, count, out, err);
    }
    if (*gen_cmd) return cmd_gen_data(resolve_config(common, ov), gen_dir, split, count, out, err);
    if (*gc_cmd) {
      if (!ov.items.empty()) throw UsageError("grad-check takes no config overrides");
      if (common.threads > 0) omp_set_num_threads(common.threads);
      return cmd_grad_check(instances, gc_seed, out, err);
    }
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace xnet
