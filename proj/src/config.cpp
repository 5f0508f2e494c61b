#include "xnet/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xnet {

using nlohmann::json;

Config Config::desk() {
  Config c;
  c.ranges.base = {6.0, 12.0, 6.0, 12.0};
  return c;
}

Config Config::full() {
  Config c;
  c.ranges.base = {24.0, 48.0, 24.0, 48.0};
  c.train.crop = 512;
  c.train.epochs = 80;
  c.data.image_size = 512;
  c.data.min_side = 20.0;
  c.data.max_side = 480.0;
  c.eval.test_max_side = 900;
  return c;
}

RenderOptions Config::render_options() const {
  RenderOptions o;
  o.num_classes = head.num_classes;
  o.class_agnostic = render.class_agnostic;
  o.min_overlap = render.min_overlap;
  if (render.assign == "all") {
    o.mode = AssignMode::all_containing;
  } else if (render.assign == "best-fit") {
    o.mode = AssignMode::best_fit;
  } else {
    throw std::invalid_argument("render.assign must be \"all\" or \"best-fit\", got \"" + render.assign + "\"");
  }
  return o;
}

json to_json(const Config& c) {
  json j;
  j["matrix"] = {{"n", c.matrix.n},
                 {"base_stride", c.matrix.base_stride},
                 {"prune_band", c.matrix.prune_band},
                 {"channels", c.matrix.channels},
                 {"top_down", c.matrix.top_down}};
  j["ranges"] = {{"base_w", {c.ranges.base.w_min, c.ranges.base.w_max}},
                 {"base_h", {c.ranges.base.h_min, c.ranges.base.h_max}},
                 {"lo_mult", c.ranges.lo_mult},
                 {"hi_mult", c.ranges.hi_mult}};
  j["head"] = {{"num_classes", c.head.num_classes}, {"hidden", c.head.hidden}, {"heat_prior", c.head.heat_prior}};
  j["render"] = {{"class_agnostic", c.render.class_agnostic},
                 {"assign", c.render.assign},
                 {"min_overlap", c.render.min_overlap}};
  j["loss"] = {{"heat", c.loss_weights.heat},
               {"offset", c.loss_weights.offset},
               {"center", c.loss_weights.center},
               {"focal_alpha", c.focal.alpha},
               {"focal_beta", c.focal.beta},
               {"focal_eps", c.focal.eps}};
  j["decode"] = {{"top_k", c.decode.top_k},
                 {"peak_threshold", c.decode.peak_threshold},
                 {"center_tolerance", c.decode.center_tolerance},
                 {"nms_sigma", c.decode.nms_sigma},
                 {"score_floor", c.decode.score_floor},
                 {"max_detections", c.decode.max_detections}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"lr_drop_fraction", c.train.lr_drop_fraction},
                {"epochs", c.train.epochs},
                {"crop", c.train.crop},
                {"jitter", {c.train.jitter_min, c.train.jitter_max}},
                {"flip", c.train.flip},
                {"seed", c.train.seed},
                {"log_every", c.train.log_every},
                {"eval_every", c.train.eval_every},
                {"stop_at_ap", c.train.stop_at_ap},
                {"threads", c.train.threads}};
  j["data"] = {{"source", c.data.source},
               {"annotations", c.data.annotations},
               {"images", c.data.images},
               {"val_annotations", c.data.val_annotations},
               {"val_images", c.data.val_images},
               {"train_count", c.data.train_count},
               {"val_count", c.data.val_count},
               {"seed", c.data.seed},
               {"image_size", c.data.image_size},
               {"min_side", c.data.min_side},
               {"max_side", c.data.max_side},
               {"max_aspect", c.data.max_aspect},
               {"min_boxes", c.data.min_boxes},
               {"max_boxes", c.data.max_boxes}};
  j["eval"] = {{"iou_thresholds", c.eval.iou_thresholds}, {"test_max_side", c.eval.test_max_side}};
  return j;
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // integers may not silently take fractional values
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

// Overlays `patch` onto `base`, refusing keys or value kinds `base` lacks.
void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw std::invalid_argument("config: " + (path.empty() ? "root" : path) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw std::invalid_argument("config: unknown key \"" + here + "\"");
    json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, here);
    } else {
      if (!same_kind(value, slot)) {
        throw std::invalid_argument("config: \"" + here + "\" expects " + std::string(slot.type_name()) + ", got " +
                                    value.dump());
      }
      slot = value;
    }
  }
}

Config parse_full(const json& j) {
  Config c;
  const json& m = j.at("matrix");
  c.matrix.n = m.at("n");
  c.matrix.base_stride = m.at("base_stride");
  c.matrix.prune_band = m.at("prune_band");
  c.matrix.channels = m.at("channels");
  c.matrix.top_down = m.at("top_down");

  const json& r = j.at("ranges");
  if (r.at("base_w").size() != 2 || r.at("base_h").size() != 2) {
    throw std::invalid_argument("config: ranges.base_w and ranges.base_h take [min, max]");
  }
  c.ranges.base = {r["base_w"][0], r["base_w"][1], r["base_h"][0], r["base_h"][1]};
  c.ranges.lo_mult = r.at("lo_mult");
  c.ranges.hi_mult = r.at("hi_mult");

  const json& h = j.at("head");
  c.head.num_classes = h.at("num_classes");
  c.head.hidden = h.at("hidden");
  c.head.heat_prior = h.at("heat_prior");

  const json& rd = j.at("render");
  c.render.class_agnostic = rd.at("class_agnostic");
  c.render.assign = rd.at("assign");
  c.render.min_overlap = rd.at("min_overlap");

  const json& l = j.at("loss");
  c.loss_weights.heat = l.at("heat");
  c.loss_weights.offset = l.at("offset");
  c.loss_weights.center = l.at("center");
  c.focal.alpha = l.at("focal_alpha");
  c.focal.beta = l.at("focal_beta");
  c.focal.eps = l.at("focal_eps");

  const json& d = j.at("decode");
  c.decode.top_k = d.at("top_k");
  c.decode.peak_threshold = d.at("peak_threshold");
  c.decode.center_tolerance = d.at("center_tolerance");
  c.decode.nms_sigma = d.at("nms_sigma");
  c.decode.score_floor = d.at("score_floor");
  c.decode.max_detections = d.at("max_detections");

  const json& t = j.at("train");
  c.train.batch_size = t.at("batch_size");
  c.train.lr = t.at("lr");
  c.train.lr_drop_fraction = t.at("lr_drop_fraction");
  c.train.epochs = t.at("epochs");
  c.train.crop = t.at("crop");
  if (t.at("jitter").size() != 2) throw std::invalid_argument("config: train.jitter takes [min, max]");
  c.train.jitter_min = t["jitter"][0];
  c.train.jitter_max = t["jitter"][1];
  c.train.flip = t.at("flip");
  c.train.seed = t.at("seed");
  c.train.log_every = t.at("log_every");
  c.train.eval_every = t.at("eval_every");
  c.train.stop_at_ap = t.at("stop_at_ap");
  c.train.threads = t.at("threads");

  const json& ds = j.at("data");
  c.data.source = ds.at("source");
  c.data.annotations = ds.at("annotations");
  c.data.images = ds.at("images");
  c.data.val_annotations = ds.at("val_annotations");
  c.data.val_images = ds.at("val_images");
  c.data.train_count = ds.at("train_count");
  c.data.val_count = ds.at("val_count");
  c.data.seed = ds.at("seed");
  c.data.image_size = ds.at("image_size");
  c.data.min_side = ds.at("min_side");
  c.data.max_side = ds.at("max_side");
  c.data.max_aspect = ds.at("max_aspect");
  c.data.min_boxes = ds.at("min_boxes");
  c.data.max_boxes = ds.at("max_boxes");

  const json& e = j.at("eval");
  c.eval.iou_thresholds = e.at("iou_thresholds").get<std::vector<double>>();
  c.eval.test_max_side = e.at("test_max_side");
  return c;
}

void check(const Config& c) {
  validate(c.matrix);
  validate(c.ranges);
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (c.head.num_classes < 1) fail("head.num_classes must be >= 1");
  if (c.head.hidden < 1) fail("head.hidden must be >= 1");
  if (!(c.head.heat_prior > 0.0 && c.head.heat_prior < 1.0)) fail("head.heat_prior must lie in (0,1)");
  c.render_options();
  if (c.train.batch_size < 1) fail("train.batch_size must be >= 1");
  if (!(c.train.lr > 0.0)) fail("train.lr must be > 0");
  if (c.train.epochs < 1) fail("train.epochs must be >= 1");
  if (!(c.train.jitter_min > 0.0 && c.train.jitter_min <= c.train.jitter_max)) fail("train.jitter must be 0 < min <= max");
  if (c.train.crop < 1 || c.train.crop % required_divisor(c.matrix) != 0) {
    fail("train.crop must be a positive multiple of " + std::to_string(required_divisor(c.matrix)));
  }
  if (c.data.source != "synthetic" && c.data.source != "coco-json") fail("data.source must be synthetic or coco-json");
  if (c.data.min_boxes < 0 || c.data.max_boxes < c.data.min_boxes) fail("data box counts must be 0 <= min <= max");
  if (!(c.data.min_side > 0.0 && c.data.min_side <= c.data.max_side)) fail("data sides must be 0 < min <= max");
  if (!(c.data.max_aspect >= 1.0)) fail("data.max_aspect must be >= 1");
  if (c.eval.iou_thresholds.empty()) fail("eval.iou_thresholds must not be empty");
  if (c.eval.test_max_side < required_divisor(c.matrix)) fail("eval.test_max_side too small for the matrix");
}

}  // namespace

Config config_from_json(const json& j) {
  json merged = to_json(Config::desk());
  overlay(merged, j, "");
  Config c = parse_full(merged);
  check(c);
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(Config& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw std::invalid_argument("override key must be section.key, got " + dotted_key);
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  json patch;
  patch[dotted_key.substr(0, dot)][dotted_key.substr(dot + 1)] = v;
  json merged = to_json(cfg);
  overlay(merged, patch, "");
  Config c = parse_full(merged);
  check(c);
  cfg = c;
}

}  // namespace xnet
