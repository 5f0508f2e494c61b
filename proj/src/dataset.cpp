#include "xnet/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace xnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct IBox {
  int x1, y1, x2, y2;
};

bool clear_of(const IBox& a, const IBox& b, double halo) {
  const double gap_x = std::max(b.x1 - a.x2, a.x1 - b.x2);
  const double gap_y = std::max(b.y1 - a.y2, a.y1 - b.y2);
  const double need_x = halo * ((a.x2 - a.x1) + (b.x2 - b.x1));
  const double need_y = halo * ((a.y2 - a.y1) + (b.y2 - b.y1));
  return gap_x >= need_x || gap_y >= need_y;
}

void paint(Tensor<float>& img, int x1, int y1, int x2, int y2, const float rgb[3]) {
  const int h = static_cast<int>(img.dim(1));
  const int w = static_cast<int>(img.dim(2));
  x1 = std::max(x1, 0);
  y1 = std::max(y1, 0);
  x2 = std::min(x2, w);
  y2 = std::min(y2, h);
  for (int c = 0; c < 3; ++c)
    for (int y = y1; y < y2; ++y)
      for (int x = x1; x < x2; ++x) img.at(c, y, x) = rgb[c];
}

void draw_shape(Tensor<float>& img, const IBox& b, int cls, const float rgb[3]) {
  const int w = b.x2 - b.x1;
  const int h = b.y2 - b.y1;
  switch (cls % 3) {
    case 0:
      paint(img, b.x1, b.y1, b.x2, b.y2, rgb);
      break;
    case 1: {
      const int t = std::max(1, static_cast<int>(std::lround(0.15 * std::min(w, h))));
      paint(img, b.x1, b.y1, b.x2, b.y1 + t, rgb);
      paint(img, b.x1, b.y2 - t, b.x2, b.y2, rgb);
      paint(img, b.x1, b.y1, b.x1 + t, b.y2, rgb);
      paint(img, b.x2 - t, b.y1, b.x2, b.y2, rgb);
      break;
    }
    default: {
      const int tw = std::max(1, static_cast<int>(std::lround(0.3 * w)));
      const int th = std::max(1, static_cast<int>(std::lround(0.3 * h)));
      const int cx = b.x1 + (w - tw) / 2;
      const int cy = b.y1 + (h - th) / 2;
      paint(img, b.x1, cy, b.x2, cy + th, rgb);
      paint(img, cx, b.y1, cx + tw, b.y2, rgb);
      break;
    }
  }
}

Sample make_synthetic(std::uint64_t seed, std::int64_t index, const SyntheticSpec& spec) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int size = spec.image_size;

  Sample s;
  s.image = Tensor<float>({3, static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  const double base = 0.05 + 0.2 * unit(rng);
  for (int c = 0; c < 3; ++c) {
    const double tint = base + 0.05 * unit(rng);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) s.image.at(c, y, x) = static_cast<float>(tint + 0.08 * (unit(rng) - 0.5));
  }

  const int want = spec.min_boxes + static_cast<int>(unit(rng) * (spec.max_boxes - spec.min_boxes + 1));
  const double log_lo = std::log(spec.min_side);
  const double log_hi = std::log(spec.max_side);
  const double log_ar = std::log(spec.max_aspect);
  std::vector<IBox> placed;
  for (int k = 0; k < std::min(want, spec.max_boxes); ++k) {
    for (int attempt = 0; attempt < 30; ++attempt) {
      // both sides inside [min_side, max_side] and the integer sides within
      // max_aspect; resample rather than clamp
      int w = 0, h = 0;
      for (int draw = 0; draw < 100; ++draw) {
        const double side = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
        const double ar = std::exp(log_ar * (2.0 * unit(rng) - 1.0));
        w = static_cast<int>(std::lround(side * std::sqrt(ar)));
        h = static_cast<int>(std::lround(side / std::sqrt(ar)));
        if (w >= spec.min_side && h >= spec.min_side && w <= spec.max_side && h <= spec.max_side &&
            std::max(w, h) <= spec.max_aspect * std::min(w, h))
          break;
      }
      w = std::clamp(w, static_cast<int>(std::ceil(spec.min_side)), size - 2);
      h = std::clamp(h, static_cast<int>(std::ceil(spec.min_side)), size - 2);
      const int x1 = 1 + static_cast<int>(unit(rng) * (size - 1 - w));
      const int y1 = 1 + static_cast<int>(unit(rng) * (size - 1 - h));
      const IBox b{x1, y1, x1 + w, y1 + h};
      if (!std::all_of(placed.begin(), placed.end(), [&](const IBox& o) { return clear_of(b, o, spec.halo); })) {
        continue;
      }
      const int cls = static_cast<int>(unit(rng) * spec.num_classes);
      float rgb[3];
      for (float& v : rgb) v = static_cast<float>(0.45 + 0.55 * unit(rng));
      draw_shape(s.image, b, cls, rgb);
      placed.push_back(b);
      s.boxes.push_back({cls, double(b.x1), double(b.y1), double(b.x2), double(b.y2)});
      break;
    }
  }
  for (float& v : s.image.data()) v = std::clamp(v, 0.0f, 1.0f);
  return s;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

Dataset gen_synthetic(int count, std::uint64_t seed, const SyntheticSpec& spec, std::int64_t first_id) {
  Dataset d;
  d.num_classes = spec.num_classes;
  d.samples.resize(static_cast<std::size_t>(std::max(count, 0)));
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < count; ++k) {
    Sample s = make_synthetic(seed, first_id + k, spec);
    s.image_id = first_id + k;
    d.samples[static_cast<std::size_t>(k)] = std::move(s);
  }
  return d;
}

Tensor<float> read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path + ": " + msg);
  }
  const std::size_t h = img.height;
  const std::size_t w = img.width;
  Tensor<float> out({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = buf[(y * w + x) * 3 + c] / 255.0f;
  return out;
}

void write_png(const std::string& path, const Tensor<float>& image) {
  require_shape({image.dim(0)}, {3}, "write_png channels");
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::vector<png_byte> buf(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buf[(y * w + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path + ": " + img.message);
  }
}

Dataset load_coco_json(const std::string& path, const std::string& image_dir, bool load_pixels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open annotation file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": malformed JSON at line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("images") || !j["images"].is_array()) {
    throw DataError(path + ": expected an object with an \"images\" array");
  }
  const json annotations = j.value("annotations", json::array());
  if (!annotations.is_array()) throw DataError(path + ": \"annotations\" must be an array");

  Dataset d;
  std::map<std::int64_t, int> class_of;
  if (j.contains("categories") && j["categories"].is_array()) {
    std::vector<std::int64_t> ids;
    for (const json& c : j["categories"]) {
      if (c.is_object() && c.contains("id") && c["id"].is_number_integer()) ids.push_back(c["id"].get<std::int64_t>());
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (std::size_t k = 0; k < ids.size(); ++k) class_of[ids[k]] = static_cast<int>(k);
    if (!ids.empty()) d.num_classes = static_cast<int>(ids.size());
  }

  struct ImageInfo {
    std::string file;
    std::int64_t width = 0;
    std::int64_t height = 0;
  };
  std::map<std::int64_t, ImageInfo> images;
  for (std::size_t k = 0; k < j["images"].size(); ++k) {
    const json& im = j["images"][k];
    if (!im.is_object() || !im.contains("id") || !im["id"].is_number_integer() || !im.contains("file_name") ||
        !im["file_name"].is_string()) {
      d.warnings.push_back("images[" + std::to_string(k) + "]: missing id or file_name, skipped");
      continue;
    }
    images[im["id"].get<std::int64_t>()] = {im["file_name"].get<std::string>(), im.value("width", std::int64_t{0}),
                                            im.value("height", std::int64_t{0})};
  }

  std::map<std::int64_t, std::vector<GroundTruthBox>> boxes;
  int max_class = -1;
  for (std::size_t k = 0; k < annotations.size(); ++k) {
    const json& a = annotations[k];
    const std::string where = "annotations[" + std::to_string(k) + "]";
    if (!a.is_object() || !a.contains("image_id") || !a["image_id"].is_number_integer() || !a.contains("bbox") ||
        !a["bbox"].is_array() || a["bbox"].size() != 4 || !a.contains("category_id") ||
        !a["category_id"].is_number_integer()) {
      d.warnings.push_back(where + ": missing image_id, category_id or 4-element bbox, skipped");
      continue;
    }
    bool numeric = true;
    for (const json& v : a["bbox"]) numeric = numeric && v.is_number();
    if (!numeric) {
      d.warnings.push_back(where + ": non-numeric bbox, skipped");
      continue;
    }
    const std::int64_t image_id = a["image_id"].get<std::int64_t>();
    if (!images.count(image_id)) {
      d.warnings.push_back(where + ": unknown image_id " + std::to_string(image_id) + ", skipped");
      continue;
    }
    const std::int64_t cat = a["category_id"].get<std::int64_t>();
    int cls = 0;
    if (!class_of.empty()) {
      const auto it = class_of.find(cat);
      if (it == class_of.end()) {
        d.warnings.push_back(where + ": unknown category_id " + std::to_string(cat) + ", skipped");
        continue;
      }
      cls = it->second;
    } else {
      if (cat < 0) {
        d.warnings.push_back(where + ": negative category_id, skipped");
        continue;
      }
      cls = static_cast<int>(cat);
      max_class = std::max(max_class, cls);
    }
    const double x = a["bbox"][0], y = a["bbox"][1], w = a["bbox"][2], h = a["bbox"][3];
    if (!(w > 0.0 && h > 0.0)) {
      d.warnings.push_back(where + ": degenerate bbox, skipped");
      continue;
    }
    boxes[image_id].push_back({cls, x, y, x + w, y + h});
  }
  if (class_of.empty() && max_class >= 0) d.num_classes = max_class + 1;

  const fs::path dir = image_dir.empty() ? fs::path(path).parent_path() : fs::path(image_dir);
  for (auto& [id, list] : boxes) {
    const ImageInfo& info = images.at(id);
    Sample s;
    s.image_id = id;
    if (load_pixels) {
      const fs::path file = dir / info.file;
      if (!fs::exists(file)) {
        d.warnings.push_back("image " + std::to_string(id) + ": missing file " + file.string() + ", skipped");
        continue;
      }
      try {
        s.image = read_png(file.string());
      } catch (const DataError& e) {
        d.warnings.push_back("image " + std::to_string(id) + ": " + e.what() + ", skipped");
        continue;
      }
    } else {
      if (info.width <= 0 || info.height <= 0) {
        d.warnings.push_back("image " + std::to_string(id) + ": no declared size, skipped");
        continue;
      }
      s.image = Tensor<float>({3, static_cast<std::size_t>(info.height), static_cast<std::size_t>(info.width)});
    }
    s.boxes = std::move(list);
    d.samples.push_back(std::move(s));
  }
  return d;
}

void write_coco(const Dataset& data, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "images");
  json images = json::array();
  json annotations = json::array();
  json categories = json::array();
  static const char* kNames[] = {"filled_rectangle", "outlined_rectangle", "cross"};
  for (int c = 0; c < data.num_classes; ++c) {
    categories.push_back({{"id", c}, {"name", c < 3 ? kNames[c] : "class_" + std::to_string(c)}});
  }
  std::int64_t ann_id = 1;
  for (const Sample& s : data.samples) {
    const std::string name = "images/" + std::to_string(s.image_id) + ".png";
    write_png((root / name).string(), s.image);
    images.push_back({{"id", s.image_id}, {"file_name", name}, {"width", s.width()}, {"height", s.height()}});
    for (const GroundTruthBox& b : s.boxes) {
      annotations.push_back({{"id", ann_id++},
                             {"image_id", s.image_id},
                             {"category_id", b.class_id},
                             {"bbox", {b.x1, b.y1, b.width(), b.height()}}});
    }
  }
  std::ofstream out(root / "annotations.json");
  if (!out) throw DataError("cannot write " + (root / "annotations.json").string());
  out << json{{"images", images}, {"annotations", annotations}, {"categories", categories}}.dump(1) << "\n";
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  Tensor<float> out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (std::size_t k = 0; k < c; ++k) {
        const double top = image.at(k, y0, x0) * (1 - tx) + image.at(k, y0, x1) * tx;
        const double bot = image.at(k, y1, x0) * (1 - tx) + image.at(k, y1, x1) * tx;
        out.at(k, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

Augmented augment(const Sample& in, const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double scale = cfg.jitter_min + (cfg.jitter_max - cfg.jitter_min) * unit(rng);
  const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(in.height() * scale)));
  const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(in.width() * scale)));
  const double ky = static_cast<double>(sh) / in.height();
  const double kx = static_cast<double>(sw) / in.width();
  const Tensor<float> scaled = resize_bilinear(in.image, sh, sw);

  const int crop = cfg.crop;
  auto origin = [&](std::size_t extent) {
    const int slack = static_cast<int>(extent) - crop;
    const int lo = std::min(slack, 0);
    const int hi = std::max(slack, 0);
    return lo + static_cast<int>(unit(rng) * (hi - lo + 1));
  };
  const int oy = origin(sh);
  const int ox = origin(sw);
  const bool flip = cfg.flip && unit(rng) < 0.5;

  Augmented out;
  out.sample.image_id = in.image_id;
  out.sample.image = Tensor<float>({3, static_cast<std::size_t>(crop), static_cast<std::size_t>(crop)});
  for (std::size_t c = 0; c < 3; ++c)
    for (int y = 0; y < crop; ++y) {
      const int sy = y + oy;
      if (sy < 0 || sy >= static_cast<int>(sh)) continue;
      for (int x = 0; x < crop; ++x) {
        const int sx = x + ox;
        if (sx < 0 || sx >= static_cast<int>(sw)) continue;
        const int dx = flip ? crop - 1 - x : x;
        out.sample.image.at(c, y, dx) = scaled.at(c, sy, sx);
      }
    }

  for (const GroundTruthBox& b : in.boxes) {
    const double x1 = b.x1 * kx - ox, x2 = b.x2 * kx - ox;
    const double y1 = b.y1 * ky - oy, y2 = b.y2 * ky - oy;
    GroundTruthBox r{b.class_id, std::clamp(x1, 0.0, double(crop)), std::clamp(y1, 0.0, double(crop)),
                     std::clamp(x2, 0.0, double(crop)), std::clamp(y2, 0.0, double(crop))};
    const bool gone = r.width() <= 0.0 || r.height() <= 0.0;
    const bool cut = (r.width() < 4.0 && r.width() < x2 - x1) || (r.height() < 4.0 && r.height() < y2 - y1);
    if (gone || cut) {
      ++out.dropped;
      continue;
    }
    if (flip) {
      const double nx1 = crop - r.x2;
      r.x2 = crop - r.x1;
      r.x1 = nx1;
    }
    out.sample.boxes.push_back(r);
  }
  return out;
}

}  // namespace xnet
