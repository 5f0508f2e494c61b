#include "xnet/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace xnet {

namespace {

double class_ap(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<GroundTruthBox>>& gt,
                int cls, double threshold, std::size_t positives) {
  struct Entry {
    double score;
    std::size_t image;
    std::size_t index;
  };
  std::vector<Entry> order;
  for (std::size_t k = 0; k < dets.size(); ++k)
    for (std::size_t m = 0; m < dets[k].size(); ++m)
      if (dets[k][m].class_id == cls) order.push_back({dets[k][m].score, k, m});
  std::stable_sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
    return std::tie(b.score, a.image, a.index) < std::tie(a.score, b.image, b.index);
  });

  std::vector<std::vector<bool>> used(gt.size());
  for (std::size_t k = 0; k < gt.size(); ++k) used[k].assign(gt[k].size(), false);

  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Entry& e = order[r];
    const Box& box = dets[e.image][e.index].box;
    double best = -1.0;
    std::size_t best_k = 0;
    for (std::size_t g = 0; g < gt[e.image].size(); ++g) {
      if (gt[e.image][g].class_id != cls || used[e.image][g]) continue;
      const double o = iou(box, gt[e.image][g].box());
      if (o > best) {
        best = o;
        best_k = g;
      }
    }
    if (best >= threshold) {
      used[e.image][best_k] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }

  for (std::size_t r = precision.size(); r-- > 1;) precision[r - 1] = std::max(precision[r - 1], precision[r]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t r = 0; r < precision.size(); ++r) {
    ap += (recall[r] - prev_recall) * precision[r];
    prev_recall = recall[r];
  }
  return ap;
}

}  // namespace

ApReport compute_ap(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthBox>>& ground_truth, int num_classes,
                    const std::vector<double>& iou_thresholds) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("compute_ap: " + std::to_string(detections.size()) + " detection lists for " +
                                std::to_string(ground_truth.size()) + " images");
  }
  ApReport report;
  report.images = ground_truth.size();
  std::map<int, std::size_t> positives;
  for (const auto& list : ground_truth) {
    report.ground_truth += list.size();
    for (const GroundTruthBox& b : list) ++positives[b.class_id];
  }
  for (const auto& list : detections) report.detections += list.size();

  for (double t : iou_thresholds) {
    ThresholdAp entry;
    entry.iou = t;
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      const auto it = positives.find(c);
      if (it == positives.end()) continue;
      entry.per_class[c] = class_ap(detections, ground_truth, c, t, it->second);
      sum += entry.per_class[c];
    }
    entry.ap = entry.per_class.empty() ? 0.0 : sum / static_cast<double>(entry.per_class.size());
    report.thresholds.push_back(entry);
  }
  if (!report.thresholds.empty()) {
    double s = 0.0;
    for (const ThresholdAp& t : report.thresholds) s += t.ap;
    report.mean_ap = s / static_cast<double>(report.thresholds.size());
  }
  return report;
}

template <typename T>
std::vector<std::vector<Detection>> predict(const KpxNet<T>& model, const std::vector<Sample>& samples,
                                            const Config& cfg, std::size_t batch_size) {
  NoGradGuard no_grad;
  const RangeGrid grid = compute_ranges(cfg.ranges, cfg.matrix);
  const auto divisor = static_cast<std::size_t>(required_divisor(cfg.matrix));
  const auto max_side = static_cast<double>(cfg.eval.test_max_side);

  struct Prepared {
    Sample padded;
    std::size_t h, w;  // resized extent before padding
    double kx, ky;     // resized / original
  };
  std::vector<Prepared> prepared(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Sample& s = samples[k];
    const double scale = max_side / static_cast<double>(std::max(s.height(), s.width()));
    const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s.height() * scale)));
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s.width() * scale)));
    const Tensor<float> resized = (h == s.height() && w == s.width()) ? s.image : resize_bilinear(s.image, h, w);
    const std::size_t ph = (h + divisor - 1) / divisor * divisor;
    const std::size_t pw = (w + divisor - 1) / divisor * divisor;
    Prepared& p = prepared[k];
    p.h = h;
    p.w = w;
    p.kx = static_cast<double>(w) / s.width();
    p.ky = static_cast<double>(h) / s.height();
    p.padded.image_id = s.image_id;
    if (ph == h && pw == w) {
      p.padded.image = resized;
    } else {
      p.padded.image = Tensor<float>({3, ph, pw});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) p.padded.image.at(c, y, x) = resized.at(c, y, x);
    }
  }

  std::vector<std::vector<Detection>> out(samples.size());
  std::size_t start = 0;
  while (start < prepared.size()) {
    // group consecutive images with equal padded extents
    std::size_t end = start + 1;
    while (end < prepared.size() && end - start < batch_size &&
           prepared[end].padded.image.shape() == prepared[start].padded.image.shape()) {
      ++end;
    }
    std::vector<const Sample*> group;
    for (std::size_t k = start; k < end; ++k) group.push_back(&prepared[k].padded);
    const HeadOutput<T> maps = model.forward(Var<T>::constant(make_batch<T>(group)));
    const Sample& first = prepared[start].padded;
    const std::vector<LayerSpec> specs = layer_specs(cfg.matrix, first.height(), first.width());
    for (std::size_t k = start; k < end; ++k) {
      const Prepared& p = prepared[k];
      std::vector<Detection> dets = decode(maps.image_maps(k - start), specs, grid,
                                           ImageSize{static_cast<int>(p.h), static_cast<int>(p.w)}, cfg.decode);
      for (Detection& d : dets) {
        d.box.x1 /= p.kx;
        d.box.x2 /= p.kx;
        d.box.y1 /= p.ky;
        d.box.y2 /= p.ky;
      }
      out[k] = std::move(dets);
    }
    start = end;
  }
  return out;
}

template <typename T>
ApReport evaluate(const KpxNet<T>& model, const Dataset& data, const Config& cfg,
                  std::vector<std::vector<Detection>>* detections_out) {
  std::vector<std::vector<Detection>> dets =
      predict(model, data.samples, cfg, static_cast<std::size_t>(std::max(cfg.train.batch_size, 1)));
  std::vector<std::vector<GroundTruthBox>> gt;
  gt.reserve(data.samples.size());
  for (const Sample& s : data.samples) gt.push_back(s.boxes);
  ApReport report = compute_ap(dets, gt, cfg.head.num_classes, cfg.eval.iou_thresholds);
  if (detections_out) *detections_out = std::move(dets);
  return report;
}

nlohmann::json detection_json(std::int64_t image_id, const Detection& d) {
  return {{"image_id", image_id},
          {"class", d.class_id},
          {"score", d.score},
          {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
          {"layer", {d.layer.i, d.layer.j}}};
}

nlohmann::json report_json(const ApReport& r) {
  nlohmann::json thresholds = nlohmann::json::array();
  for (const ThresholdAp& t : r.thresholds) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [c, ap] : t.per_class) per_class[std::to_string(c)] = ap;
    thresholds.push_back({{"iou", t.iou}, {"ap", t.ap}, {"per_class", per_class}});
  }
  return {{"images", r.images},
          {"ground_truth", r.ground_truth},
          {"detections", r.detections},
          {"thresholds", thresholds},
          {"mean_ap", r.mean_ap}};
}

#define XNET_INSTANTIATE(T)                                                                                   \
  template std::vector<std::vector<Detection>> predict<T>(const KpxNet<T>&, const std::vector<Sample>&,      \
                                                          const Config&, std::size_t);                       \
  template ApReport evaluate<T>(const KpxNet<T>&, const Dataset&, const Config&,                             \
                                std::vector<std::vector<Detection>>*);
XNET_INSTANTIATE(float)
XNET_INSTANTIATE(double)
#undef XNET_INSTANTIATE

}  // namespace xnet
