#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "xnet/config.hpp"
#include "xnet/dataset.hpp"
#include "xnet/decoder.hpp"
#include "xnet/model.hpp"

namespace xnet {

struct ThresholdAp {
  double iou = 0.5;
  double ap = 0.0;                    // mean over classes with ground truth
  std::map<int, double> per_class;
};

struct ApReport {
  std::vector<ThresholdAp> thresholds;
  double mean_ap = 0.0;  // mean over thresholds
  std::size_t images = 0;
  std::size_t ground_truth = 0;
  std::size_t detections = 0;
};

// detections[k] and ground_truth[k] belong to the same image. Per class and
// threshold, detections are visited by descending score and each is matched
// to the unmatched same-image box of highest IoU >= threshold. AP is the area
// under the monotone (all-point interpolated) precision/recall curve.
ApReport compute_ap(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthBox>>& ground_truth, int num_classes,
                    const std::vector<double>& iou_thresholds);

// Resizes each image so its longer side is test_max_side, zero-pads to the
// matrix divisor, runs the network without recording a graph and decodes.
// Boxes come back in original image coordinates.
template <typename T>
std::vector<std::vector<Detection>> predict(const KpxNet<T>& model, const std::vector<Sample>& samples,
                                            const Config& cfg, std::size_t batch_size = 8);

template <typename T>
ApReport evaluate(const KpxNet<T>& model, const Dataset& data, const Config& cfg,
                  std::vector<std::vector<Detection>>* detections_out = nullptr);

nlohmann::json detection_json(std::int64_t image_id, const Detection& d);
nlohmann::json report_json(const ApReport& r);

}  // namespace xnet
