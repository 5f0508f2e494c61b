#include <gtest/gtest.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "xnet/checkpoint.hpp"
#include "xnet/config.hpp"
#include "xnet/dataset.hpp"
#include "xnet/evaluate.hpp"
#include "xnet/train.hpp"

using namespace xnet;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xnet_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Few tiny steps, enough to exercise every path of the loop.
Config quick_config() {
  Config c = Config::desk();
  c.matrix.channels = 8;
  c.head.hidden = 8;
  c.train.epochs = 2;
  c.train.batch_size = 4;
  c.train.log_every = 1;
  return c;
}

struct ThreadScope {
  int previous = omp_get_max_threads();
  explicit ThreadScope(int n) { omp_set_num_threads(n); }
  ~ThreadScope() { omp_set_num_threads(previous); }
};

Detection det(int cls, double score, Box b) { return {cls, score, b, {1, 1}}; }

}  // namespace

TEST(Config, FullScaleRecipeDefaults) {
  const Config p = Config::full();
  EXPECT_EQ(p.train.lr, 5e-5);
  EXPECT_EQ(p.train.lr_drop_fraction, 0.75);
  EXPECT_EQ(p.train.crop, 512);
  EXPECT_EQ(p.train.jitter_min, 0.6);
  EXPECT_EQ(p.train.jitter_max, 1.5);
  EXPECT_EQ(p.ranges.base.w_min, 24.0);
  EXPECT_EQ(p.ranges.base.h_max, 48.0);
  EXPECT_EQ(p.eval.test_max_side, 900);
  const Config d = Config::desk();
  EXPECT_EQ(d.train.crop, 128);
  EXPECT_EQ(d.train.lr, 5e-5);
  EXPECT_EQ(d.train.epochs, 40);
  EXPECT_EQ(d.ranges.base.w_min * 512 / 128, 24.0);
}

TEST(Config, JsonRoundtripAndOverrides) {
  Config c = Config::desk();
  apply_override(c, "train.lr", "0.001");
  apply_override(c, "data.source", "coco-json");
  apply_override(c, "train.jitter", "[0.8, 1.2]");
  EXPECT_EQ(c.train.lr, 0.001);
  EXPECT_EQ(c.data.source, "coco-json");
  EXPECT_EQ(c.train.jitter_min, 0.8);
  const Config back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, UnknownOrMistypedKeysRejected) {
  Config c = Config::desk();
  EXPECT_THROW(apply_override(c, "train.learning_rate", "1"), std::invalid_argument);
  EXPECT_THROW(apply_override(c, "nosuch.key", "1"), std::invalid_argument);
  EXPECT_THROW(apply_override(c, "train.epochs", "\"many\""), std::invalid_argument);
  EXPECT_THROW(config_from_json(json{{"matrix", {{"n", 0}}}}), std::invalid_argument);
  EXPECT_THROW(config_from_json(json{{"ranges", {{"lo_mult", 1.5}}}}), std::invalid_argument);
}

TEST(Config, LoadsPartialFileOverDefaults) {
  const fs::path dir = scratch("cfg");
  write_text(dir / "c.json", R"({"train": {"epochs": 7}, "matrix": {"prune_band": 1}})");
  const Config c = load_config((dir / "c.json").string());
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.matrix.prune_band, 1);
  EXPECT_EQ(c.train.batch_size, Config::desk().train.batch_size);
  fs::remove_all(dir);
}

TEST(Synthetic, SameSeedSameData) {
  const Dataset a = gen_synthetic(20, 0, SyntheticSpec{});
  const Dataset b = gen_synthetic(20, 0, SyntheticSpec{});
  const Dataset c = gen_synthetic(20, 1, SyntheticSpec{});
  ASSERT_EQ(a.samples.size(), 20u);
  bool differs = false;
  for (std::size_t k = 0; k < 20; ++k) {
    EXPECT_EQ(a.samples[k].image, b.samples[k].image);
    ASSERT_EQ(a.samples[k].boxes.size(), b.samples[k].boxes.size());
    for (std::size_t n = 0; n < a.samples[k].boxes.size(); ++n) EXPECT_EQ(a.samples[k].boxes[n].x1, b.samples[k].boxes[n].x1);
    differs |= !(a.samples[k].image == c.samples[k].image);
  }
  EXPECT_TRUE(differs);
}

TEST(Synthetic, BoxesValidAndEveryLiveLayerCovered) {
  const Config cfg = Config::desk();
  const RangeGrid grid = compute_ranges(cfg.ranges, cfg.matrix);
  const Dataset d = gen_synthetic(2000, 0, SyntheticSpec{});
  std::map<LayerCoord, int> counts;
  std::set<int> classes;
  for (const Sample& s : d.samples) {
    EXPECT_GE(s.boxes.size(), 1u);
    EXPECT_LE(s.boxes.size(), 5u);
    for (const auto& b : s.boxes) {
      EXPECT_GT(b.width(), 0.0);
      EXPECT_GT(b.height(), 0.0);
      EXPECT_GE(b.x1, 0.0);
      EXPECT_LE(b.x2, 128.0);
      EXPECT_LE(std::max(b.width() / b.height(), b.height() / b.width()), 4.0 + 1e-9);
      classes.insert(b.class_id);
      for (LayerCoord c : assign_with_clamp(b, grid, AssignMode::all_containing).layers) ++counts[c];
    }
  }
  EXPECT_EQ(classes, (std::set<int>{0, 1, 2}));
  for (LayerCoord c : live_coords(cfg.matrix)) EXPECT_GE(counts[c], 20) << c.str();
}

TEST(Synthetic, ExtremeAspectClampsToNearestLiveLayer) {
  const Config cfg = Config::desk();
  const RangeGrid grid = compute_ranges(cfg.ranges, cfg.matrix);
  SyntheticSpec spec;
  spec.max_aspect = 10.0;
  const Dataset d = gen_synthetic(300, 4, spec);
  std::size_t clamped = 0, outside = 0, extreme = 0;
  const auto live = live_coords(cfg.matrix);
  for (const Sample& s : d.samples) {
    const TargetMaps t = render_targets(s.boxes, layer_specs(cfg.matrix, 128, 128), grid, cfg.render_options());
    clamped += t.report.clamped;
    for (const auto& b : s.boxes) {
      const Assignment a = assign_with_clamp(b, grid, AssignMode::all_containing);
      ASSERT_EQ(a.layers.size(), a.clamped ? 1u : assign_box(b, grid).size());
      EXPECT_NE(std::find(live.begin(), live.end(), a.layers[0]), live.end());
      EXPECT_EQ(a.clamped, assign_box(b, grid).empty());
      outside += a.clamped;
      extreme += a.clamped && std::max(b.width() / b.height(), b.height() / b.width()) > 4.0;
    }
  }
  EXPECT_GT(extreme, 0u);
  EXPECT_EQ(clamped, outside);
}

TEST(Coco, BboxBecomesCorners) {
  const fs::path dir = scratch("coco1");
  write_text(dir / "a.json", R"({
  "images": [{"id": 7, "file_name": "x.png", "width": 64, "height": 80}],
  "annotations": [{"id": 1, "image_id": 7, "category_id": 3, "bbox": [10, 20, 30, 40]}],
  "categories": [{"id": 3, "name": "thing"}]
})");
  const Dataset d = load_coco_json((dir / "a.json").string(), "", false);
  ASSERT_EQ(d.samples.size(), 1u);
  const GroundTruthBox& b = d.samples[0].boxes.at(0);
  EXPECT_EQ(b.x1, 10.0);
  EXPECT_EQ(b.y1, 20.0);
  EXPECT_EQ(b.x2, 40.0);
  EXPECT_EQ(b.y2, 60.0);
  EXPECT_EQ(b.class_id, 0);
  EXPECT_EQ(d.samples[0].image_id, 7);
  EXPECT_EQ(d.samples[0].height(), 80u);
  fs::remove_all(dir);
}

TEST(Coco, EmptyAnnotationListGivesEmptyDataset) {
  const fs::path dir = scratch("coco2");
  write_text(dir / "a.json", R"({"images": [], "annotations": [], "categories": []})");
  const Dataset d = load_coco_json((dir / "a.json").string());
  EXPECT_TRUE(d.samples.empty());
  fs::remove_all(dir);
}

TEST(Coco, TruncatedFileIsADataErrorWithLine) {
  const fs::path dir = scratch("coco3");
  write_text(dir / "a.json", "{\n  \"images\": [\n    {\"id\": 1, \"file_na");
  try {
    load_coco_json((dir / "a.json").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_coco_json((dir / "missing.json").string()), DataError);
  fs::remove_all(dir);
}

TEST(Coco, MissingImagesAndBadEntriesAreWarnings) {
  const fs::path dir = scratch("coco4");
  write_text(dir / "a.json", R"({
  "images": [{"id": 1, "file_name": "nope.png", "width": 32, "height": 32}],
  "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 8, 8]},
                  {"id": 2, "image_id": 1, "category_id": 1, "bbox": [0, 0, -3, 8]},
                  {"id": 3, "image_id": 9, "category_id": 1, "bbox": [0, 0, 3, 8]}]
})");
  const Dataset d = load_coco_json((dir / "a.json").string());
  EXPECT_TRUE(d.samples.empty());
  EXPECT_GE(d.warnings.size(), 3u);
  fs::remove_all(dir);
}

TEST(Coco, WriteThenLoadRoundtrip) {
  const fs::path dir = scratch("coco5");
  const Dataset src = gen_synthetic(4, 3, SyntheticSpec{});
  write_coco(src, dir.string());
  const Dataset back = load_coco_json((dir / "annotations.json").string());
  ASSERT_EQ(back.samples.size(), src.samples.size());
  for (std::size_t k = 0; k < src.samples.size(); ++k) {
    const Sample &a = src.samples[k], &b = back.samples[k];
    EXPECT_EQ(a.image_id, b.image_id);
    ASSERT_EQ(a.boxes.size(), b.boxes.size());
    for (std::size_t n = 0; n < a.boxes.size(); ++n) {
      EXPECT_NEAR(a.boxes[n].x1, b.boxes[n].x1, 1e-9);
      EXPECT_NEAR(a.boxes[n].y2, b.boxes[n].y2, 1e-9);
      EXPECT_EQ(a.boxes[n].class_id, b.boxes[n].class_id);
    }
    ASSERT_EQ(a.image.shape(), b.image.shape());
    for (std::size_t i = 0; i < a.image.numel(); ++i) ASSERT_NEAR(a.image[i], b.image[i], 0.5 / 255 + 1e-6);
  }
  fs::remove_all(dir);
}

TEST(AugmentProperty, RetainedBoxesStayInsideAndNonDegenerate) {
  const Dataset d = gen_synthetic(100, 8, SyntheticSpec{});
  std::mt19937_64 rng(9);
  const AugmentConfig cfg;
  std::size_t kept = 0, dropped = 0;
  for (int round = 0; round < 5; ++round)
    for (const Sample& s : d.samples) {
      const Augmented a = augment(s, cfg, rng);
      EXPECT_EQ(a.sample.image.shape(), (Shape{3, 128, 128}));
      EXPECT_EQ(a.sample.image_id, s.image_id);
      for (const auto& b : a.sample.boxes) {
        EXPECT_GE(b.x1, 0.0);
        EXPECT_GE(b.y1, 0.0);
        EXPECT_LE(b.x2, 128.0);
        EXPECT_LE(b.y2, 128.0);
        EXPECT_GT(b.width(), 0.0);
        EXPECT_GT(b.height(), 0.0);
      }
      kept += a.sample.boxes.size();
      dropped += a.dropped;
    }
  EXPECT_GT(kept, 0u);
  EXPECT_GT(dropped, 0u);
}

TEST(Augment, FlipMirrorsBoxes) {
  Sample s;
  s.image = Tensor<float>({3, 128, 128});
  s.image.at(0, 10, 20) = 1.0f;
  s.boxes = {{0, 10, 20, 40, 50}};
  AugmentConfig cfg;
  cfg.jitter_min = cfg.jitter_max = 1.0;
  bool saw_flip = false;
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    const Augmented a = augment(s, cfg, rng);
    ASSERT_EQ(a.sample.boxes.size(), 1u);
    const auto& b = a.sample.boxes[0];
    if (b.x1 == 88.0) {
      saw_flip = true;
      EXPECT_EQ(b.x2, 118.0);
      EXPECT_EQ(a.sample.image.at(0, 10, 107), 1.0f);
    } else {
      EXPECT_EQ(b.x1, 10.0);
    }
    EXPECT_EQ(b.y1, 20.0);
  }
  EXPECT_TRUE(saw_flip);
}

TEST(Checkpoint, EncodeDecodeEncodeIsByteIdentical) {
  const Config cfg = quick_config();
  KpxNet<float> net(cfg.matrix, cfg.head, 5);
  Adam<float> adam(net.parameters(), AdamConfig{1e-3});
  for (auto& p : net.parameters()) p.var.mutable_grad().fill(0.25f);
  adam.step();
  Checkpoint c;
  c.config_json = to_json(cfg).dump();
  c.epoch = 3;
  c.step = 17;
  c.rng_state = "1 2 3";
  capture<float>(c, net.parameters(), &adam);
  const std::string bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.adam_steps, 1u);

  KpxNet<float> other(cfg.matrix, cfg.head, 99);
  Adam<float> adam2(other.parameters(), AdamConfig{});
  restore<float>(back, other.parameters(), &adam2);
  const auto pa = net.parameters(), pb = other.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].var.value(), pb[k].var.value()) << pa[k].name;
  EXPECT_EQ(adam2.lr(), 1e-3);

  const fs::path dir = scratch("ckpt");
  save_checkpoint((dir / "a.ckpt").string(), back);
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), bytes);
  save_checkpoint((dir / "b.ckpt").string(), load_checkpoint((dir / "a.ckpt").string()));
  EXPECT_EQ(read_bytes(dir / "b.ckpt"), bytes);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptInputRejected) {
  Checkpoint c;
  c.config_json = "{}";
  const std::string bytes = encode_checkpoint(c);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), std::runtime_error);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), std::runtime_error);
  std::string bad = bytes;
  bad[0] = 'Y';
  EXPECT_THROW(decode_checkpoint(bad), std::runtime_error);
}

TEST(AveragePrecision, PerfectPredictionsScoreOne) {
  const std::vector<std::vector<GroundTruthBox>> gt = {{{0, 0, 0, 10, 10}, {1, 20, 20, 40, 30}}, {{2, 5, 5, 9, 9}}};
  std::vector<std::vector<Detection>> dets(2);
  for (std::size_t k = 0; k < gt.size(); ++k)
    for (const auto& g : gt[k]) dets[k].push_back(det(g.class_id, 0.9, g.box()));
  const ApReport r = compute_ap(dets, gt, 3, {0.5, 0.75, 0.95});
  for (const auto& t : r.thresholds) EXPECT_DOUBLE_EQ(t.ap, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_ap, 1.0);
}

TEST(AveragePrecision, NoPredictionsScoreZero) {
  const ApReport r = compute_ap({{}}, {{{0, 0, 0, 10, 10}}}, 1, {0.5});
  EXPECT_EQ(r.thresholds[0].ap, 0.0);
}

TEST(AveragePrecision, FalsePositiveRankingMatters) {
  const std::vector<std::vector<GroundTruthBox>> gt = {{{0, 0, 0, 10, 10}}};
  const Box hit{0, 0, 10, 10}, miss{50, 50, 60, 60};
  // precision/recall: TP first -> (1, 1) then (0.5, 1): area 1
  EXPECT_DOUBLE_EQ(compute_ap({{det(0, 0.9, hit), det(0, 0.3, miss)}}, gt, 1, {0.5}).mean_ap, 1.0);
  // FP first -> (0, 0) then (0.5, 1): area 0.5
  EXPECT_DOUBLE_EQ(compute_ap({{det(0, 0.3, hit), det(0, 0.9, miss)}}, gt, 1, {0.5}).mean_ap, 0.5);
}

TEST(AveragePrecision, DuplicateCountsAsFalsePositive) {
  const std::vector<std::vector<GroundTruthBox>> gt = {{{0, 0, 0, 10, 10}, {0, 20, 0, 30, 10}}};
  const Box a{0, 0, 10, 10};
  // TP, duplicate FP, TP: P/R points (1, .5) (.5, .5) (.667, 1) -> 0.5*1 + 0.5*0.667
  const double ap = compute_ap({{det(0, 0.9, a), det(0, 0.8, a), det(0, 0.7, {20, 0, 30, 10})}}, gt, 1, {0.5}).mean_ap;
  EXPECT_NEAR(ap, 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
}

TEST(Predict, BoxesComeBackInOriginalCoordinates) {
  const Config cfg = quick_config();
  KpxNet<float> net(cfg.matrix, cfg.head, 1);
  Sample s;
  s.image = Tensor<float>({3, 60, 100}, 0.5f);
  s.image_id = 4;
  const auto dets = predict(net, {s}, cfg);
  ASSERT_EQ(dets.size(), 1u);
  for (const auto& d : dets[0]) {
    EXPECT_GE(d.box.x1, 0.0);
    EXPECT_LE(d.box.x2, 100.0);
    EXPECT_LE(d.box.y2, 60.0);
  }
  const json j = detection_json(4, Detection{1, 0.5, {1, 2, 3, 4}, {2, 3}});
  EXPECT_EQ(j["image_id"], 4);
  EXPECT_EQ(j["class"], 1);
  EXPECT_EQ(j["box"], json::array({1, 2, 3, 4}));
  EXPECT_EQ(j["layer"], json::array({2, 3}));
}

TEST(Schedule, DropsTenfoldAtThreeQuarters) {
  TrainConfig t;
  t.epochs = 40;
  EXPECT_EQ(scheduled_lr(t, 29), 5e-5);
  EXPECT_NEAR(scheduled_lr(t, 30), 5e-6, 1e-20);
  t.epochs = 80;
  EXPECT_EQ(scheduled_lr(t, 59), 5e-5);
  EXPECT_NEAR(scheduled_lr(t, 60), 5e-6, 1e-20);
}

TEST(Train, LogsResolvedConfigAndScheduledLr) {
  ThreadScope one(1);
  Config cfg = quick_config();
  cfg.train.epochs = 4;
  cfg.train.log_every = 0;
  const Dataset d = gen_synthetic(4, 2, SyntheticSpec{});
  std::ostringstream metrics;
  TrainOptions opts;
  opts.metrics = &metrics;
  const TrainResult r = train(cfg, d, nullptr, opts);
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.epochs, 4u);
  std::istringstream in(metrics.str());
  std::string line;
  std::vector<json> lines;
  while (std::getline(in, line)) lines.push_back(json::parse(line));
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines.front()["event"], "config");
  EXPECT_EQ(config_from_json(lines.front()["config"]).train.epochs, 4);
  std::vector<double> lrs;
  for (const auto& j : lines)
    if (j["event"] == "epoch") lrs.push_back(j["lr"]);
  ASSERT_EQ(lrs.size(), 4u);
  EXPECT_EQ(lrs[2], 5e-5);
  EXPECT_NEAR(lrs[3], 5e-6, 1e-20);
  EXPECT_EQ(lines.back()["event"], "done");
}

TEST(Train, OverfitsASingleImage) {
  Config cfg = quick_config();
  cfg.matrix.channels = 32;
  cfg.head.hidden = 32;
  cfg.train.batch_size = 1;
  cfg.train.epochs = 300;
  cfg.train.lr = 5e-4;
  cfg.train.jitter_min = cfg.train.jitter_max = 1.0;
  cfg.train.flip = false;
  const Dataset d = gen_synthetic(1, 12, SyntheticSpec{});
  std::ostringstream metrics;
  TrainOptions opts;
  opts.metrics = &metrics;
  ASSERT_EQ(train(cfg, d, nullptr, opts).status, 0);
  std::map<int, double> loss;
  std::istringstream in(metrics.str());
  std::string line;
  while (std::getline(in, line)) {
    const json j = json::parse(line);
    if (j["event"] == "step") loss[j["step"]] = j["loss"];
  }
  ASSERT_EQ(loss.size(), 300u);
  EXPECT_LT(loss[300], 0.1 * loss[10]) << "step 10 " << loss[10] << ", step 300 " << loss[300];
}

TEST(Train, NanLossAbortsWithLastGoodCheckpoint) {
  Config cfg = quick_config();
  cfg.train.lr = 1e30;
  const Dataset d = gen_synthetic(8, 3, SyntheticSpec{});
  const fs::path dir = scratch("nan");
  std::ostringstream metrics;
  TrainOptions opts;
  opts.metrics = &metrics;
  opts.out_dir = dir.string();
  const TrainResult r = train(cfg, d, nullptr, opts);
  EXPECT_EQ(r.status, 3);
  EXPECT_TRUE(fs::exists(dir / "last_good.ckpt"));
  const std::string text = metrics.str();
  const auto pos = text.find("numeric_failure");
  ASSERT_NE(pos, std::string::npos);
  const std::string last = text.substr(text.rfind('{', pos));
  const json j = json::parse(last.substr(0, last.find('\n')));
  EXPECT_FALSE(j["batch_image_ids"].empty());
  // the saved state is finite
  for (const auto& p : load_checkpoint((dir / "last_good.ckpt").string()).params) EXPECT_TRUE(p.value.all_finite());
  fs::remove_all(dir);
}

TEST(Reproducibility, SingleThreadRunsAreBitwiseIdentical) {
  ThreadScope one(1);
  const Config cfg = quick_config();
  const Dataset d = gen_synthetic(12, 6, SyntheticSpec{});
  std::string logs[2], ckpts[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = scratch("repro" + std::to_string(run));
    std::ostringstream metrics;
    TrainOptions opts;
    opts.metrics = &metrics;
    opts.out_dir = dir.string();
    train(cfg, d, nullptr, opts);
    logs[run] = metrics.str();
    ckpts[run] = read_bytes(dir / "last.ckpt");
    fs::remove_all(dir);
  }
  EXPECT_FALSE(logs[0].empty());
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_FALSE(ckpts[0].empty());
  EXPECT_TRUE(ckpts[0] == ckpts[1]);
}

TEST(Reproducibility, ResumeContinuesExactly) {
  ThreadScope one(1);
  const Dataset d = gen_synthetic(12, 7, SyntheticSpec{});
  Config cfg = quick_config();
  cfg.train.epochs = 3;

  const fs::path full = scratch("full"), part = scratch("part");
  std::ostringstream m_full, m_part, m_rest;
  TrainOptions a;
  a.metrics = &m_full;
  a.out_dir = full.string();
  train(cfg, d, nullptr, a);

  Config first = cfg;
  first.train.epochs = 1;
  TrainOptions b;
  b.metrics = &m_part;
  b.out_dir = part.string();
  train(first, d, nullptr, b);
  // the schedule depends on the total epoch count, so resume under the full config
  TrainOptions c;
  c.metrics = &m_rest;
  c.out_dir = part.string();
  c.resume = (part / "last.ckpt").string();
  train(cfg, d, nullptr, c);

  auto step_lines = [](const std::string& text, int from_epoch) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const json j = json::parse(line);
      if ((j["event"] == "step" || j["event"] == "epoch") && j["epoch"] >= from_epoch) out.push_back(line);
    }
    return out;
  };
  const auto want = step_lines(m_full.str(), 1);
  EXPECT_FALSE(want.empty());
  EXPECT_EQ(step_lines(m_rest.str(), 1), want);
  EXPECT_TRUE(read_bytes(full / "last.ckpt") == read_bytes(part / "last.ckpt"));
  fs::remove_all(full);
  fs::remove_all(part);
}
