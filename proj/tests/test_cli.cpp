#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>

#include "xnet/cli.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "xnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = xnet::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<json> lines(const std::string& text) {
  std::vector<json> v;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l))
    if (!l.empty()) v.push_back(json::parse(l));
  return v;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xnet_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const std::vector<std::string> kSmallData = {"--data.train_count=8", "--data.val_count=4", "--matrix.channels=8",
                                              "--head.hidden=8"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, HelpListsEverySubcommand) {
  const CliRun r = cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"train", "eval", "decode", "layer-stats", "gen-data", "grad-check"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  for (const char* s : {"train", "eval", "decode", "layer-stats", "gen-data"}) {
    const CliRun sub = cli({s, "--help"});
    EXPECT_EQ(sub.code, 0);
    EXPECT_NE(sub.out.find("--section.key=value"), std::string::npos) << s;
    EXPECT_NE(sub.out.find("--config"), std::string::npos) << s;
  }
}

TEST(Cli, UnknownFlagIsUsageError) {
  const CliRun r = cli({"train", "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli({"layer-stats", "--train.nonsense=3"}).code, 1);
  EXPECT_EQ(cli({}).code, 1);
}

TEST(Cli, MissingFilesFail) {
  const CliRun r = cli({"train", "--config", "/nonexistent/x.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli({"eval", "--checkpoint", "/nonexistent/x.ckpt"}).code, 1);
  EXPECT_EQ(cli({"layer-stats", "--data.source=coco-json", "--data.annotations=/nonexistent/a.json"}).code, 2);
}

TEST(Cli, GradCheckReportsEveryOp) {
  const CliRun r = cli({"grad-check", "--instances", "20"});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto v = lines(r.out);
  std::set<std::string> ops;
  for (const auto& j : v) {
    ops.insert(j["op"].get<std::string>());
    EXPECT_LT(j["max_rel_error"].get<double>(), 1e-4);
    EXPECT_GE(j["instances"].get<int>(), 20);
  }
  for (const char* op : {"relu", "sigmoid", "max_pool_3x3", "upsample2x", "add", "scale", "sum", "focal_loss", "smooth_l1"})
    EXPECT_TRUE(ops.count(op)) << op;
  EXPECT_TRUE(std::any_of(ops.begin(), ops.end(), [](const std::string& s) { return s.rfind("conv2d", 0) == 0; }));
}

TEST(Cli, LayerStatsOnDefaultSyntheticSet) {
  const CliRun r = cli({"layer-stats"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  ASSERT_EQ(j["layers"].size(), 19u);
  for (const auto& l : j["layers"]) EXPECT_GE(l["boxes"].get<int>(), 20) << l["layer"];
  EXPECT_EQ(j["images"], 2000);
  EXPECT_NE(r.err.find("(5,5)"), std::string::npos);
  EXPECT_EQ(r.err.find("(1,4)"), std::string::npos);
}

TEST(Cli, DecodeFromTargetsRecoversGroundTruth) {
  const CliRun r = cli({"decode", "--from-targets", "--count", "50"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.err, m, std::regex("(\\d+)/(\\d+) boxes recovered"))) << r.err;
  EXPECT_EQ(m[1], m[2]);
  const auto v = lines(r.out);
  ASSERT_FALSE(v.empty());
  for (const auto& d : v) {
    EXPECT_TRUE(d.contains("image_id"));
    EXPECT_EQ(d["box"].size(), 4u);
    EXPECT_EQ(d["layer"].size(), 2u);
  }
}

TEST(Cli, CocoPipelineEndToEnd) {
  const fs::path dir = scratch("pipe");
  ASSERT_EQ(cli(with({"gen-data", "--out", (dir / "data").string()}, kSmallData)).code, 0);
  ASSERT_TRUE(fs::exists(dir / "data" / "annotations.json"));

  const std::vector<std::string> coco = {"--data.source=coco-json",
                                         "--data.annotations=" + (dir / "data" / "annotations.json").string(),
                                         "--data.val_annotations=" + (dir / "data" / "annotations.json").string()};
  const CliRun t = cli(with(with({"train", "--out", (dir / "run").string(), "--max-steps", "2", "--threads", "1"},
                              kSmallData), coco));
  ASSERT_EQ(t.code, 0) << t.err;
  const auto metrics = lines(t.out);
  EXPECT_EQ(metrics.front()["event"], "config");
  EXPECT_EQ(metrics.back()["event"], "done");
  ASSERT_TRUE(fs::exists(dir / "run" / "final.ckpt"));

  const CliRun e = cli(with({"eval", "--checkpoint", (dir / "run" / "final.ckpt").string()}, coco));
  ASSERT_EQ(e.code, 0) << e.err;
  const json report = json::parse(e.out);
  EXPECT_TRUE(report.contains("mean_ap"));
  EXPECT_EQ(report["images"], 4);  // val split, capped at data.val_count

  const CliRun d = cli(with({"decode", "--checkpoint", (dir / "run" / "final.ckpt").string()}, coco));
  EXPECT_EQ(d.code, 0) << d.err;
  fs::remove_all(dir);
}

TEST(Cli, EmptyAnnotationListIsNotAnError) {
  const fs::path dir = scratch("empty");
  std::ofstream(dir / "a.json") << R"({"images": [], "annotations": [], "categories": []})";
  const CliRun r = cli({"layer-stats", "--data.source=coco-json", "--data.annotations=" + (dir / "a.json").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["images"], 0);
  fs::remove_all(dir);
}

TEST(Cli, TruncatedAnnotationsAreADataError) {
  const fs::path dir = scratch("trunc");
  std::ofstream(dir / "a.json") << "{\"images\": [{\"id\": 1,";
  const CliRun r = cli({"layer-stats", "--data.source=coco-json", "--data.annotations=" + (dir / "a.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("line"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, NumericFailureExitsThree) {
  const fs::path dir = scratch("nan");
  const CliRun r = cli(with({"train", "--out", dir.string(), "--max-steps", "6", "--train.lr=1e30"}, kSmallData));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("numeric_failure"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "last_good.ckpt"));
  fs::remove_all(dir);
}
