#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "xnet/checkpoint.hpp"
#include "xnet/config.hpp"
#include "xnet/dataset.hpp"
#include "xnet/model.hpp"

namespace xnet {

struct TrainOptions {
  std::string out_dir;               // checkpoints go here; empty = keep in memory only
  std::ostream* metrics = nullptr;   // JSON lines
  std::ostream* log = nullptr;       // human-readable progress
  std::string resume;                // checkpoint to continue from
  std::int64_t max_steps = -1;       // stop after this many optimizer steps (smoke runs)
};

struct TrainResult {
  int status = 0;  // 0 ok, 3 numeric failure
  std::uint64_t epochs = 0;
  std::uint64_t steps = 0;
  std::optional<double> last_ap;
  bool reached_target = false;
  Checkpoint checkpoint;  // final state (last good one on failure)
};

// Epochs of {shuffle, augment, render targets, forward, total_loss, Adam}.
// The learning rate is multiplied by 0.1 from epoch round(drop_fraction *
// epochs) on. A non-finite loss or gradient aborts the run: the last good
// state is written to <out_dir>/last_good.ckpt and the offending image ids are
// logged. Metric lines carry no timing, so fixed-seed single-thread runs
// produce identical logs.
TrainResult train(const Config& cfg, const Dataset& train_set, const Dataset* val_set, const TrainOptions& opts);

// Learning rate in effect during 0-based `epoch`.
double scheduled_lr(const TrainConfig& t, std::uint64_t epoch);

// Rebuilds a model (and its config) from a checkpoint's snapshot.
struct LoadedModel {
  Config config;
  KpxNet<float> model;
};
LoadedModel load_model(const Checkpoint& ckpt);

// Rendered targets for a batch of same-sized samples.
BatchTargets batch_targets(const std::vector<const Sample*>& samples, const Config& cfg, const RangeGrid& grid,
                           RenderReport* report = nullptr);

}  // namespace xnet
