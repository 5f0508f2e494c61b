#include "xnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xnet/evaluate.hpp"

namespace xnet {

namespace fs = std::filesystem;
using nlohmann::json;

double scheduled_lr(const TrainConfig& t, std::uint64_t epoch) {
  const auto drop = static_cast<std::uint64_t>(std::llround(t.lr_drop_fraction * t.epochs));
  return epoch >= drop ? t.lr * 0.1 : t.lr;
}

LoadedModel load_model(const Checkpoint& ckpt) {
  Config cfg = config_from_json(json::parse(ckpt.config_json));
  LoadedModel out{cfg, KpxNet<float>(cfg.matrix, cfg.head, cfg.train.seed)};
  restore<float>(ckpt, out.model.parameters(), nullptr);
  return out;
}

BatchTargets batch_targets(const std::vector<const Sample*>& samples, const Config& cfg, const RangeGrid& grid,
                           RenderReport* report) {
  const RenderOptions options = cfg.render_options();
  const std::vector<LayerSpec> specs = layer_specs(cfg.matrix, samples.at(0)->height(), samples.at(0)->width());
  std::vector<TargetMaps> per_image;
  per_image.reserve(samples.size());
  for (const Sample* s : samples) {
    per_image.push_back(render_targets(s->boxes, specs, grid, options));
    if (report) {
      const RenderReport& r = per_image.back().report;
      report->boxes += r.boxes;
      report->assignments += r.assignments;
      report->clamped += r.clamped;
      report->skipped += r.skipped;
      report->collisions += r.collisions;
    }
  }
  return stack_targets(per_image);
}

namespace {

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void emit(std::ostream* out, const json& line) {
  if (out) *out << line.dump() << "\n" << std::flush;
}

}  // namespace

TrainResult train(const Config& cfg, const Dataset& train_set, const Dataset* val_set, const TrainOptions& opts) {
  if (train_set.samples.empty()) throw DataError("training set is empty");
  const std::string config_text = to_json(cfg).dump();
  emit(opts.metrics, {{"event", "config"}, {"config", to_json(cfg)}});

  KpxNet<float> model(cfg.matrix, cfg.head, cfg.train.seed);
  const std::vector<NamedParam<float>> params = model.parameters();
  Adam<float> adam(params, AdamConfig{cfg.train.lr, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(cfg.train.seed);
  const RangeGrid grid = compute_ranges(cfg.ranges, cfg.matrix);
  const AugmentConfig aug{cfg.train.crop, cfg.train.jitter_min, cfg.train.jitter_max, cfg.train.flip};

  TrainResult result;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  if (!opts.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(opts.resume);
    restore<float>(ckpt, params, &adam);
    std::istringstream is(ckpt.rng_state);
    is >> rng;
    if (!is) throw std::runtime_error("checkpoint " + opts.resume + " has an unreadable RNG state");
    epoch = ckpt.epoch;
    step = ckpt.step;
    emit(opts.metrics, {{"event", "resume"}, {"epoch", epoch}, {"step", step}});
  }
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

  const auto snapshot = [&] {
    Checkpoint c;
    c.config_json = config_text;
    c.epoch = epoch;
    c.step = step;
    c.rng_state = rng_text(rng);
    capture<float>(c, params, &adam);
    return c;
  };

  const std::size_t batch = static_cast<std::size_t>(cfg.train.batch_size);
  std::vector<std::size_t> order(train_set.samples.size());
  bool stop = false;
  for (; epoch < static_cast<std::uint64_t>(cfg.train.epochs) && !stop; ++epoch) {
    adam.set_lr(scheduled_lr(cfg.train, epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    double sum_total = 0.0, sum_heat = 0.0, sum_off = 0.0, sum_ctr = 0.0;
    std::size_t batches = 0, dropped = 0;
    RenderReport render;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      if (opts.max_steps >= 0 && step >= static_cast<std::uint64_t>(opts.max_steps)) {
        stop = true;
        break;
      }
      std::vector<Sample> augmented;
      std::vector<std::int64_t> ids;
      for (std::size_t k = start; k < std::min(start + batch, order.size()); ++k) {
        Augmented a = augment(train_set.samples[order[k]], aug, rng);
        dropped += a.dropped;
        ids.push_back(a.sample.image_id);
        augmented.push_back(std::move(a.sample));
      }
      std::vector<const Sample*> ptrs;
      for (const Sample& s : augmented) ptrs.push_back(&s);

      try {
        const BatchTargets targets = batch_targets(ptrs, cfg, grid, &render);
        const HeadOutput<float> out = model.forward(Var<float>::constant(make_batch<float>(ptrs)));
        const LossBreakdown<float> loss = total_loss(out, targets, cfg.loss_weights, cfg.focal);
        loss.total.backward();
        adam.step();
        adam.zero_grad();
        ++step;
        ++batches;
        const double total = loss.total.value().item();
        sum_total += total;
        sum_heat += loss.heat;
        sum_off += loss.offset;
        sum_ctr += loss.center;
        if (cfg.train.log_every > 0 && step % static_cast<std::uint64_t>(cfg.train.log_every) == 0) {
          emit(opts.metrics, {{"event", "step"},
                              {"epoch", epoch},
                              {"step", step},
                              {"lr", adam.lr()},
                              {"loss", total},
                              {"heat", loss.heat},
                              {"offset", loss.offset},
                              {"center", loss.center}});
        }
      } catch (const NumericError& e) {
        adam.zero_grad();
        result.status = 3;
        result.epochs = epoch;
        result.steps = step;
        result.checkpoint = snapshot();
        std::string where;
        if (!opts.out_dir.empty()) {
          where = (fs::path(opts.out_dir) / "last_good.ckpt").string();
          save_checkpoint(where, result.checkpoint);
        }
        emit(opts.metrics, {{"event", "numeric_failure"},
                            {"epoch", epoch},
                            {"step", step},
                            {"error", e.what()},
                            {"batch_image_ids", ids},
                            {"checkpoint", where}});
        if (opts.log) *opts.log << "numeric failure at step " << step << ": " << e.what() << "\n";
        return result;
      }
    }
    if (batches == 0) break;

    const double n = static_cast<double>(batches);
    emit(opts.metrics, {{"event", "epoch"},
                        {"epoch", epoch},
                        {"steps", step},
                        {"lr", adam.lr()},
                        {"loss", sum_total / n},
                        {"heat", sum_heat / n},
                        {"offset", sum_off / n},
                        {"center", sum_ctr / n},
                        {"dropped_boxes", dropped},
                        {"clamped_boxes", render.clamped},
                        {"skipped_corners", render.skipped},
                        {"corner_collisions", render.collisions}});
    if (opts.log) {
      *opts.log << "epoch " << epoch << " lr " << adam.lr() << " loss " << sum_total / n << " (heat " << sum_heat / n
                << ", offset " << sum_off / n << ", center " << sum_ctr / n << ")\n"
                << std::flush;
    }

    const bool last_epoch = epoch + 1 == static_cast<std::uint64_t>(cfg.train.epochs);
    if (val_set && !val_set->samples.empty() && cfg.train.eval_every > 0 &&
        ((epoch + 1) % static_cast<std::uint64_t>(cfg.train.eval_every) == 0 || last_epoch)) {
      const ApReport report = evaluate(model, *val_set, cfg);
      result.last_ap = report.thresholds.front().ap;
      emit(opts.metrics, {{"event", "eval"}, {"epoch", epoch}, {"ap", *result.last_ap}, {"report", report_json(report)}});
      if (opts.log) *opts.log << "epoch " << epoch << " held-out AP@" << report.thresholds.front().iou << " = " << *result.last_ap << "\n";
      if (cfg.train.stop_at_ap > 0.0 && *result.last_ap >= cfg.train.stop_at_ap) {
        result.reached_target = true;
        stop = true;
      }
    }
    if (!opts.out_dir.empty()) {
      Checkpoint c = snapshot();
      c.epoch = epoch + 1;
      save_checkpoint((fs::path(opts.out_dir) / "last.ckpt").string(), c);
    }
  }
  result.epochs = epoch;
  result.steps = step;
  result.checkpoint = snapshot();
  emit(opts.metrics, {{"event", "done"}, {"epochs", epoch}, {"steps", step}});
  return result;
}

}  // namespace xnet
