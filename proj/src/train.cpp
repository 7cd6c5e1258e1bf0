#include "mrseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "mrseg/errors.hpp"
#include "mrseg/eval.hpp"
#include "mrseg/preprocess.hpp"
#include "mrseg/sampler.hpp"

namespace mrseg {

CaseData prepare_case(const std::string& id, const Volume& ct, const Volume& labels, double fine_spacing, int ratio,
                      float clip_lo, float clip_hi) {
  if (!ct.same_geometry(labels)) throw AlignmentError("CT and labels of " + id + " differ in geometry");
  CaseData c;
  c.id = id;
  const Vec3 fine{fine_spacing, fine_spacing, fine_spacing};
  c.high_ct = clip_hu(resample(ct, fine, Interp::Cubic), clip_lo, clip_hi);
  c.high_labels = resample(labels, fine, Interp::Nearest);
  if (ratio > 1) {
    const Vec3 coarse{fine_spacing * ratio, fine_spacing * ratio, fine_spacing * ratio};
    c.low_ct = clip_hu(resample(ct, coarse, Interp::Cubic), clip_lo, clip_hi);
    c.low_labels = resample(labels, coarse, Interp::Nearest);
  }
  return c;
}

std::vector<double> foreground_dice(const Volume& pred, const Volume& ref, int classes) {
  std::vector<double> out;
  for (int c = 1; c < classes; ++c) {
    out.push_back(dice(label_mask(pred, static_cast<float>(c)), label_mask(ref, static_cast<float>(c))));
  }
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::size_t> epoch_order(std::size_t n, int cap, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  if (cap > 0 && static_cast<std::size_t>(cap) < n) order.resize(static_cast<std::size_t>(cap));
  return order;
}

struct SampleRef {
  std::size_t case_index;
  Index3 corner;
};

}  // namespace

TrainResult run_training(CascadeModel& model, std::size_t sample_count,
                         const std::function<double(const std::vector<std::size_t>&, Rng&)>& train_step,
                         const std::function<std::vector<double>()>& validate, const TrainConfig& cfg) {
  if (sample_count == 0) throw ConfigError("no training samples");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  Adam adam(cfg.adam);
  EarlyStopper stopper(cfg.patience);
  Rng rng(cfg.seed);
  TrainResult r;
  ParameterSnapshot best = snapshot(model);
  const auto params = model.parameters();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(sample_count, cfg.patches_per_epoch, rng);
    double loss_sum = 0.0;
    long batches = 0;
    bool cap_hit = false;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
      zero_grads(params);
      const double loss = train_step(batch, rng);
      if (!std::isfinite(loss)) throw NumericsError("non-finite training loss at step " + std::to_string(r.steps + 1));
      adam.step(params);
      ++r.steps;
      r.step_losses.push_back(loss);
      loss_sum += loss;
      ++batches;
      if (cfg.max_steps > 0 && r.steps >= cfg.max_steps) {
        cap_hit = true;
        break;
      }
    }
    zero_grads(params);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = r.steps;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.val_class_dice = validate();
    rec.val_mean_dice = mean_of(rec.val_class_dice);
    const bool stop = stopper.update(epoch, rec.val_mean_dice);
    rec.improved = stopper.improved();
    if (rec.improved) {
      best = snapshot(model);
      if (!cfg.checkpoint.empty()) {
        save_checkpoint(model, cfg.checkpoint, cfg.config_hash, {{"epoch", epoch}, {"val_mean_dice", rec.val_mean_dice}});
      }
    }
    r.history.push_back(rec);
    if (cfg.log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *cfg.log << "epoch " << epoch << " steps " << r.steps << " train_loss " << std::setprecision(6) << rec.train_loss
               << " val_dice";
      for (double d : rec.val_class_dice) *cfg.log << ' ' << std::setprecision(4) << d;
      *cfg.log << " mean " << rec.val_mean_dice << (rec.improved ? " *" : "") << " (" << std::setprecision(3) << secs
               << " s)" << std::endl;
    }
    if (stop) {
      r.stopped_early = true;
      break;
    }
    if (cap_hit) break;
  }
  r.best_epoch = stopper.best_epoch();
  r.best_score = stopper.best_score();
  restore(model, best);
  if (!cfg.history_csv.empty()) write_history_csv(r, cfg.history_csv);
  return r;
}

namespace {

// Reuses the fine-net augmentation path for a coarse-only sample.
PatchSample augment_low(const PatchSample& s, Rng& rng, int in, int out, const AugmentConfig& cfg) {
  PatchSample tmp;
  tmp.high_in = s.low_in;
  tmp.target = s.low_target;
  tmp.weights = s.low_weights;
  const PairGeometry g{in, out, 0, 0, 1};
  const PatchSample a = augment(tmp, rng, g, cfg);
  PatchSample r = s;
  r.low_in = a.high_in;
  r.low_target = a.target;
  r.low_weights = a.weights;
  return r;
}

void require_cases(const std::vector<CaseData>& train, const std::vector<CaseData>& val) {
  if (train.empty()) throw ConfigError("empty training split");
  if (val.empty()) throw ConfigError("empty validation split");
}

}  // namespace

TrainResult pretrain_lowres(CascadeModel& model, const std::vector<CaseData>& train_cases,
                            const std::vector<CaseData>& val_cases, const TrainConfig& cfg) {
  require_cases(train_cases, val_cases);
  if (!model.multires()) throw ConfigError("single-resolution model has no coarse net");
  const UNet& low = model.low();
  const int in = low.config().input_size, out = low.output_size();
  std::vector<SampleRef> refs;
  for (std::size_t c = 0; c < train_cases.size(); ++c) {
    const auto grid = training_patch_grid(train_cases[c].low_ct.dims(), in, out, cfg.stride);
    for (const auto& corner : grid.corners()) refs.push_back({c, corner});
  }
  // the fine net takes no part in this stage
  std::vector<bool> saved;
  for (auto& p : model.high().parameters()) {
    saved.push_back(p.trainable);
    p.trainable = false;
  }
  auto step = [&](const std::vector<std::size_t>& batch, Rng& rng) {
    double total = 0.0;
    for (std::size_t i : batch) {
      const auto& ref = refs[i];
      const auto& c = train_cases[ref.case_index];
      PatchSample s = make_low_sample(c.low_ct, c.low_labels, ref.corner, in, out, cfg.low_class_weights);
      if (cfg.augment.enabled) s = augment_low(s, rng, in, out, cfg.augment);
      const Tensor probs = low.forward(s.low_in, true, &rng);
      const Tensor loss = combined_loss(probs, s.low_target, s.low_weights, cfg.loss);
      total += loss.item();
      backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
    }
    return total / static_cast<double>(batch.size());
  };
  auto validate = [&] {
    std::vector<double> acc;
    for (const auto& c : val_cases) {
      const Volume pred = argmax_labels(predict_unet(low, c.low_ct, {cfg.workers}));
      acc.push_back(foreground_dice(pred, merge_format1(c.low_labels), 2)[0]);
    }
    return std::vector<double>{mean_of(acc)};
  };
  TrainResult r;
  try {
    r = run_training(model, refs.size(), step, validate, cfg);
  } catch (...) {
    auto& hp = model.high().parameters();
    for (std::size_t i = 0; i < hp.size(); ++i) hp[i].trainable = saved[i];
    throw;
  }
  auto& hp = model.high().parameters();
  for (std::size_t i = 0; i < hp.size(); ++i) hp[i].trainable = saved[i];
  return r;
}

SegmentationResult segment(const CascadeModel& model, const CaseData& c, const PostprocessConfig& post, int workers) {
  const auto pred = predict_volume(model, c.high_ct, model.multires() ? &c.low_ct : nullptr, {workers});
  return postprocess(pred.high, model.multires() ? &pred.low : nullptr, model.config().resolution_ratio, post);
}

TrainResult train_cascade(CascadeModel& model, const std::vector<CaseData>& train_cases,
                          const std::vector<CaseData>& val_cases, const TrainConfig& cfg) {
  require_cases(train_cases, val_cases);
  if (model.multires() && cfg.freeze_lowres) model.freeze_lowres();
  const PairGeometry g = pair_geometry(model);
  std::vector<SampleRef> refs;
  for (std::size_t c = 0; c < train_cases.size(); ++c) {
    const auto grid = training_patch_grid(train_cases[c].high_ct.dims(), g.high_input, g.high_output, cfg.stride);
    for (const auto& corner : grid.corners()) refs.push_back({c, corner});
  }
  const int classes = model.config().high.out_classes;
  if (cfg.low_loss_weight < 0.0) throw ConfigError("coarse loss weight must be non-negative");
  const bool coarse_loss = model.multires() && cfg.low_loss_weight > 0.0;
  auto step = [&](const std::vector<std::size_t>& batch, Rng& rng) {
    double total = 0.0;
    for (std::size_t i : batch) {
      const auto& ref = refs[i];
      const auto& c = train_cases[ref.case_index];
      PatchSample s = make_sample(c.high_ct, c.high_labels, model.multires() ? &c.low_ct : nullptr,
                                  coarse_loss ? &c.low_labels : nullptr, ref.corner, g, cfg.class_weights,
                                  cfg.low_class_weights);
      if (cfg.augment.enabled) s = augment(s, rng, g, cfg.augment);
      const auto out = model.forward(s.low_in, s.high_in, true, &rng, s.mask_offset);
      Tensor loss = combined_loss(out.high_probs, s.target, s.weights, cfg.loss);
      if (coarse_loss) {
        loss = add(loss, scale(combined_loss(out.low_probs, s.low_target, s.low_weights, cfg.loss), cfg.low_loss_weight));
      }
      total += loss.item();
      backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
    }
    return total / static_cast<double>(batch.size());
  };
  auto validate = [&] {
    std::vector<double> per_class(static_cast<std::size_t>(classes - 1), 0.0);
    for (const auto& c : val_cases) {
      const auto seg = segment(model, c, cfg.validation_post, cfg.workers);
      const auto d = foreground_dice(seg.labels, c.high_labels, classes);
      for (std::size_t k = 0; k < d.size(); ++k) per_class[k] += d[k];
    }
    for (auto& v : per_class) v /= static_cast<double>(val_cases.size());
    return per_class;
  };
  return run_training(model, refs.size(), step, validate, cfg);
}

void write_history_csv(const TrainResult& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "epoch,steps,train_loss,val_mean_dice";
  const std::size_t nc = r.history.empty() ? 0 : r.history.front().val_class_dice.size();
  for (std::size_t c = 0; c < nc; ++c) os << ",val_dice_class" << (c + 1);
  os << ",improved\n" << std::setprecision(17);
  for (const auto& e : r.history) {
    os << e.epoch << ',' << e.steps << ',' << e.train_loss << ',' << e.val_mean_dice;
    for (double d : e.val_class_dice) os << ',' << d;
    os << ',' << (e.improved ? 1 : 0) << '\n';
  }
}

}  // namespace mrseg
