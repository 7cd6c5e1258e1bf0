#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "mrseg/augment.hpp"
#include "mrseg/checkpoint.hpp"
#include "mrseg/infer.hpp"
#include "mrseg/loss.hpp"
#include "mrseg/optim.hpp"
#include "mrseg/sampler.hpp"
#include "mrseg/unet.hpp"
#include "mrseg/volume.hpp"

namespace mrseg {

/// One case on both grids. The coarse volumes are empty for
/// single-resolution pipelines.
struct CaseData {
  std::string id;
  Volume high_ct, high_labels;
  Volume low_ct, low_labels;
};

/// Resamples to the fine spacing (and to ratio times it when ratio > 1),
/// cubic for CT and nearest for labels, then clips the CT.
CaseData prepare_case(const std::string& id, const Volume& ct, const Volume& labels, double fine_spacing, int ratio,
                      float clip_lo = -500.0f, float clip_hi = 400.0f);

struct TrainConfig {
  LossConfig loss;
  AdamConfig adam;
  AugmentConfig augment{.enabled = false};
  std::vector<double> class_weights{kClassWeights.begin(), kClassWeights.end()};
  std::vector<double> low_class_weights{kFormat1Weights.begin(), kFormat1Weights.end()};
  int batch_size = 2;
  int patience = 10;
  int max_epochs = 200;
  long max_steps = 0;            // 0 = unlimited; training stops mid-epoch when reached
  int patches_per_epoch = 0;     // 0 = the full sampled grid
  int stride = 10;
  std::uint64_t seed = 0;
  int workers = 1;
  bool freeze_lowres = true;     // cascade stage: keep only the last coarse layers trainable
  double low_loss_weight = 0.0;  // cascade stage: weight of the coarse-output loss added to the fine loss
  PostprocessConfig validation_post{.gate = false, .remove_detached = false};
  std::ostream* log = nullptr;
  std::filesystem::path history_csv;
  std::filesystem::path checkpoint;  // best checkpoint written here when set
  std::string config_hash;
};

struct EpochRecord {
  int epoch = 0;
  long steps = 0;
  double train_loss = 0.0;
  double val_mean_dice = 0.0;
  std::vector<double> val_class_dice;  // foreground classes
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
  int best_epoch = 0;
  double best_score = 0.0;
  bool stopped_early = false;
  long steps = 0;
};

/// Dice per foreground class (1 .. classes-1) with the empty-mask conventions.
std::vector<double> foreground_dice(const Volume& pred, const Volume& ref, int classes);

/// Runs the epoch loop with early stopping: `train_step(batch, rng)` returns
/// the mean batch loss after accumulating gradients, `validate()` the
/// per-class validation Dice. Restores the best parameters at the end.
TrainResult run_training(CascadeModel& model, std::size_t sample_count,
                         const std::function<double(const std::vector<std::size_t>&, Rng&)>& train_step,
                         const std::function<std::vector<double>()>& validate, const TrainConfig& cfg);

/// Fits the coarse net alone on format-1 targets over the coarse grids.
TrainResult pretrain_lowres(CascadeModel& model, const std::vector<CaseData>& train_cases,
                            const std::vector<CaseData>& val_cases, const TrainConfig& cfg);

/// Fits the cascade (or the single-resolution net) on format-2 targets at the
/// fine grid, validating with tiled inference.
TrainResult train_cascade(CascadeModel& model, const std::vector<CaseData>& train_cases,
                          const std::vector<CaseData>& val_cases, const TrainConfig& cfg);

/// Validation / evaluation labels: tiled prediction then post-processing.
SegmentationResult segment(const CascadeModel& model, const CaseData& c, const PostprocessConfig& post,
                           int workers = 1);

void write_history_csv(const TrainResult& r, const std::filesystem::path& path);

}  // namespace mrseg
