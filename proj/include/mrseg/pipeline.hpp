#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrseg/augment.hpp"
#include "mrseg/eval.hpp"
#include "mrseg/infer.hpp"
#include "mrseg/loss.hpp"
#include "mrseg/optim.hpp"
#include "mrseg/phantom.hpp"
#include "mrseg/train.hpp"
#include "mrseg/unet.hpp"

namespace mrseg {

/// Every tunable of the pipeline. Defaults follow the published method
/// wherever it states a value; the rest are documented choices.
struct PipelineConfig {
  // preprocessing
  float clip_lo = -500.0f, clip_hi = 400.0f;
  double fine_spacing = 1.0;  // mm
  int ratio = 4;              // coarse / fine spacing

  // networks
  UNetConfig low{16, 4, 1, 2, 108, 0.0, false};
  UNetConfig high{32, 4, 2, 3, 108, 0.0, false};
  bool multires = true;
  bool spatial_dropout = true;
  double dropout_rate = 0.1;

  // loss and optimisation
  LossConfig loss;
  std::vector<double> class_weights{0.05, 0.10, 0.99};
  std::vector<double> low_class_weights{0.05, 0.10};
  AdamConfig adam;
  int batch_size = 2;
  int stride = 10;
  int patience = 10;
  int max_epochs = 200;
  long max_steps = 0;
  int patches_per_epoch = 0;
  bool freeze_lowres = true;
  double low_loss_weight = 0.0;
  double pretrain_lr = 1e-5;
  int pretrain_max_epochs = 200;
  long pretrain_max_steps = 0;

  AugmentConfig augment;

  // post-processing
  PostprocessConfig post;
  int connectivity = 26;

  EvalOptions eval;

  // phantom cohort
  int phantom_count = 10;
  int phantom_size = 48;
  double phantom_spacing = 1.0;
  double phantom_abnormality_fraction = 0.5;
  double phantom_test_fraction = 0.2;

  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

/// `key = value` lines, `#` comments. ConfigError on unknown keys or
/// malformed values; the result is validated.
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

/// Applies one override of the form `key=value`.
void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const PipelineConfig& cfg, const std::string& key);
const std::vector<std::string>& config_keys();

/// All keys with their resolved values, in registry order; parsing the echo
/// reproduces the configuration exactly.
std::string resolved_echo(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

/// Keys whose values differ.
std::vector<std::string> config_diff(const PipelineConfig& a, const PipelineConfig& b);

/// Ablation presets E5 (plain single-input U-Net) to E1 (every module on),
/// each adding one module to the previous one. Non-module settings come from
/// `base`.
PipelineConfig ablation_preset(const std::string& name, const PipelineConfig& base = {});
inline const std::vector<std::string> kPresets{"E5", "E4", "E3", "E2", "E1"};

struct EnabledModules {
  bool multires, augmentation, topk, dropout;
};
EnabledModules enabled_modules(const PipelineConfig& cfg);

CascadeConfig cascade_config(const PipelineConfig& cfg);
TrainConfig train_config(const PipelineConfig& cfg);
TrainConfig pretrain_config(const PipelineConfig& cfg);

}  // namespace mrseg

namespace mrseg {

struct PresetRun {
  std::string name;
  TrainResult pretrain;
  TrainResult train;
  double val_merged_dice = 0.0;
  std::vector<double> val_class_dice;  // parenchyma, abnormality
  double seconds = 0.0;
};

/// Builds the model for `cfg`, pretrains the coarse net when the cascade is
/// enabled, trains, and scores the post-processed validation predictions.
PresetRun run_pipeline(const std::string& name, const PipelineConfig& cfg, const std::vector<CaseData>& train_cases,
                       const std::vector<CaseData>& val_cases, std::ostream* log = nullptr,
                       CascadeModel* trained = nullptr);

}  // namespace mrseg
