#include "mrseg/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "mrseg/checkpoint.hpp"
#include "mrseg/errors.hpp"

namespace mrseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string fmt(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
template <typename I>
std::string fmt_int(I v) {
  return std::to_string(v);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("bad value '" + text + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("bad boolean '" + text + "' for " + key);
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  return out;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

struct Key {
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename T, typename F>
Key field(F ref) {
  Key k;
  k.get = [ref](const PipelineConfig& c) {
    const T& v = ref(const_cast<PipelineConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
    else if constexpr (std::is_same_v<T, double> || std::is_same_v<T, float>) return fmt(v);
    else if constexpr (std::is_same_v<T, std::vector<double>>) return fmt_list(v);
    else return fmt_int(v);
  };
  k.set = [ref](PipelineConfig& c, const std::string& text) {
    T& v = ref(c);
    if constexpr (std::is_same_v<T, bool>) v = parse_bool("value", text);
    else if constexpr (std::is_same_v<T, std::vector<double>>) v = parse_list("list", text);
    else v = parse_number<T>("value", text);
  };
  return k;
}

struct Registry {
  std::vector<std::string> order;
  std::map<std::string, Key> keys;

  void add(const std::string& name, Key k) {
    order.push_back(name);
    keys.emplace(name, std::move(k));
  }
};

#define MRSEG_KEY(reg, name, T, expr) reg.add(name, field<T>([](PipelineConfig& c) -> T& { return expr; }))

const Registry& registry() {
  static const Registry reg = [] {
    Registry r;
    MRSEG_KEY(r, "clip.lo", float, c.clip_lo);
    MRSEG_KEY(r, "clip.hi", float, c.clip_hi);
    MRSEG_KEY(r, "spacing.fine", double, c.fine_spacing);
    MRSEG_KEY(r, "spacing.ratio", int, c.ratio);
    MRSEG_KEY(r, "low.base_filters", int, c.low.base_filters);
    MRSEG_KEY(r, "low.levels", int, c.low.levels);
    MRSEG_KEY(r, "low.input_size", int, c.low.input_size);
    MRSEG_KEY(r, "low.channel_norm", bool, c.low.channel_norm);
    MRSEG_KEY(r, "high.base_filters", int, c.high.base_filters);
    MRSEG_KEY(r, "high.levels", int, c.high.levels);
    MRSEG_KEY(r, "high.input_size", int, c.high.input_size);
    MRSEG_KEY(r, "high.channel_norm", bool, c.high.channel_norm);
    MRSEG_KEY(r, "model.multires", bool, c.multires);
    MRSEG_KEY(r, "model.spatial_dropout", bool, c.spatial_dropout);
    MRSEG_KEY(r, "model.dropout_rate", double, c.dropout_rate);
    MRSEG_KEY(r, "loss.alpha", double, c.loss.alpha);
    MRSEG_KEY(r, "loss.gamma", double, c.loss.gamma);
    MRSEG_KEY(r, "loss.topk", double, c.loss.topk_fraction);
    MRSEG_KEY(r, "loss.dice_eps", double, c.loss.dice_eps);
    MRSEG_KEY(r, "loss.class_weights", std::vector<double>, c.class_weights);
    MRSEG_KEY(r, "loss.low_class_weights", std::vector<double>, c.low_class_weights);
    MRSEG_KEY(r, "optim.lr", double, c.adam.lr);
    MRSEG_KEY(r, "optim.beta1", double, c.adam.beta1);
    MRSEG_KEY(r, "optim.beta2", double, c.adam.beta2);
    MRSEG_KEY(r, "optim.eps", double, c.adam.eps);
    MRSEG_KEY(r, "train.batch_size", int, c.batch_size);
    MRSEG_KEY(r, "train.stride", int, c.stride);
    MRSEG_KEY(r, "train.patience", int, c.patience);
    MRSEG_KEY(r, "train.max_epochs", int, c.max_epochs);
    MRSEG_KEY(r, "train.max_steps", long, c.max_steps);
    MRSEG_KEY(r, "train.patches_per_epoch", int, c.patches_per_epoch);
    MRSEG_KEY(r, "train.freeze_lowres", bool, c.freeze_lowres);
    MRSEG_KEY(r, "train.low_loss_weight", double, c.low_loss_weight);
    MRSEG_KEY(r, "pretrain.lr", double, c.pretrain_lr);
    MRSEG_KEY(r, "pretrain.max_epochs", int, c.pretrain_max_epochs);
    MRSEG_KEY(r, "pretrain.max_steps", long, c.pretrain_max_steps);
    MRSEG_KEY(r, "augment.enabled", bool, c.augment.enabled);
    MRSEG_KEY(r, "augment.probability", double, c.augment.probability);
    MRSEG_KEY(r, "augment.max_transforms", int, c.augment.max_transforms);
    MRSEG_KEY(r, "augment.scale_min", double, c.augment.scale_min);
    MRSEG_KEY(r, "augment.scale_max", double, c.augment.scale_max);
    MRSEG_KEY(r, "augment.max_rotation_deg", double, c.augment.max_rotation_deg);
    MRSEG_KEY(r, "augment.sigma_min", double, c.augment.sigma_min);
    MRSEG_KEY(r, "augment.sigma_max", double, c.augment.sigma_max);
    MRSEG_KEY(r, "augment.max_shift_hu", double, c.augment.max_shift_hu);
    MRSEG_KEY(r, "augment.control_points", int, c.augment.control_points);
    MRSEG_KEY(r, "augment.max_displacement", double, c.augment.max_displacement);
    MRSEG_KEY(r, "post.gate", bool, c.post.gate);
    MRSEG_KEY(r, "post.threshold", double, c.post.threshold);
    MRSEG_KEY(r, "post.dilation_iterations", int, c.post.dilation_iterations);
    MRSEG_KEY(r, "post.connectivity", int, c.connectivity);
    MRSEG_KEY(r, "post.remove_detached", bool, c.post.remove_detached);
    MRSEG_KEY(r, "eval.abnormality_na_when_absent", bool, c.eval.abnormality_na_when_absent);
    MRSEG_KEY(r, "eval.ci_level", double, c.eval.ci_level);
    MRSEG_KEY(r, "eval.resamples", int, c.eval.resamples);
    MRSEG_KEY(r, "phantom.count", int, c.phantom_count);
    MRSEG_KEY(r, "phantom.size", int, c.phantom_size);
    MRSEG_KEY(r, "phantom.spacing", double, c.phantom_spacing);
    MRSEG_KEY(r, "phantom.abnormality_fraction", double, c.phantom_abnormality_fraction);
    MRSEG_KEY(r, "phantom.test_fraction", double, c.phantom_test_fraction);
    MRSEG_KEY(r, "seed", std::uint64_t, c.seed);
    MRSEG_KEY(r, "workers", int, c.workers);
    return r;
  }();
  return reg;
}

#undef MRSEG_KEY

}  // namespace

void PipelineConfig::validate() const {
  if (!(clip_lo < clip_hi)) throw ConfigError("clip.lo must be below clip.hi");
  if (fine_spacing <= 0.0) throw ConfigError("spacing.fine must be positive");
  if (ratio < 1) throw ConfigError("spacing.ratio must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model.dropout_rate must lie in [0, 1)");
  if (low_loss_weight < 0.0) throw ConfigError("train.low_loss_weight must be non-negative");
  loss.validate();
  if (class_weights.size() != 3) throw ConfigError("loss.class_weights needs three values");
  if (low_class_weights.size() != 2) throw ConfigError("loss.low_class_weights needs two values");
  if (adam.lr <= 0.0 || pretrain_lr <= 0.0) throw ConfigError("learning rates must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (batch_size < 1 || stride < 1 || patience < 1 || max_epochs < 1 || pretrain_max_epochs < 1) {
    throw ConfigError("batch size, stride, patience and epoch limits must be positive");
  }
  if (!(augment.probability >= 0.0 && augment.probability <= 1.0)) throw ConfigError("augment.probability must lie in [0, 1]");
  if (augment.max_transforms < 1) throw ConfigError("augment.max_transforms must be positive");
  if (connectivity != 26) throw ConfigError("post.connectivity: only 26-connectivity is supported");
  if (post.dilation_iterations < 0) throw ConfigError("post.dilation_iterations must be non-negative");
  if (phantom_count < 3) throw ConfigError("phantom.count must be at least 3");
  if (phantom_size < 8) throw ConfigError("phantom.size too small");
  if (workers < 1) throw ConfigError("workers must be positive");
}

void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  const auto& reg = registry();
  auto it = reg.keys.find(key);
  if (it == reg.keys.end()) throw ConfigError("unknown key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ConfigError&) {
    throw ConfigError("bad value '" + value + "' for " + key);
  }
}

std::string get_config_value(const PipelineConfig& cfg, const std::string& key) {
  const auto& reg = registry();
  auto it = reg.keys.find(key);
  if (it == reg.keys.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.get(cfg);
}

const std::vector<std::string>& config_keys() { return registry().order; }

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
  std::stringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set_config_value(base, key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(n) + ": " + std::string(e.what()).substr(std::string("ConfigError: ").size()));
    }
  }
  base.validate();
  return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string resolved_echo(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& k : registry().order) out += k + " = " + registry().keys.at(k).get(cfg) + "\n";
  return out;
}

std::string config_hash(const PipelineConfig& cfg) { return fnv1a_hex(resolved_echo(cfg)); }

std::vector<std::string> config_diff(const PipelineConfig& a, const PipelineConfig& b) {
  std::vector<std::string> out;
  for (const auto& k : registry().order) {
    if (registry().keys.at(k).get(a) != registry().keys.at(k).get(b)) out.push_back(k);
  }
  return out;
}

PipelineConfig ablation_preset(const std::string& name, const PipelineConfig& base) {
  const auto it = std::find(kPresets.begin(), kPresets.end(), name);
  if (it == kPresets.end()) throw ConfigError("unknown preset '" + name + "' (expected E5, E4, E3, E2 or E1)");
  const auto level = it - kPresets.begin();  // 0 = E5 ... 4 = E1
  PipelineConfig c = base;
  c.multires = level >= 1;
  c.augment.enabled = level >= 2;
  c.loss.topk_fraction = level >= 3 ? LossConfig{}.topk_fraction : 1.0;
  c.spatial_dropout = level >= 4;
  c.validate();
  return c;
}

EnabledModules enabled_modules(const PipelineConfig& cfg) {
  return {cfg.multires, cfg.augment.enabled, cfg.loss.topk_fraction < 1.0, cfg.spatial_dropout && cfg.dropout_rate > 0.0};
}

CascadeConfig cascade_config(const PipelineConfig& cfg) {
  CascadeConfig c;
  c.low = cfg.low;
  c.high = cfg.high;
  c.low.in_channels = 1;
  c.low.out_classes = 2;
  c.high.out_classes = 3;
  c.high.in_channels = cfg.multires ? 2 : 1;
  const double rate = cfg.spatial_dropout ? cfg.dropout_rate : 0.0;
  c.low.dropout_rate = c.high.dropout_rate = rate;
  c.resolution_ratio = cfg.multires ? cfg.ratio : 1;
  c.multires = cfg.multires;
  return c;
}

TrainConfig train_config(const PipelineConfig& cfg) {
  TrainConfig t;
  t.loss = cfg.loss;
  t.adam = cfg.adam;
  t.augment = cfg.augment;
  t.augment.clip_lo = cfg.clip_lo;
  t.augment.clip_hi = cfg.clip_hi;
  t.class_weights = cfg.class_weights;
  t.low_class_weights = cfg.low_class_weights;
  t.batch_size = cfg.batch_size;
  t.patience = cfg.patience;
  t.max_epochs = cfg.max_epochs;
  t.max_steps = cfg.max_steps;
  t.patches_per_epoch = cfg.patches_per_epoch;
  t.stride = cfg.stride;
  t.seed = cfg.seed;
  t.workers = cfg.workers;
  t.freeze_lowres = cfg.freeze_lowres;
  t.low_loss_weight = cfg.low_loss_weight;
  t.config_hash = config_hash(cfg);
  return t;
}

TrainConfig pretrain_config(const PipelineConfig& cfg) {
  TrainConfig t = train_config(cfg);
  t.adam.lr = cfg.pretrain_lr;
  t.max_epochs = cfg.pretrain_max_epochs;
  t.max_steps = cfg.pretrain_max_steps;
  t.seed = cfg.seed ^ 0x5bd1e995ull;
  return t;
}

}  // namespace mrseg

namespace mrseg {

PresetRun run_pipeline(const std::string& name, const PipelineConfig& cfg, const std::vector<CaseData>& train_cases,
                       const std::vector<CaseData>& val_cases, std::ostream* log, CascadeModel* trained) {
  const auto t0 = std::chrono::steady_clock::now();
  PresetRun run;
  run.name = name;
  Rng rng(cfg.seed);
  CascadeModel model(cascade_config(cfg), rng);
  if (model.multires()) {
    TrainConfig pc = pretrain_config(cfg);
    pc.log = log;
    if (log) *log << "[" << name << "] pretraining coarse net\n";
    run.pretrain = pretrain_lowres(model, train_cases, val_cases, pc);
  }
  TrainConfig tc = train_config(cfg);
  tc.log = log;
  if (log) *log << "[" << name << "] training\n";
  run.train = train_cascade(model, train_cases, val_cases, tc);
  std::vector<double> merged, per_class(2, 0.0);
  for (const auto& c : val_cases) {
    const auto seg = segment(model, c, cfg.post, cfg.workers);
    merged.push_back(dice(seg.format1, merge_format1(c.high_labels)));
    const auto d = foreground_dice(seg.labels, c.high_labels, 3);
    for (std::size_t k = 0; k < 2; ++k) per_class[k] += d[k] / static_cast<double>(val_cases.size());
  }
  run.val_merged_dice = std::accumulate(merged.begin(), merged.end(), 0.0) / static_cast<double>(merged.size());
  run.val_class_dice = per_class;
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (trained) *trained = std::move(model);
  return run;
}

}  // namespace mrseg
