#pragma once

#include <string>
#include <vector>

#include "mrseg/unet.hpp"

namespace mrseg {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One bias-corrected update of every trainable parameter that holds a
  /// gradient. Moments are tracked by position, so every call must pass the
  /// same list. Throws NumericsError before touching anything when a gradient
  /// is non-finite.
  void step(const std::vector<Parameter*>& params);

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  struct Moments {
    std::vector<double> m, v;
  };
  const Moments* moments(std::size_t index) const;

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Moments> state_;
};

void zero_grads(const std::vector<Parameter*>& params);

/// Tracks validation scores; an epoch counts as an improvement only when it
/// beats the best so far strictly.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience = 10) : patience_(patience) {}

  /// Records the score of the given 1-based epoch. Returns true when training
  /// should stop.
  bool update(int epoch, double score);

  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }
  int since_best() const { return since_best_; }
  bool improved() const { return improved_; }
  bool stopped() const { return since_best_ >= patience_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_ = -1.0;
  int since_best_ = 0;
  bool improved_ = false;
};

}  // namespace mrseg
