#include "mrseg/optim.hpp"

#include <cmath>

#include "mrseg/errors.hpp"

namespace mrseg {

void Adam::step(const std::vector<Parameter*>& params) {
  for (const auto* p : params) {
    if (!p->trainable || !p->value.has_grad()) continue;
    for (double g : p->value.grad()) {
      if (!std::isfinite(g)) throw NumericsError("non-finite gradient in " + p->name);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  if (state_.size() < params.size()) state_.resize(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    if (!p->trainable || !p->value.has_grad()) continue;
    auto g = p->value.grad();
    auto w = p->value.mutable_values();
    auto& s = state_[k];
    if (s.m.empty()) {
      s.m.assign(w.size(), 0.0);
      s.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

const Adam::Moments* Adam::moments(std::size_t index) const {
  return index < state_.size() && !state_[index].m.empty() ? &state_[index] : nullptr;
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->value.zero_grad();
}

bool EarlyStopper::update(int epoch, double score) {
  improved_ = best_epoch_ == 0 || score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  return stopped();
}

}  // namespace mrseg
