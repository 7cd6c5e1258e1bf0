#include "mrseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrseg/errors.hpp"

namespace mrseg {

namespace {

constexpr double kProbFloor = 1e-12;

void check_pair(const Tensor& probs, const Tensor& target) {
  const auto& ps = probs.shape();
  const auto& ts = target.shape();
  if (ps.size() != 4 || ts.size() != 4 || ts[0] != 1 || ps[1] != ts[1] || ps[2] != ts[2] || ps[3] != ts[3]) {
    throw ShapeError("probabilities " + shape_str(ps) + " do not match target " + shape_str(ts));
  }
}

int label_at(double t, int classes) {
  const int k = static_cast<int>(t);
  if (t != k || k < 0 || k >= classes) throw LabelError("target label " + std::to_string(t) + " out of range");
  return k;
}

}  // namespace

void LossConfig::validate() const {
  if (!(topk_fraction > 0.0 && topk_fraction <= 1.0)) {
    throw InvalidK("top-k fraction must lie in (0, 1], got " + std::to_string(topk_fraction));
  }
  if (dice_eps <= 0.0) throw ConfigError("dice smoothing must be positive");
  if (alpha < 0.0 || gamma < 0.0) throw ConfigError("loss weights must be non-negative");
}

Tensor dice_loss(const Tensor& probs, const Tensor& target, double eps) {
  check_pair(probs, target);
  const int C = probs.dim(0);
  if (C < 2) throw ShapeError("dice loss needs a background and at least one foreground class");
  const std::size_t n = target.size();
  auto p = probs.values();
  auto t = target.values();
  std::vector<int> lab(n);
  for (std::size_t i = 0; i < n; ++i) lab[i] = label_at(t[i], C);

  std::vector<double> inter(C, 0.0), denom(C, 0.0);
  for (int c = 1; c < C; ++c) {
    const double* pc = p.data() + static_cast<std::size_t>(c) * n;
    double in = 0.0, ps = 0.0, ys = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ps += pc[i];
      if (lab[i] == c) {
        in += pc[i];
        ys += 1.0;
      }
    }
    inter[c] = in;
    denom[c] = ps + ys + eps;
  }
  double mean_dice = 0.0;
  for (int c = 1; c < C; ++c) mean_dice += (2.0 * inter[c] + eps) / denom[c];
  mean_dice /= (C - 1);

  return make_op({1}, {1.0 - mean_dice}, {probs},
                 [lab = std::move(lab), inter, denom, eps, C, n](std::span<const double> g, GradSinks& sinks) {
                   if (sinks[0].empty()) return;
                   const double scale = -g[0] / (C - 1);
                   for (int c = 1; c < C; ++c) {
                     double* gc = sinks[0].data() + static_cast<std::size_t>(c) * n;
                     const double num = 2.0 * inter[c] + eps;
                     const double d2 = denom[c] * denom[c];
                     // d/dp_i of num/denom = (2 y_i denom - num) / denom^2
                     const double off = -num / d2;
                     const double on = (2.0 * denom[c] - num) / d2;
                     for (std::size_t i = 0; i < n; ++i) gc[i] += scale * (lab[i] == c ? on : off);
                   }
                 });
}

std::vector<double> weighted_ce_voxels(const Tensor& probs, const Tensor& target, const Tensor& weights) {
  check_pair(probs, target);
  if (weights.shape() != target.shape()) throw ShapeError("weights do not match target");
  const int C = probs.dim(0);
  const std::size_t n = target.size();
  auto p = probs.values();
  auto t = target.values();
  auto w = weights.values();
  std::vector<double> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = label_at(t[i], C);
    l[i] = -w[i] * std::log(std::max(p[static_cast<std::size_t>(c) * n + i], kProbFloor));
  }
  return l;
}

std::size_t topk_count(std::size_t n, double k) {
  if (!(k > 0.0 && k <= 1.0)) throw InvalidK("top-k fraction must lie in (0, 1], got " + std::to_string(k));
  // tolerance keeps exact fractions such as 0.5 * 4 from rounding up
  const double m = std::ceil(k * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(m, 1.0)), 1, n);
}

Tensor topk_weighted_ce(const Tensor& probs, const Tensor& target, const Tensor& weights, double k) {
  const std::size_t m = topk_count(target.size(), k);
  auto l = weighted_ce_voxels(probs, target, weights);
  const std::size_t n = l.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto cmp = [&](std::size_t a, std::size_t b) { return l[a] > l[b] || (l[a] == l[b] && a < b); };
  if (m < n) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), cmp);
    order.resize(m);
  }
  std::sort(order.begin(), order.end(), cmp);
  if (recording_branches() && m < n) {
    auto chosen = order;
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen) record_branch(i);
  }
  double s = 0.0;
  for (std::size_t i : order) s += l[i];
  const double value = s / static_cast<double>(m);

  return make_op({1}, {value}, {probs, weights},
                 [probs, target, weights, order = std::move(order), m, n](std::span<const double> g, GradSinks& sinks) {
                   auto p = probs.values();
                   auto t = target.values();
                   auto w = weights.values();
                   const double scale = g[0] / static_cast<double>(m);
                   for (std::size_t i : order) {
                     const auto c = static_cast<std::size_t>(t[i]);
                     const double pi = p[c * n + i];
                     if (!sinks[0].empty() && pi > kProbFloor) sinks[0][c * n + i] += -scale * w[i] / pi;
                     if (sinks.size() > 1 && !sinks[1].empty()) sinks[1][i] += -scale * std::log(std::max(pi, kProbFloor));
                   }
                 });
}

Tensor combined_loss(const Tensor& probs, const Tensor& target, const Tensor& weights, const LossConfig& cfg) {
  cfg.validate();
  return add(scale(dice_loss(probs, target, cfg.dice_eps), cfg.alpha),
             scale(topk_weighted_ce(probs, target, weights, cfg.topk_fraction), cfg.gamma));
}

}  // namespace mrseg
