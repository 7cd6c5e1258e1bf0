#pragma once
// Direct loop implementations of the network primitives and losses, plus
// central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

/// Valid cubic convolution, input [ci, d, h, w], kernel [co, ci, k, k, k].
inline std::vector<double> conv3d(const std::vector<double>& in, int ci, int d, int h, int w,
                                  const std::vector<double>& ker, const std::vector<double>& bias, int co, int k) {
  const int od = d - k + 1, oh = h - k + 1, ow = w - k + 1;
  std::vector<double> out(static_cast<std::size_t>(co) * od * oh * ow);
  for (int o = 0; o < co; ++o)
    for (int z = 0; z < od; ++z)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double s = bias[o];
          for (int c = 0; c < ci; ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b)
                for (int e = 0; e < k; ++e)
                  s += ker[((((o * ci) + c) * k + a) * k + b) * k + e] *
                       in[((static_cast<std::size_t>(c) * d + z + a) * h + y + b) * w + x + e];
          out[((static_cast<std::size_t>(o) * od + z) * oh + y) * ow + x] = s;
        }
  return out;
}

/// Weighted per-voxel cross-entropy, probs [C, n] flattened.
inline std::vector<double> voxel_ce(const std::vector<double>& probs, const std::vector<int>& target,
                                    const std::vector<double>& w) {
  const std::size_t n = target.size();
  std::vector<double> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = -w[i] * std::log(std::max(probs[target[i] * n + i], 1e-12));
  return l;
}

inline double topk_mean(std::vector<double> l, double k) {
  std::sort(l.begin(), l.end(), std::greater<>());
  const auto m = static_cast<std::size_t>(std::max(1.0, std::ceil(k * static_cast<double>(l.size()) - 1e-9)));
  return std::accumulate(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(m), 0.0) / static_cast<double>(m);
}

inline double soft_dice_loss(const std::vector<double>& probs, const std::vector<int>& target, int classes, double eps) {
  const std::size_t n = target.size();
  double acc = 0.0;
  for (int c = 1; c < classes; ++c) {
    double inter = 0.0, ps = 0.0, ys = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = probs[c * n + i];
      const double y = target[i] == c ? 1.0 : 0.0;
      inter += p * y;
      ps += p;
      ys += y;
    }
    acc += (2.0 * inter + eps) / (ps + ys + eps);
  }
  return 1.0 - acc / (classes - 1);
}

/// Central differences of f at x, eps step.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

}  // namespace oracle
