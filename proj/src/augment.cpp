#include "mrseg/augment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "mrseg/preprocess.hpp"

namespace mrseg {

int AugmentPlan::count() const { return std::popcount(applied); }

std::vector<unsigned> legal_transform_sets(int max_transforms) {
  const unsigned elastic = static_cast<unsigned>(Transform::Elastic);
  const unsigned needs = static_cast<unsigned>(Transform::Blur) | static_cast<unsigned>(Transform::Intensity);
  std::vector<unsigned> sets;
  for (unsigned m = 1; m < 32; ++m) {
    if (std::popcount(m) > max_transforms) continue;
    if ((m & elastic) && (m & needs) != needs) continue;
    sets.push_back(m);
  }
  return sets;
}

AugmentPlan draw_plan(Rng& rng, const AugmentConfig& cfg) {
  AugmentPlan plan;
  if (!cfg.enabled || !rng.bernoulli(cfg.probability)) return plan;
  static const auto sets3 = legal_transform_sets(3);
  const auto sets = cfg.max_transforms == 3 ? sets3 : legal_transform_sets(cfg.max_transforms);
  plan.applied = sets[rng.below(sets.size())];

  if (plan.has(Transform::Scale)) plan.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  if (plan.has(Transform::Rotate)) {
    // one of the three axis planes, or one of the three pairs
    static constexpr unsigned kPlaneSets[6] = {1, 2, 4, 3, 5, 6};
    const unsigned planes = kPlaneSets[rng.below(6)];
    for (int a = 0; a < 3; ++a) {
      if (planes & (1u << a)) plan.rotation_deg[a] = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    }
  }
  if (plan.has(Transform::Blur)) plan.blur_sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max);
  if (plan.has(Transform::Intensity)) plan.intensity_shift = rng.uniform(-cfg.max_shift_hu, cfg.max_shift_hu);
  if (plan.has(Transform::Elastic)) {
    plan.control_points = cfg.control_points;
    const auto n = static_cast<std::size_t>(cfg.control_points);
    plan.displacements.resize(n * n * n * 3);
    for (auto& d : plan.displacements) d = rng.uniform(-cfg.max_displacement, cfg.max_displacement);
  }
  return plan;
}

namespace {

using V3 = std::array<double, 3>;  // (x, y, z)

// Position of a cube in the fine frame whose origin is the fine tile corner.
struct CubeFrame {
  int n = 0;
  V3 start{0, 0, 0};  // voxel-edge coordinate of voxel 0, fine units
  double spacing = 1.0;
};

double bspline(int k, double t) {
  switch (k) {
    case 0: return (1 - t) * (1 - t) * (1 - t) / 6.0;
    case 1: return (3 * t * t * t - 6 * t * t + 4) / 6.0;
    case 2: return (-3 * t * t * t + 3 * t * t + 3 * t + 1) / 6.0;
    default: return t * t * t / 6.0;
  }
}

class Warp {
 public:
  Warp(const AugmentPlan& plan, const PairGeometry& g) : plan_(plan) {
    centre_ = {0.5 * g.high_output, 0.5 * g.high_output, 0.5 * g.high_output};
    const double deg = std::numbers::pi / 180.0;
    const double ax = plan.rotation_deg[0] * deg, ay = plan.rotation_deg[1] * deg, az = plan.rotation_deg[2] * deg;
    const double cx = std::cos(ax), sx = std::sin(ax), cy = std::cos(ay), sy = std::sin(ay), cz = std::cos(az),
                 sz = std::sin(az);
    // R = Rz * Ry * Rx
    const double r[3][3] = {{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
                            {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
                            {-sy, cy * sx, cy * cx}};
    const double inv_scale = 1.0 / plan.scale;
    // source = centre + R^T (u - centre) / scale
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m_[i][j] = r[j][i] * inv_scale;
    const int half = (g.high_input - g.high_output) / 2;
    grid_start_ = -half;
    grid_step_ = plan.control_points > 1 ? static_cast<double>(g.high_input) / (plan.control_points - 1) : 1.0;
    elastic_ = plan.has(Transform::Elastic) && plan.control_points > 0;
  }

  V3 source(const V3& u) const {
    V3 d{u[0] - centre_[0], u[1] - centre_[1], u[2] - centre_[2]};
    V3 s;
    for (int i = 0; i < 3; ++i) s[i] = centre_[i] + m_[i][0] * d[0] + m_[i][1] * d[1] + m_[i][2] * d[2];
    if (elastic_) {
      const V3 e = displacement(u);
      for (int i = 0; i < 3; ++i) s[i] += e[i];
    }
    return s;
  }

 private:
  V3 displacement(const V3& u) const {
    const int G = plan_.control_points;
    int base[3];
    double w[3][4];
    for (int a = 0; a < 3; ++a) {
      const double gpos = (u[a] - grid_start_) / grid_step_;
      base[a] = static_cast<int>(std::floor(gpos));
      const double t = gpos - base[a];
      for (int k = 0; k < 4; ++k) w[a][k] = bspline(k, t);
    }
    V3 out{0, 0, 0};
    for (int c = 0; c < 4; ++c) {
      const int kz = std::clamp(base[2] - 1 + c, 0, G - 1);
      for (int b = 0; b < 4; ++b) {
        const int ky = std::clamp(base[1] - 1 + b, 0, G - 1);
        const double wyz = w[2][c] * w[1][b];
        for (int a = 0; a < 4; ++a) {
          const int kx = std::clamp(base[0] - 1 + a, 0, G - 1);
          const double wt = wyz * w[0][a];
          const std::size_t idx = ((static_cast<std::size_t>(kz) * G + ky) * G + kx) * 3;
          for (int i = 0; i < 3; ++i) out[i] += wt * plan_.displacements[idx + i];
        }
      }
    }
    return out;
  }

  const AugmentPlan& plan_;
  V3 centre_;
  double m_[3][3];
  double grid_start_ = 0, grid_step_ = 1;
  bool elastic_ = false;
};

inline std::size_t cube_idx(int n, int x, int y, int z) {
  return (static_cast<std::size_t>(z) * n + y) * n + x;
}

double cubic_at(std::span<const double> v, int n, const V3& p) {
  int idx[3][4];
  double w[3][4];
  for (int a = 0; a < 3; ++a) {
    const int base = static_cast<int>(std::floor(p[a]));
    const double f = p[a] - base;
    for (int k = 0; k < 4; ++k) {
      idx[a][k] = std::clamp(base - 1 + k, 0, n - 1);
      w[a][k] = catmull_rom(f - (k - 1));
    }
  }
  double acc = 0.0;
  for (int c = 0; c < 4; ++c)
    for (int b = 0; b < 4; ++b) {
      const double wyz = w[2][c] * w[1][b];
      if (wyz == 0.0) continue;
      for (int a = 0; a < 4; ++a) acc += wyz * w[0][a] * v[cube_idx(n, idx[0][a], idx[1][b], idx[2][c])];
    }
  return acc;
}

std::size_t nearest_at(int n, const V3& p) {
  int i[3];
  for (int a = 0; a < 3; ++a) i[a] = std::clamp(static_cast<int>(std::floor(p[a] + 0.5)), 0, n - 1);
  return cube_idx(n, i[0], i[1], i[2]);
}

template <typename Fn>
void for_each_voxel(const CubeFrame& f, const Warp& warp, Fn&& fn) {
  std::size_t o = 0;
  for (int z = 0; z < f.n; ++z)
    for (int y = 0; y < f.n; ++y)
      for (int x = 0; x < f.n; ++x, ++o) {
        const V3 u{f.start[0] + (x + 0.5) * f.spacing, f.start[1] + (y + 0.5) * f.spacing,
                   f.start[2] + (z + 0.5) * f.spacing};
        const V3 s = warp.source(u);
        const V3 p{(s[0] - f.start[0]) / f.spacing - 0.5, (s[1] - f.start[1]) / f.spacing - 0.5,
                   (s[2] - f.start[2]) / f.spacing - 0.5};
        fn(o, p);
      }
}

Tensor warp_intensity(const Tensor& t, const CubeFrame& f, const Warp& warp) {
  auto v = t.values();
  std::vector<double> out(v.size());
  for_each_voxel(f, warp, [&](std::size_t o, const V3& p) { out[o] = cubic_at(v, f.n, p); });
  return Tensor(t.shape(), std::move(out));
}

// Nearest-neighbour warp of a label cube and its companion weight cube using
// the same source index.
std::pair<Tensor, Tensor> warp_labels(const Tensor& labels, const Tensor& weights, const CubeFrame& f,
                                      const Warp& warp) {
  auto lv = labels.values();
  auto wv = weights.values();
  std::vector<double> lo(lv.size()), wo(wv.size());
  for_each_voxel(f, warp, [&](std::size_t o, const V3& p) {
    const std::size_t i = nearest_at(f.n, p);
    lo[o] = lv[i];
    wo[o] = wv[i];
  });
  return {Tensor(labels.shape(), std::move(lo)), Tensor(weights.shape(), std::move(wo))};
}

Tensor shift_and_clip(const Tensor& t, double shift, double lo, double hi) {
  auto v = t.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] + shift, lo, hi);
  return Tensor(t.shape(), std::move(out));
}

}  // namespace

std::vector<double> gaussian_blur(std::span<const double> cube, int n, double sigma) {
  if (sigma <= 0.0) return {cube.begin(), cube.end()};
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (auto& w : k) w /= s;
  std::vector<double> cur(cube.begin(), cube.end()), next(cur.size());
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            int c[3] = {x, y, z};
            c[axis] = std::clamp(c[axis] + i, 0, n - 1);
            acc += k[i + radius] * cur[cube_idx(n, c[0], c[1], c[2])];
          }
          next[cube_idx(n, x, y, z)] = acc;
        }
    std::swap(cur, next);
  }
  return cur;
}

PatchSample apply_plan(const PatchSample& sample, const AugmentPlan& plan, const PairGeometry& g,
                       const AugmentConfig& cfg) {
  if (plan.identity()) return sample;
  PatchSample out = sample;
  const bool geometric = plan.has(Transform::Scale) || plan.has(Transform::Rotate) || plan.has(Transform::Elastic);
  const int half = (g.high_input - g.high_output) / 2;

  if (geometric) {
    const Warp warp(plan, g);
    out.high_in = warp_intensity(sample.high_in, CubeFrame{g.high_input, {-1.0 * half, -1.0 * half, -1.0 * half}, 1.0}, warp);
    std::tie(out.target, out.weights) =
        warp_labels(sample.target, sample.weights, CubeFrame{g.high_output, {0, 0, 0}, 1.0}, warp);
    if (sample.low_in.defined()) {
      // coarse output start in the fine frame, per axis (x, y, z)
      const V3 low_out_start{static_cast<double>(sample.mask_offset[2] - half),
                             static_cast<double>(sample.mask_offset[1] - half),
                             static_cast<double>(sample.mask_offset[0] - half)};
      const double low_half = 0.5 * (g.low_input - g.low_output) * g.ratio;
      CubeFrame low_in{g.low_input,
                       {low_out_start[0] - low_half, low_out_start[1] - low_half, low_out_start[2] - low_half},
                       static_cast<double>(g.ratio)};
      out.low_in = warp_intensity(sample.low_in, low_in, warp);
      if (sample.low_target.defined()) {
        std::tie(out.low_target, out.low_weights) = warp_labels(
            sample.low_target, sample.low_weights, CubeFrame{g.low_output, low_out_start, static_cast<double>(g.ratio)},
            warp);
      }
    }
  }
  if (plan.has(Transform::Blur)) {
    out.high_in = Tensor(out.high_in.shape(), gaussian_blur(out.high_in.values(), g.high_input, plan.blur_sigma));
    if (out.low_in.defined()) {
      out.low_in = Tensor(out.low_in.shape(), gaussian_blur(out.low_in.values(), g.low_input, plan.blur_sigma));
    }
  }
  if (plan.has(Transform::Intensity)) {
    out.high_in = shift_and_clip(out.high_in, plan.intensity_shift, cfg.clip_lo, cfg.clip_hi);
    if (out.low_in.defined()) out.low_in = shift_and_clip(out.low_in, plan.intensity_shift, cfg.clip_lo, cfg.clip_hi);
  }
  return out;
}

PatchSample augment(const PatchSample& sample, Rng& rng, const PairGeometry& g, const AugmentConfig& cfg) {
  return apply_plan(sample, draw_plan(rng, cfg), g, cfg);
}

}  // namespace mrseg
