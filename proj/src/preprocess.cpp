#include "mrseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrseg/errors.hpp"

namespace mrseg {

Volume clip_hu(const Volume& vol, float lo, float hi) {
  if (!(lo < hi)) throw InvalidRange("clip range requires lo < hi");
  if (vol.kind() != VolumeKind::Intensity) throw InvalidMode("clip_hu expects an intensity volume");
  std::vector<float> out(vol.data().begin(), vol.data().end());
  for (auto& v : out) v = std::clamp(v, lo, hi);
  return vol.with_data(std::move(out));
}

double catmull_rom(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

int resampled_size(int n, double spacing, double target) {
  return std::max(1, static_cast<int>(std::lround(n * spacing / target)));
}

namespace {

struct Taps {
  int index[4];
  double weight[4];
};

// Four clamped taps around continuous coordinate x on an axis of length n.
Taps cubic_taps(double x, int n) {
  Taps t;
  const int base = static_cast<int>(std::floor(x));
  const double frac = x - base;
  for (int k = 0; k < 4; ++k) {
    t.index[k] = std::clamp(base - 1 + k, 0, n - 1);
    t.weight[k] = catmull_rom(frac - (k - 1));
  }
  return t;
}

int nearest_index(double x, int n) { return std::clamp(static_cast<int>(std::floor(x + 0.5)), 0, n - 1); }

// Resamples one axis of a dense x-fastest grid.
std::vector<double> resample_axis(const std::vector<double>& in, const int in_dims[3], int axis, int out_n,
                                  double scale, Interp mode) {
  int out_dims[3] = {in_dims[0], in_dims[1], in_dims[2]};
  out_dims[axis] = out_n;
  std::vector<double> out(static_cast<std::size_t>(out_dims[0]) * out_dims[1] * out_dims[2]);
  const std::size_t stride[3] = {1, static_cast<std::size_t>(in_dims[0]),
                                 static_cast<std::size_t>(in_dims[0]) * in_dims[1]};
  const std::size_t ostride[3] = {1, static_cast<std::size_t>(out_dims[0]),
                                  static_cast<std::size_t>(out_dims[0]) * out_dims[1]};
  const int n = in_dims[axis];

  std::vector<Taps> taps(out_n);
  for (int i = 0; i < out_n; ++i) {
    const double x = (i + 0.5) * scale - 0.5;
    if (mode == Interp::Cubic) {
      taps[i] = cubic_taps(x, n);
    } else {
      taps[i] = Taps{{nearest_index(x, n), 0, 0, 0}, {1.0, 0, 0, 0}};
    }
  }
  const int ntaps = mode == Interp::Cubic ? 4 : 1;

  for (int z = 0; z < out_dims[2]; ++z) {
    for (int y = 0; y < out_dims[1]; ++y) {
      for (int x = 0; x < out_dims[0]; ++x) {
        const int coord[3] = {x, y, z};
        std::size_t base = 0;
        for (int a = 0; a < 3; ++a) {
          if (a != axis) base += coord[a] * stride[a];
        }
        const Taps& t = taps[coord[axis]];
        double acc = 0.0;
        for (int k = 0; k < ntaps; ++k) acc += t.weight[k] * in[base + t.index[k] * stride[axis]];
        out[x * ostride[0] + y * ostride[1] + z * ostride[2]] = acc;
      }
    }
  }
  return out;
}

}  // namespace

Volume resample(const Volume& vol, const Vec3& target_spacing, Interp mode) {
  for (double t : target_spacing) {
    if (!(t > 0.0)) throw InvalidRange("target spacing must be positive");
  }
  if (vol.kind() == VolumeKind::Labels && mode != Interp::Nearest) {
    throw InvalidMode("label volumes must be resampled with nearest-neighbour interpolation");
  }
  const auto& sp = vol.spacing();
  int dims[3] = {vol.dims().nx, vol.dims().ny, vol.dims().nz};
  std::vector<double> cur(vol.data().begin(), vol.data().end());
  Vec3 origin = vol.origin();
  for (int axis = 0; axis < 3; ++axis) {
    const int out_n = resampled_size(dims[axis], sp[axis], target_spacing[axis]);
    const double scale = target_spacing[axis] / sp[axis];
    if (out_n != dims[axis] || scale != 1.0) {
      cur = resample_axis(cur, dims, axis, out_n, scale, mode);
      dims[axis] = out_n;
    }
    origin[axis] = origin[axis] - 0.5 * sp[axis] + 0.5 * target_spacing[axis];
  }
  std::vector<float> out(cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i) {
    double v = cur[i];
    if (vol.kind() == VolumeKind::Probability) v = std::clamp(v, 0.0, 1.0);
    out[i] = static_cast<float>(v);
  }
  return Volume(Dims3{dims[0], dims[1], dims[2]}, target_spacing, origin, vol.kind(), std::move(out));
}

double sample_cubic(const Volume& vol, double x, double y, double z) {
  const auto& d = vol.dims();
  const Taps tx = cubic_taps(x, d.nx), ty = cubic_taps(y, d.ny), tz = cubic_taps(z, d.nz);
  double acc = 0.0;
  for (int c = 0; c < 4; ++c) {
    for (int b = 0; b < 4; ++b) {
      const double wyz = ty.weight[b] * tz.weight[c];
      if (wyz == 0.0) continue;
      for (int a = 0; a < 4; ++a) {
        acc += tx.weight[a] * wyz * vol.at(tx.index[a], ty.index[b], tz.index[c]);
      }
    }
  }
  return acc;
}

float sample_nearest(const Volume& vol, double x, double y, double z) {
  const auto& d = vol.dims();
  return vol.at(nearest_index(x, d.nx), nearest_index(y, d.ny), nearest_index(z, d.nz));
}

}  // namespace mrseg
