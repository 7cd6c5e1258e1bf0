#include "mrseg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrseg/errors.hpp"

namespace mrseg {

int mirror_index(int i, int n) {
  if (n <= 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

AxisGrid training_grid(int extent, int output_size, int stride) {
  if (output_size < 1 || stride < 1) throw GridError("output size and stride must be positive");
  if (extent < output_size) {
    throw GridError("extent " + std::to_string(extent) + " smaller than output tile " + std::to_string(output_size));
  }
  AxisGrid g;
  for (int c = 0; c + output_size <= extent; c += stride) g.corners.push_back(c);
  if (g.corners.back() + output_size < extent) g.corners.push_back(extent - output_size);
  return g;
}

AxisGrid inference_grid(int extent, int output_size) {
  if (output_size < 1 || extent < 1) throw GridError("extent and output size must be positive");
  AxisGrid g;
  for (int c = 0; c < extent; c += output_size) g.corners.push_back(c);
  return g;
}

std::vector<Index3> PatchGrid::corners() const {
  std::vector<Index3> out;
  for (int z : axes[2].corners)
    for (int y : axes[1].corners)
      for (int x : axes[0].corners) out.push_back({x, y, z});
  return out;
}

PatchGrid training_patch_grid(Dims3 dims, int input_size, int output_size, int stride) {
  PatchGrid g;
  for (int a = 0; a < 3; ++a) g.axes[a] = training_grid(dims[a], output_size, stride);
  g.input_size = input_size;
  g.output_size = output_size;
  g.stride = stride;
  return g;
}

PatchGrid inference_patch_grid(Dims3 dims, int input_size, int output_size) {
  PatchGrid g;
  for (int a = 0; a < 3; ++a) g.axes[a] = inference_grid(dims[a], output_size);
  g.input_size = input_size;
  g.output_size = output_size;
  g.stride = output_size;
  return g;
}

std::vector<float> mirror_crop(const Volume& vol, Index3 start, int size) {
  const auto& d = vol.dims();
  std::vector<float> out(static_cast<std::size_t>(size) * size * size);
  std::vector<int> mx(size), my(size), mz(size);
  for (int i = 0; i < size; ++i) {
    mx[i] = mirror_index(start.x + i, d.nx);
    my[i] = mirror_index(start.y + i, d.ny);
    mz[i] = mirror_index(start.z + i, d.nz);
  }
  std::size_t o = 0;
  for (int z = 0; z < size; ++z)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out[o++] = vol.at(mx[x], my[y], mz[z]);
  return out;
}

namespace {

Tensor as_patch(const std::vector<float>& v, int size) {
  return Tensor({1, size, size, size}, std::vector<double>(v.begin(), v.end()));
}

Index3 minus(Index3 a, int m) { return {a.x - m, a.y - m, a.z - m}; }

}  // namespace

Tensor extract_patch(const Volume& vol, Index3 corner, int input_size, int output_size) {
  const auto& d = vol.dims();
  for (int a = 0; a < 3; ++a) {
    if (corner[a] < 0 || corner[a] + output_size > d[a]) {
      throw GridError("output tile at axis " + std::to_string(a) + " [" + std::to_string(corner[a]) + ", " +
                      std::to_string(corner[a] + output_size) + ") leaves the volume of extent " +
                      std::to_string(d[a]));
    }
  }
  if (input_size < output_size || (input_size - output_size) % 2) {
    throw GridError("input context must exceed the output tile by an even margin");
  }
  return as_patch(mirror_crop(vol, minus(corner, (input_size - output_size) / 2), input_size), input_size);
}

std::vector<double> weight_map(std::span<const double> target, std::span<const double> class_weights) {
  std::vector<double> w(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double t = target[i];
    const auto k = static_cast<std::size_t>(t);
    if (t < 0.0 || t != static_cast<double>(k) || k >= class_weights.size()) {
      throw LabelError("label " + std::to_string(t) + " has no class weight");
    }
    w[i] = class_weights[k];
  }
  return w;
}

PairGeometry pair_geometry(const CascadeModel& model) {
  PairGeometry g;
  g.high_input = model.config().high.input_size;
  g.high_output = model.high().output_size();
  if (model.multires()) {
    g.low_input = model.config().low.input_size;
    g.low_output = model.low().output_size();
    g.ratio = model.config().resolution_ratio;
  } else {
    g.low_input = g.low_output = 0;
    g.ratio = 1;
  }
  return g;
}

Index3 coarse_corner_for(Index3 fine_corner, const PairGeometry& g) {
  Index3 out;
  for (int a = 0; a < 3; ++a) {
    const double centre = (fine_corner[a] + 0.5 * g.high_output) / g.ratio;
    const int c = static_cast<int>(std::floor(centre - 0.5 * g.low_output));
    (a == 0 ? out.x : (a == 1 ? out.y : out.z)) = c;
  }
  return out;
}

MaskOffset mask_offset_for(Index3 fine_corner, Index3 coarse_corner, const PairGeometry& g) {
  const int half_margin = (g.high_input - g.high_output) / 2;
  // tensor axis order is (z, y, x)
  return {coarse_corner.z * g.ratio - (fine_corner.z - half_margin),
          coarse_corner.y * g.ratio - (fine_corner.y - half_margin),
          coarse_corner.x * g.ratio - (fine_corner.x - half_margin)};
}

PatchSample make_sample(const Volume& high_ct, const Volume& high_labels, const Volume* low_ct,
                        const Volume* low_labels, Index3 corner, const PairGeometry& g,
                        std::span<const double> class_weights, std::span<const double> low_class_weights) {
  if (!high_ct.same_geometry(high_labels)) throw AlignmentError("fine CT and labels differ in geometry");
  PatchSample s;
  s.corner = corner;
  const int half_margin = (g.high_input - g.high_output) / 2;
  s.high_in = as_patch(mirror_crop(high_ct, minus(corner, half_margin), g.high_input), g.high_input);
  s.target = as_patch(mirror_crop(high_labels, corner, g.high_output), g.high_output);
  s.weights = Tensor(s.target.shape(), weight_map(s.target.values(), class_weights));
  if (low_ct) {
    for (int a = 0; a < 3; ++a) {
      if (std::abs(low_ct->spacing()[a] - g.ratio * high_ct.spacing()[a]) > 1e-6 * low_ct->spacing()[a]) {
        throw AlignmentError("coarse spacing is not " + std::to_string(g.ratio) + "x the fine spacing");
      }
    }
    const Index3 cc = coarse_corner_for(corner, g);
    const int low_half = (g.low_input - g.low_output) / 2;
    s.low_in = as_patch(mirror_crop(*low_ct, minus(cc, low_half), g.low_input), g.low_input);
    s.mask_offset = mask_offset_for(corner, cc, g);
    if (low_labels) {
      auto t = mirror_crop(*low_labels, cc, g.low_output);
      for (auto& v : t) v = v != 0.0f ? 1.0f : 0.0f;
      s.low_target = as_patch(t, g.low_output);
      s.low_weights = Tensor(s.low_target.shape(), weight_map(s.low_target.values(), low_class_weights));
    }
  }
  return s;
}

PatchSample make_low_sample(const Volume& low_ct, const Volume& low_labels, Index3 corner, int input_size,
                            int output_size, std::span<const double> class_weights) {
  PatchSample s;
  s.corner = corner;
  s.low_in = extract_patch(low_ct, corner, input_size, output_size);
  auto t = mirror_crop(low_labels, corner, output_size);
  for (auto& v : t) v = v != 0.0f ? 1.0f : 0.0f;
  s.low_target = as_patch(t, output_size);
  s.low_weights = Tensor(s.low_target.shape(), weight_map(s.low_target.values(), class_weights));
  return s;
}

}  // namespace mrseg
