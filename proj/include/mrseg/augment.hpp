#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mrseg/rng.hpp"
#include "mrseg/sampler.hpp"

namespace mrseg {

enum class Transform : unsigned { Scale = 1, Rotate = 2, Blur = 4, Intensity = 8, Elastic = 16 };

struct AugmentConfig {
  bool enabled = true;
  double probability = 0.7;  // fraction of samples that get a non-identity plan
  int max_transforms = 3;
  double scale_min = 0.95, scale_max = 1.05;
  double max_rotation_deg = 5.0;
  double sigma_min = 0.2, sigma_max = 1.0;
  double max_shift_hu = 20.0;
  int control_points = 10;  // per axis
  double max_displacement = 5.0;  // fine voxels
  float clip_lo = -500.0f, clip_hi = 400.0f;
};

struct AugmentPlan {
  unsigned applied = 0;  // bitset of Transform
  double scale = 1.0;
  std::array<double, 3> rotation_deg{0, 0, 0};  // about x, y, z (planes yz, xz, xy)
  double blur_sigma = 0.0;
  double intensity_shift = 0.0;
  int control_points = 0;
  std::vector<double> displacements;  // control_points^3 x 3, (x, y, z) per point

  bool has(Transform t) const { return (applied & static_cast<unsigned>(t)) != 0; }
  int count() const;
  bool identity() const { return applied == 0; }
};

/// Every non-empty transform set of size <= max_transforms in which elastic
/// deformation only appears together with blur and intensity variation.
std::vector<unsigned> legal_transform_sets(int max_transforms = 3);

/// With probability 1 - cfg.probability the identity plan; otherwise a
/// legal set drawn uniformly, with parameters drawn from the configured ranges.
AugmentPlan draw_plan(Rng& rng, const AugmentConfig& cfg = {});

/// Applies a plan. Geometric transforms act about the fine tile centre in
/// fine-voxel units and are shared by every array of the sample: intensities
/// are resampled with cubic interpolation, labels and weights with nearest
/// neighbour. Blur and intensity shift (followed by re-clipping) touch only
/// the intensity patches.
PatchSample apply_plan(const PatchSample& sample, const AugmentPlan& plan, const PairGeometry& g,
                       const AugmentConfig& cfg = {});

PatchSample augment(const PatchSample& sample, Rng& rng, const PairGeometry& g, const AugmentConfig& cfg = {});

/// Separable Gaussian blur of a [1, n, n, n] patch, sigma in voxels, edge-clamped.
std::vector<double> gaussian_blur(std::span<const double> cube, int n, double sigma);

}  // namespace mrseg
