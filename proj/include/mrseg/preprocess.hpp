#pragma once

#include "mrseg/volume.hpp"

namespace mrseg {

inline constexpr float kDefaultHuLow = -500.0f;
inline constexpr float kDefaultHuHigh = 400.0f;

/// Clamps every voxel into [lo, hi]. Requires an intensity volume and lo < hi.
Volume clip_hu(const Volume& vol, float lo = kDefaultHuLow, float hi = kDefaultHuHigh);

enum class Interp { Cubic, Nearest };

/// Catmull-Rom cubic convolution weight (a = -0.5).
double catmull_rom(double t);

/// Output size along an axis of `n` voxels at `spacing`, resampled to
/// `target`: round-half-away-from-zero of n*spacing/target, at least 1.
int resampled_size(int n, double spacing, double target);

/// Isotropic (or per-axis) resampling. Output voxels are placed so that the
/// first voxel edges of input and output coincide; samples falling outside
/// the input are edge-clamped. Label volumes require nearest mode.
Volume resample(const Volume& vol, const Vec3& target_spacing, Interp mode);

/// Samples `vol` at a continuous voxel coordinate with edge clamping.
double sample_cubic(const Volume& vol, double x, double y, double z);
float sample_nearest(const Volume& vol, double x, double y, double z);

}  // namespace mrseg
