#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mrseg/rng.hpp"
#include "mrseg/volume.hpp"

namespace mrseg {

struct Ellipsoid {
  Vec3 center_mm{0, 0, 0};
  Vec3 semi_axes_mm{10, 10, 10};
  double hu = 30.0;
};

struct Sphere {
  Vec3 center_mm{0, 0, 0};
  double radius_mm = 3.0;
  double hu = 0.0;
  bool attached = true;
};

/// Physical positions are voxel centres: origin + index * spacing.
struct PhantomSpec {
  Dims3 dims{48, 48, 48};
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  std::vector<Ellipsoid> kidneys;       // label 1
  std::vector<Sphere> abnormalities;    // label 2, painted over kidneys
  double noise_mean = -60.0;
  double noise_sd = 10.0;
  float clip_lo = -500.0f, clip_hi = 400.0f;
  std::uint64_t seed = 0;
};

struct Phantom {
  Volume ct;
  Volume labels;  // format 2
};

/// Rasterises the shapes (voxel centre inside the surface) and renders the CT
/// as a per-label intensity plus Gaussian noise, clipped. GeometryError when
/// a shape leaves the volume, an attached abnormality does not touch
/// parenchyma, or a detached one comes within 5 voxels of a kidney.
Phantom generate(const PhantomSpec& spec);

/// Minimum Chebyshev distance, in voxels, between detached abnormalities and kidneys.
inline constexpr int kDetachedGap = 5;

struct ShapeRanges {
  double kidney_hu_lo = 20.0, kidney_hu_hi = 45.0;
  double abnormality_hu_lo = -10.0, abnormality_hu_hi = 15.0;
};

/// Two kidneys on either side of the mid-sagittal plane and, when requested,
/// one or two abnormalities attached to their surface.
PhantomSpec random_spec(Rng& rng, Dims3 dims, Vec3 spacing, bool with_abnormality, const ShapeRanges& ranges = {});

struct CohortConfig {
  Dims3 dims{48, 48, 48};
  Vec3 spacing{1, 1, 1};
  double abnormality_fraction = 0.5;
  double test_fraction = 0.0;
  double train_fraction = 0.8;  // of the non-test cases
};

struct PhantomCase {
  std::string id;
  std::string split;  // train, val or test
  bool has_abnormality = false;
  Phantom phantom;
};

/// Deterministic cohort of n >= 3 cases; round(n * fraction) of them carry abnormalities.
std::vector<PhantomCase> make_cohort(int n, std::uint64_t seed, const CohortConfig& cfg = {});

/// Writes ct/<id>.nii, labels/<id>.nii and manifest.csv (case,split,has_abnormality).
void write_cohort(const std::vector<PhantomCase>& cohort, const std::filesystem::path& dir);

struct ManifestEntry {
  std::string id;
  std::string split;
  bool has_abnormality = false;
};
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Seeded 80/20-style partition of case ids into (train, val), keeping at
/// least one case on each side when there are two or more.
std::pair<std::vector<std::string>, std::vector<std::string>> split_train_val(std::vector<std::string> ids,
                                                                              std::uint64_t seed,
                                                                              double train_fraction = 0.8);

}  // namespace mrseg
