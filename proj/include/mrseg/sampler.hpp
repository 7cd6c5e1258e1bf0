#pragma once

#include <array>
#include <optional>
#include <vector>

#include "mrseg/tensor.hpp"
#include "mrseg/unet.hpp"
#include "mrseg/volume.hpp"

namespace mrseg {

/// Per-class voxel weights for format-2 targets (background, parenchyma,
/// abnormality) and for format-1 targets (background, kidney).
inline constexpr std::array<double, 3> kClassWeights{0.05, 0.10, 0.99};
inline constexpr std::array<double, 2> kFormat1Weights{0.05, 0.10};

/// Reflects index i into [0, n) without repeating the edge voxel
/// (-1 -> 1, n -> n-2), periodically for indices far outside.
int mirror_index(int i, int n);

/// Corner coordinates along one axis.
struct AxisGrid {
  std::vector<int> corners;
};

/// Training corners every `stride` voxels plus an end-aligned tail corner
/// when the remaining extent is not a multiple of the stride.
AxisGrid training_grid(int extent, int output_size = 20, int stride = 10);

/// Disjoint inference tiles that cover every voxel exactly once; the last
/// tile may extend past the volume and is written back only inside it.
AxisGrid inference_grid(int extent, int output_size);

struct PatchGrid {
  std::array<AxisGrid, 3> axes;  // x, y, z
  int input_size = 0;
  int output_size = 0;
  int stride = 0;

  std::vector<Index3> corners() const;
};

PatchGrid training_patch_grid(Dims3 dims, int input_size, int output_size, int stride = 10);
PatchGrid inference_patch_grid(Dims3 dims, int input_size, int output_size);

/// Box of size^3 voxels starting at `start` (may lie partly outside), with
/// out-of-bounds voxels taken by mirror reflection.
std::vector<float> mirror_crop(const Volume& vol, Index3 start, int size);

/// Input-context patch for the output tile at `corner`. The output tile must
/// lie inside the volume (GridError otherwise); the context may exceed it and
/// is filled by reflection.
Tensor extract_patch(const Volume& vol, Index3 corner, int input_size, int output_size);

/// Elementwise class-weight lookup on a label patch; LabelError on unknown labels.
std::vector<double> weight_map(std::span<const double> target, std::span<const double> class_weights = kClassWeights);

/// One training example. Patches are stored [1, n, n, n] in (z, y, x) order.
struct PatchSample {
  Tensor low_in;        // coarse intensity patch (undefined for single-resolution models)
  Tensor high_in;       // fine intensity patch
  Tensor target;        // output-sized format-2 labels
  Tensor weights;       // output-sized voxel weights
  Tensor low_target;    // coarse output-sized format-1 labels (pretraining)
  Tensor low_weights;
  MaskOffset mask_offset{0, 0, 0};
  Index3 corner;        // fine output tile corner
};

struct PairGeometry {
  int high_input = 36;
  int high_output = 20;
  int low_input = 36;
  int low_output = 20;
  int ratio = 2;
};

PairGeometry pair_geometry(const CascadeModel& model);

/// Coarse output tile corner aligned with a fine tile: the fine tile centre
/// mapped to coarse voxels, minus half the coarse output, floored.
Index3 coarse_corner_for(Index3 fine_corner, const PairGeometry& g);

/// Placement offset of the upsampled coarse output inside the fine input for
/// a pair of corners.
MaskOffset mask_offset_for(Index3 fine_corner, Index3 coarse_corner, const PairGeometry& g);

/// Builds the aligned (coarse, fine) sample for the fine tile at `corner`.
/// `low_ct`/`low_labels` may be empty volumes for single-resolution models.
PatchSample make_sample(const Volume& high_ct, const Volume& high_labels, const Volume* low_ct,
                        const Volume* low_labels, Index3 corner, const PairGeometry& g,
                        std::span<const double> class_weights = kClassWeights,
                        std::span<const double> low_class_weights = kFormat1Weights);

/// Sample for pretraining the coarse net alone, at a coarse output corner.
PatchSample make_low_sample(const Volume& low_ct, const Volume& low_labels, Index3 corner, int input_size,
                            int output_size, std::span<const double> class_weights = kFormat1Weights);

}  // namespace mrseg
