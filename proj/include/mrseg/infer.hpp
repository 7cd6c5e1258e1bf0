#pragma once

#include <utility>
#include <vector>

#include "mrseg/morphology.hpp"
#include "mrseg/unet.hpp"
#include "mrseg/volume.hpp"

namespace mrseg {

/// One probability volume per class, all sharing the same geometry.
struct ProbabilityMaps {
  std::vector<Volume> classes;

  int class_count() const { return static_cast<int>(classes.size()); }
  const Volume& operator[](int c) const { return classes[static_cast<std::size_t>(c)]; }
  /// Largest per-voxel deviation of the class sum from 1.
  double max_sum_error() const;
};

struct InferenceOptions {
  int workers = 1;
};

/// Stitched tiled prediction of a single network: disjoint output tiles,
/// inputs cropped with mirror context.
ProbabilityMaps predict_unet(const UNet& net, const Volume& ct, const InferenceOptions& opt = {});

/// The same network applied once to the whole mirror-padded volume. Throws
/// ShapeError when the padded extent is not a valid input size for the net.
ProbabilityMaps predict_unet_whole(const UNet& net, const Volume& ct);

struct CascadePrediction {
  ProbabilityMaps high;  // fine grid, format-2 classes
  ProbabilityMaps low;   // coarse grid, format-1 classes (empty for single-resolution models)
};

/// Tiled cascade prediction. For each fine tile the coarse net runs on the
/// aligned coarse patch and gates the fine net; the coarse maps are stitched
/// separately by tiling the coarse volume. `low_ct` is ignored for
/// single-resolution models.
CascadePrediction predict_volume(const CascadeModel& model, const Volume& high_ct, const Volume* low_ct,
                                 const InferenceOptions& opt = {});

/// Elementwise mean. AlignmentError on differing class counts or geometry.
ProbabilityMaps ensemble(const ProbabilityMaps& a, const ProbabilityMaps& b);

/// Per-voxel argmax (first maximum wins) as a label volume.
Volume argmax_labels(const ProbabilityMaps& maps);

struct PostprocessConfig {
  bool gate = true;
  double threshold = 0.5;
  int dilation_iterations = 5;
  bool remove_detached = true;
};

/// Coarse foreground > threshold, nearest-upsampled to the fine grid, then dilated.
Mask gate_mask(const Volume& low_foreground, const Volume& fine_reference, int ratio, double threshold,
               int dilation_iterations);

/// Nearest-neighbour upsampling of a coarse mask onto a fine grid by an
/// integer ratio; fine voxel i maps to coarse voxel floor(i / ratio).
Mask upsample_mask(const Mask& coarse, Dims3 coarse_dims, Dims3 fine_dims, int ratio);

/// Removes abnormality components with no 26-neighbour of parenchyma.
Volume remove_detached_abnormalities(const Volume& labels);

struct SegmentationResult {
  Volume labels;   // format 2
  Volume format1;  // merged kidney mask
  bool gated = false;
  bool detached_removed = false;
};

/// Argmax of the fine maps, restricted to the gate built from the coarse
/// foreground map (skipped when `low` is null or gating is off), followed by
/// removal of detached abnormalities.
SegmentationResult postprocess(const ProbabilityMaps& high, const ProbabilityMaps* low, int ratio,
                               const PostprocessConfig& cfg = {});

/// Splits a binary kidney mask into (left, right) kidneys by component
/// centroid against the mid-sagittal plane. Low x is the patient's right;
/// centroids exactly on the plane go left.
std::pair<Volume, Volume> split_left_right(const Volume& format1);

/// One-hot maps of a label volume.
ProbabilityMaps one_hot(const Volume& labels, int classes);

}  // namespace mrseg
