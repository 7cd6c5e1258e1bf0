#pragma once

#include <cstdint>
#include <vector>

#include "mrseg/volume.hpp"

namespace mrseg {

using Mask = std::vector<std::uint8_t>;  // x-fastest, 0/1

/// Binary dilation with the full 3x3x3 element, repeated `iterations` times,
/// clipped at the volume bounds.
Mask dilate(const Mask& mask, Dims3 dims, int iterations = 1);
Mask erode(const Mask& mask, Dims3 dims, int iterations = 1);

struct Components {
  std::vector<int> label;  // 0 = background, components numbered from 1
  int count = 0;
  std::vector<std::size_t> sizes;  // indexed by component number; sizes[0] unused
};

/// 26-connected components of a binary mask, numbered in order of their
/// first voxel in memory order.
Components connected_components(const Mask& mask, Dims3 dims);

/// True when voxel (x, y, z) has a 26-neighbour set in `mask`.
bool touches(const Mask& mask, Dims3 dims, int x, int y, int z);

}  // namespace mrseg
