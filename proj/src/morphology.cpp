#include "mrseg/morphology.hpp"

#include <algorithm>
#include <numeric>

#include "mrseg/errors.hpp"

namespace mrseg {

namespace {

void check(const Mask& mask, Dims3 dims) {
  if (mask.size() != dims.count()) throw ShapeError("mask size does not match dims");
}

// One pass of a 3-wide max (or min) filter along one axis.
Mask line_filter(const Mask& in, Dims3 d, int axis, bool grow) {
  Mask out(in.size());
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(d.nx) : static_cast<std::size_t>(d.nx) * d.ny);
  const int n = d[axis];
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        const int c = axis == 0 ? x : (axis == 1 ? y : z);
        std::uint8_t v = in[i];
        if (grow) {
          if (c > 0) v |= in[i - stride];
          if (c + 1 < n) v |= in[i + stride];
        } else {
          // voxels outside the volume count as background
          if (c == 0 || c + 1 == n) v = 0;
          else v &= in[i - stride] & in[i + stride];
        }
        out[i] = v;
      }
  return out;
}

Mask box_filter(const Mask& mask, Dims3 dims, int iterations, bool grow) {
  check(mask, dims);
  Mask cur = mask;
  for (int it = 0; it < iterations; ++it)
    for (int a = 0; a < 3; ++a) cur = line_filter(cur, dims, a, grow);
  return cur;
}

int find(std::vector<int>& parent, int a) {
  while (parent[a] != a) {
    parent[a] = parent[parent[a]];
    a = parent[a];
  }
  return a;
}

}  // namespace

Mask dilate(const Mask& mask, Dims3 dims, int iterations) { return box_filter(mask, dims, iterations, true); }

Mask erode(const Mask& mask, Dims3 dims, int iterations) { return box_filter(mask, dims, iterations, false); }

Components connected_components(const Mask& mask, Dims3 dims) {
  check(mask, dims);
  const std::size_t n = mask.size();
  std::vector<int> provisional(n, -1);
  std::vector<int> parent;
  const auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(dims.nx) * (y + static_cast<std::size_t>(dims.ny) * z);
  };
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        const std::size_t i = idx(x, y, z);
        if (!mask[i]) continue;
        int root = -1;
        // the 13 neighbours that precede (x, y, z) in memory order
        for (int dz = -1; dz <= 0; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              const int xx = x + dx, yy = y + dy, zz = z + dz;
              if (xx < 0 || yy < 0 || zz < 0 || xx >= dims.nx || yy >= dims.ny) continue;
              const int q = provisional[idx(xx, yy, zz)];
              if (q < 0) continue;
              const int rq = find(parent, q);
              if (root < 0) {
                root = rq;
              } else if (rq != root) {
                const int lo = std::min(root, rq), hi = std::max(root, rq);
                parent[hi] = lo;
                root = lo;
              }
            }
        if (root < 0) {
          root = static_cast<int>(parent.size());
          parent.push_back(root);
        }
        provisional[i] = root;
      }
  Components c;
  c.label.assign(n, 0);
  std::vector<int> number(parent.size(), 0);
  c.sizes.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (provisional[i] < 0) continue;
    const int r = find(parent, provisional[i]);
    if (!number[r]) {
      number[r] = ++c.count;
      c.sizes.push_back(0);
    }
    c.label[i] = number[r];
    ++c.sizes[number[r]];
  }
  return c;
}

bool touches(const Mask& mask, Dims3 dims, int x, int y, int z) {
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dx && !dy && !dz) continue;
        const int xx = x + dx, yy = y + dy, zz = z + dz;
        if (xx < 0 || yy < 0 || zz < 0 || xx >= dims.nx || yy >= dims.ny || zz >= dims.nz) continue;
        if (mask[static_cast<std::size_t>(xx) + static_cast<std::size_t>(dims.nx) * (yy + static_cast<std::size_t>(dims.ny) * zz)]) return true;
      }
  return false;
}

}  // namespace mrseg
