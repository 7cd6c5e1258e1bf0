#pragma once
// Breadth-first 26-connected labelling and adjacency queries on flat masks.

#include <array>
#include <cstdint>
#include <queue>
#include <vector>

namespace oracle {

struct Grid {
  int nx, ny, nz;
  std::size_t idx(int x, int y, int z) const { return static_cast<std::size_t>((z * ny + y) * nx + x); }
  bool in(int x, int y, int z) const { return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz; }
};

/// Component id per voxel (-1 for background), ids from 0.
inline std::vector<int> bfs_components(const std::vector<std::uint8_t>& m, Grid g, int* count = nullptr) {
  std::vector<int> lab(m.size(), -1);
  int next = 0;
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        if (!m[g.idx(x, y, z)] || lab[g.idx(x, y, z)] >= 0) continue;
        std::queue<std::array<int, 3>> q;
        q.push({x, y, z});
        lab[g.idx(x, y, z)] = next;
        while (!q.empty()) {
          const auto [cx, cy, cz] = q.front();
          q.pop();
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int ax = cx + dx, ay = cy + dy, az = cz + dz;
                if (!g.in(ax, ay, az)) continue;
                const auto j = g.idx(ax, ay, az);
                if (m[j] && lab[j] < 0) {
                  lab[j] = next;
                  q.push({ax, ay, az});
                }
              }
        }
        ++next;
      }
  if (count) *count = next;
  return lab;
}

/// Labels after keeping only abnormality (2) components with a 26-neighbour of parenchyma (1).
inline std::vector<float> keep_attached(const std::vector<float>& labels, Grid g) {
  std::vector<std::uint8_t> abn(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) abn[i] = labels[i] == 2.0f;
  int count = 0;
  const auto comp = bfs_components(abn, g, &count);
  std::vector<bool> ok(static_cast<std::size_t>(count), false);
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        const int c = comp[g.idx(x, y, z)];
        if (c < 0) continue;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              if (g.in(x + dx, y + dy, z + dz) && labels[g.idx(x + dx, y + dy, z + dz)] == 1.0f) ok[c] = true;
      }
  std::vector<float> out = labels;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (comp[i] >= 0 && !ok[static_cast<std::size_t>(comp[i])]) out[i] = 0.0f;
  return out;
}

/// Dilation by the full 3x3x3 element straight from the definition.
inline std::vector<std::uint8_t> dilate_direct(const std::vector<std::uint8_t>& m, Grid g) {
  std::vector<std::uint8_t> out(m.size(), 0);
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x)
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              if (g.in(x + dx, y + dy, z + dz) && m[g.idx(x + dx, y + dy, z + dz)]) out[g.idx(x, y, z)] = 1;
  return out;
}

}  // namespace oracle
