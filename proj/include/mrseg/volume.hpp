#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mrseg {

using Vec3 = std::array<double, 3>;

/// Voxel counts along x, y, z. x is the fastest-varying axis in memory.
struct Dims3 {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  constexpr std::size_t count() const noexcept {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  constexpr int operator[](int axis) const noexcept {
    return axis == 0 ? nx : (axis == 1 ? ny : nz);
  }
  friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;
  constexpr int operator[](int axis) const noexcept {
    return axis == 0 ? x : (axis == 1 ? y : z);
  }
  friend constexpr bool operator==(const Index3&, const Index3&) = default;
};

enum class VolumeKind { Intensity, Labels, Probability };

std::string_view to_string(VolumeKind kind);

/// Label values used throughout the pipeline. Format 2 keeps parenchyma and
/// abnormality apart; format 1 merges them into a single kidney class.
namespace labels {
inline constexpr float kBackground = 0.0f;
inline constexpr float kParenchyma = 1.0f;
inline constexpr float kAbnormality = 2.0f;
inline constexpr float kKidney = 1.0f;  // format 1 foreground
}  // namespace labels

/// A 3-D scalar grid with physical geometry. Immutable once constructed;
/// operations produce new volumes.
class Volume {
 public:
  Volume() = default;
  /// Throws ShapeError / InvalidRange when the invariants of `kind` are violated.
  Volume(Dims3 dims, Vec3 spacing, Vec3 origin, VolumeKind kind, std::vector<float> data);

  static Volume filled(Dims3 dims, float value, Vec3 spacing = {1, 1, 1},
                       Vec3 origin = {0, 0, 0}, VolumeKind kind = VolumeKind::Intensity);

  const Dims3& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  const Vec3& origin() const noexcept { return origin_; }
  VolumeKind kind() const noexcept { return kind_; }
  std::span<const float> data() const noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t offset(int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
  }
  float at(int x, int y, int z) const noexcept { return data_[offset(x, y, z)]; }
  float at(Index3 i) const noexcept { return at(i.x, i.y, i.z); }
  bool contains(int x, int y, int z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.nx && y < dims_.ny && z < dims_.nz;
  }

  /// Same geometry, new payload (and optionally a new kind).
  Volume with_data(std::vector<float> data) const;
  Volume with_data(std::vector<float> data, VolumeKind kind) const;

  bool same_geometry(const Volume& other) const noexcept;

 private:
  Dims3 dims_{};
  Vec3 spacing_{1, 1, 1};
  Vec3 origin_{0, 0, 0};
  VolumeKind kind_ = VolumeKind::Intensity;
  std::vector<float> data_;
};

/// Format 2 -> format 1: {1,2} -> 1, 0 -> 0.
Volume merge_format1(const Volume& labels);

/// Binary mask of voxels equal to `label`.
std::vector<std::uint8_t> label_mask(const Volume& labels, float label);

}  // namespace mrseg
