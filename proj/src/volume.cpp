#include "mrseg/volume.hpp"

#include <cmath>
#include <string>

#include "mrseg/errors.hpp"

namespace mrseg {

std::string_view to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::Intensity: return "intensity";
    case VolumeKind::Labels: return "labels";
    case VolumeKind::Probability: return "probability";
  }
  return "unknown";
}

Volume::Volume(Dims3 dims, Vec3 spacing, Vec3 origin, VolumeKind kind, std::vector<float> data)
    : dims_(dims), spacing_(spacing), origin_(origin), kind_(kind), data_(std::move(data)) {
  if (dims_.nx <= 0 || dims_.ny <= 0 || dims_.nz <= 0) {
    throw ShapeError("volume dimensions must be positive");
  }
  if (data_.size() != dims_.count()) {
    throw ShapeError("payload has " + std::to_string(data_.size()) + " voxels, dims imply " +
                     std::to_string(dims_.count()));
  }
  for (double s : spacing_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidRange("spacing components must be positive");
  }
  if (kind_ == VolumeKind::Labels) {
    for (float v : data_) {
      if (v != 0.0f && v != 1.0f && v != 2.0f) {
        throw LabelError("label volume holds value " + std::to_string(v));
      }
    }
  } else if (kind_ == VolumeKind::Probability) {
    for (float v : data_) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw InvalidRange("probability volume holds value " + std::to_string(v));
      }
    }
  }
}

Volume Volume::filled(Dims3 dims, float value, Vec3 spacing, Vec3 origin, VolumeKind kind) {
  return Volume(dims, spacing, origin, kind, std::vector<float>(dims.count(), value));
}

Volume Volume::with_data(std::vector<float> data) const { return with_data(std::move(data), kind_); }

Volume Volume::with_data(std::vector<float> data, VolumeKind kind) const {
  return Volume(dims_, spacing_, origin_, kind, std::move(data));
}

bool Volume::same_geometry(const Volume& other) const noexcept {
  if (!(dims_ == other.dims_)) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(spacing_[a] - other.spacing_[a]) > 1e-6) return false;
    if (std::abs(origin_[a] - other.origin_[a]) > 1e-6) return false;
  }
  return true;
}

Volume merge_format1(const Volume& labels) {
  std::vector<float> out(labels.size());
  auto in = labels.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] != 0.0f ? labels::kKidney : 0.0f;
  return labels.with_data(std::move(out), VolumeKind::Labels);
}

std::vector<std::uint8_t> label_mask(const Volume& labels, float label) {
  std::vector<std::uint8_t> mask(labels.size());
  auto in = labels.data();
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = in[i] == label ? 1 : 0;
  return mask;
}

}  // namespace mrseg
