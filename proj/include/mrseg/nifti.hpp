#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "mrseg/volume.hpp"

namespace mrseg::nifti {

/// Header constants for the supported NIfTI-1 subset.
inline constexpr int kHeaderSize = 348;
inline constexpr int kSingleFileOffset = 352;  // header + 4-byte extension flag

enum class DataType : std::int16_t { Int16 = 4, Float32 = 16 };
enum class ByteOrder { Little, Big };

struct WriteOptions {
  /// Defaults to int16 for label volumes and float32 otherwise.
  std::optional<DataType> datatype;
  ByteOrder byte_order = ByteOrder::Little;
};

/// Reads an uncompressed single-file (`n+1`) or header/image pair (`ni1`)
/// 3-D volume. Byte order is detected from the header-size field. The volume
/// kind is recovered from the intent name written by `write`, falling back
/// to intensity.
Volume read(const std::filesystem::path& path);
Volume read(const std::filesystem::path& path, VolumeKind kind);

/// Writes a single-file `n+1` volume. Spacing goes to pixdim[1..3], origin to
/// the qform offset (identity rotation) and the sform translation column.
void write(const Volume& vol, const std::filesystem::path& path, const WriteOptions& opts = {});

}  // namespace mrseg::nifti
