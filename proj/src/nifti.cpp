#include "mrseg/nifti.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "mrseg/errors.hpp"

namespace mrseg::nifti {
namespace {

// byte offsets within the 348-byte header
constexpr int kOffDim = 40;
constexpr int kOffIntentCode = 68;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffXyztUnits = 123;
constexpr int kOffQformCode = 252;
constexpr int kOffSformCode = 254;
constexpr int kOffQoffset = 268;
constexpr int kOffSrow = 280;
constexpr int kOffIntentName = 328;
constexpr int kOffMagic = 344;

constexpr std::string_view kIntentPrefix = "mrseg:";

template <typename T>
T byteswap_value(T v) {
  std::array<unsigned char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

bool host_is_little() { return std::endian::native == std::endian::little; }

class HeaderReader {
 public:
  HeaderReader(const unsigned char* bytes, bool swap) : bytes_(bytes), swap_(swap) {}
  template <typename T>
  T get(int offset) const {
    T v;
    std::memcpy(&v, bytes_ + offset, sizeof(T));
    return swap_ ? byteswap_value(v) : v;
  }
  std::string text(int offset, int len) const {
    const char* p = reinterpret_cast<const char*>(bytes_ + offset);
    return std::string(p, strnlen(p, static_cast<std::size_t>(len)));
  }

 private:
  const unsigned char* bytes_;
  bool swap_;
};

class HeaderWriter {
 public:
  explicit HeaderWriter(bool swap) : swap_(swap) { bytes_.fill(0); }
  template <typename T>
  void put(int offset, T v) {
    if (swap_) v = byteswap_value(v);
    std::memcpy(bytes_.data() + offset, &v, sizeof(T));
  }
  void text(int offset, std::string_view s, int maxlen) {
    std::memcpy(bytes_.data() + offset, s.data(), std::min<std::size_t>(s.size(), maxlen));
  }
  const std::array<unsigned char, kSingleFileOffset>& bytes() const { return bytes_; }

 private:
  std::array<unsigned char, kSingleFileOffset> bytes_{};
  bool swap_;
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

VolumeKind kind_from_intent(const std::string& intent) {
  if (intent.rfind(kIntentPrefix, 0) == 0) {
    auto tag = intent.substr(kIntentPrefix.size());
    if (tag == "labels") return VolumeKind::Labels;
    if (tag == "probability") return VolumeKind::Probability;
  }
  return VolumeKind::Intensity;
}

struct Decoded {
  Dims3 dims;
  Vec3 spacing;
  Vec3 origin;
  std::vector<float> data;
  VolumeKind kind;
};

Decoded decode(const std::filesystem::path& path) {
  auto file = slurp(path);
  if (file.size() >= 2 && file[0] == 0x1f && file[1] == 0x8b) {
    throw UnsupportedFormat("gzip-compressed files are not supported: " + path.string());
  }
  if (file.size() < static_cast<std::size_t>(kHeaderSize)) {
    throw CorruptFile("file shorter than a NIfTI-1 header: " + path.string());
  }

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, file.data(), 4);
  bool swap = false;
  if (sizeof_hdr != kHeaderSize) {
    if (byteswap_value(sizeof_hdr) != kHeaderSize) {
      throw CorruptFile("sizeof_hdr is neither 348 nor byte-swapped 348: " + path.string());
    }
    swap = true;
  }
  HeaderReader h(file.data(), swap);

  const std::string magic = h.text(kOffMagic, 4);
  const bool single_file = magic == "n+1";
  if (!single_file && magic != "ni1") {
    throw UnsupportedFormat("unrecognised magic '" + magic + "'");
  }

  const auto ndim = h.get<std::int16_t>(kOffDim);
  if (ndim != 3) throw UnsupportedShape("expected 3 dimensions, header has " + std::to_string(ndim));
  Dims3 dims{h.get<std::int16_t>(kOffDim + 2), h.get<std::int16_t>(kOffDim + 4),
             h.get<std::int16_t>(kOffDim + 6)};
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw CorruptFile("non-positive dimension");

  const auto datatype = h.get<std::int16_t>(kOffDatatype);
  std::size_t bytes_per_voxel = 0;
  if (datatype == static_cast<std::int16_t>(DataType::Int16)) {
    bytes_per_voxel = 2;
  } else if (datatype == static_cast<std::int16_t>(DataType::Float32)) {
    bytes_per_voxel = 4;
  } else {
    throw UnsupportedFormat("datatype " + std::to_string(datatype) + " (only int16 and float32)");
  }

  Vec3 spacing;
  for (int a = 0; a < 3; ++a) {
    float p = h.get<float>(kOffPixdim + 4 * (a + 1));
    spacing[a] = p > 0.0f ? static_cast<double>(p) : 1.0;
  }

  Vec3 origin{0, 0, 0};
  if (h.get<std::int16_t>(kOffQformCode) > 0) {
    for (int a = 0; a < 3; ++a) origin[a] = h.get<float>(kOffQoffset + 4 * a);
  } else if (h.get<std::int16_t>(kOffSformCode) > 0) {
    for (int a = 0; a < 3; ++a) origin[a] = h.get<float>(kOffSrow + 16 * a + 12);
  }

  const float slope = h.get<float>(kOffSclSlope);
  const float inter = h.get<float>(kOffSclInter);
  const bool scaled = std::isfinite(slope) && slope != 0.0f && (slope != 1.0f || inter != 0.0f);

  std::vector<unsigned char> external;
  const std::vector<unsigned char>* payload_src = &file;
  auto vox_offset = static_cast<std::size_t>(std::max(0.0f, h.get<float>(kOffVoxOffset)));
  if (!single_file) {
    auto img = path;
    img.replace_extension(".img");
    external = slurp(img);
    payload_src = &external;
  } else if (vox_offset < static_cast<std::size_t>(kHeaderSize)) {
    throw CorruptFile("vox_offset inside the header");
  }

  const std::size_t n = dims.count();
  const std::size_t need = vox_offset + n * bytes_per_voxel;
  if (payload_src->size() < need) {
    throw CorruptFile("payload truncated: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(payload_src->size()));
  }

  std::vector<float> data(n);
  const unsigned char* p = payload_src->data() + vox_offset;
  if (bytes_per_voxel == 2) {
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t v;
      std::memcpy(&v, p + 2 * i, 2);
      if (swap) v = byteswap_value(v);
      data[i] = static_cast<float>(v);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, p + 4 * i, 4);
      if (swap) v = byteswap_value(v);
      data[i] = v;
    }
  }
  if (scaled) {
    for (auto& v : data) v = v * slope + inter;
  }

  return Decoded{dims, spacing, origin, std::move(data), kind_from_intent(h.text(kOffIntentName, 16))};
}

}  // namespace

Volume read(const std::filesystem::path& path) {
  auto d = decode(path);
  return Volume(d.dims, d.spacing, d.origin, d.kind, std::move(d.data));
}

Volume read(const std::filesystem::path& path, VolumeKind kind) {
  auto d = decode(path);
  return Volume(d.dims, d.spacing, d.origin, kind, std::move(d.data));
}

void write(const Volume& vol, const std::filesystem::path& path, const WriteOptions& opts) {
  const DataType dt = opts.datatype.value_or(vol.kind() == VolumeKind::Labels ? DataType::Int16
                                                                              : DataType::Float32);
  const bool big = opts.byte_order == ByteOrder::Big;
  const bool swap = big == host_is_little();
  const auto& dims = vol.dims();
  if (dims.nx > std::numeric_limits<std::int16_t>::max() || dims.ny > std::numeric_limits<std::int16_t>::max() ||
      dims.nz > std::numeric_limits<std::int16_t>::max()) {
    throw UnsupportedShape("dimension exceeds int16 range");
  }

  HeaderWriter h(swap);
  h.put<std::int32_t>(0, kHeaderSize);
  h.put<char>(38, 'r');
  const std::int16_t dim[8] = {3, static_cast<std::int16_t>(dims.nx), static_cast<std::int16_t>(dims.ny),
                               static_cast<std::int16_t>(dims.nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) h.put<std::int16_t>(kOffDim + 2 * i, dim[i]);
  h.put<std::int16_t>(kOffIntentCode, 0);
  h.put<std::int16_t>(kOffDatatype, static_cast<std::int16_t>(dt));
  h.put<std::int16_t>(kOffBitpix, dt == DataType::Int16 ? 16 : 32);
  const auto& sp = vol.spacing();
  const float pixdim[8] = {1.0f, static_cast<float>(sp[0]), static_cast<float>(sp[1]),
                           static_cast<float>(sp[2]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) h.put<float>(kOffPixdim + 4 * i, pixdim[i]);
  h.put<float>(kOffVoxOffset, static_cast<float>(kSingleFileOffset));
  h.put<float>(kOffSclSlope, 1.0f);
  h.put<float>(kOffSclInter, 0.0f);
  h.put<char>(kOffXyztUnits, 2);  // mm
  h.put<std::int16_t>(kOffQformCode, 1);
  h.put<std::int16_t>(kOffSformCode, 1);
  const auto& org = vol.origin();
  for (int a = 0; a < 3; ++a) {
    h.put<float>(kOffQoffset + 4 * a, static_cast<float>(org[a]));
    for (int c = 0; c < 4; ++c) {
      float v = c == a ? pixdim[a + 1] : (c == 3 ? static_cast<float>(org[a]) : 0.0f);
      h.put<float>(kOffSrow + 16 * a + 4 * c, v);
    }
  }
  h.text(kOffIntentName, std::string(kIntentPrefix) + std::string(to_string(vol.kind())), 16);
  h.text(kOffMagic, std::string_view("n+1\0", 4), 4);

  std::vector<unsigned char> payload;
  auto values = vol.data();
  if (dt == DataType::Int16) {
    payload.resize(values.size() * 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
      float v = std::nearbyint(values[i]);
      if (v != values[i] || v < std::numeric_limits<std::int16_t>::min() ||
          v > std::numeric_limits<std::int16_t>::max()) {
        throw UnsupportedFormat("value " + std::to_string(values[i]) + " not representable as int16");
      }
      auto s = static_cast<std::int16_t>(v);
      if (swap) s = byteswap_value(s);
      std::memcpy(payload.data() + 2 * i, &s, 2);
    }
  } else {
    payload.resize(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
      float v = values[i];
      if (swap) v = byteswap_value(v);
      std::memcpy(payload.data() + 4 * i, &v, 4);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(h.bytes().data()), kSingleFileOffset);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mrseg::nifti
