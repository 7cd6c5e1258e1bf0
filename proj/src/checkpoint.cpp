#include "mrseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mrseg/errors.hpp"

namespace mrseg {

using nlohmann::json;

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json to_json(const UNetConfig& c) {
  return {{"base_filters", c.base_filters}, {"levels", c.levels},           {"in_channels", c.in_channels},
          {"out_classes", c.out_classes},   {"input_size", c.input_size},   {"dropout_rate", c.dropout_rate},
          {"channel_norm", c.channel_norm}};
}

json to_json(const CascadeConfig& c) {
  return {{"low", to_json(c.low)},
          {"high", to_json(c.high)},
          {"resolution_ratio", c.resolution_ratio},
          {"multires", c.multires}};
}

UNetConfig unet_config_from_json(const json& j) {
  UNetConfig c;
  c.base_filters = j.at("base_filters").get<int>();
  c.levels = j.at("levels").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_classes = j.at("out_classes").get<int>();
  c.input_size = j.at("input_size").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.channel_norm = j.at("channel_norm").get<bool>();
  return c;
}

CascadeConfig cascade_config_from_json(const json& j) {
  CascadeConfig c;
  c.low = unet_config_from_json(j.at("low"));
  c.high = unet_config_from_json(j.at("high"));
  c.resolution_ratio = j.at("resolution_ratio").get<int>();
  c.multires = j.at("multires").get<bool>();
  return c;
}

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, sizeof b);
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof b);
  if (!is) throw CorruptFile("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

bool same_geometry(UNetConfig a, UNetConfig b) {
  a.dropout_rate = b.dropout_rate = 0.0;
  return a == b;
}

struct Container {
  CheckpointHeader header;
  json blobs;
  std::ifstream in;
};

Container open_container(const std::filesystem::path& path) {
  Container c;
  c.in.open(path, std::ios::binary);
  if (!c.in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  c.in.read(magic, 8);
  if (!c.in || std::string_view(magic, 8) != kCheckpointMagic) throw CorruptFile(path.string() + " is not a checkpoint");
  const auto version = get_le<std::uint32_t>(c.in);
  if (version != kCheckpointVersion) throw CorruptFile("unsupported checkpoint version " + std::to_string(version));
  const auto len = get_le<std::uint64_t>(c.in);
  if (len > (1ull << 30)) throw CorruptFile("checkpoint header too large");
  std::string text(len, '\0');
  c.in.read(text.data(), static_cast<std::streamsize>(len));
  if (!c.in) throw CorruptFile("checkpoint header truncated");
  try {
    const json j = json::parse(text);
    c.header.architecture = cascade_config_from_json(j.at("architecture"));
    c.header.config_hash = j.value("config_hash", "");
    c.header.meta = j.value("meta", json::object());
    c.blobs = j.at("tensors");
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("checkpoint header: ") + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const CascadeModel& model, const std::filesystem::path& path, const std::string& config_hash,
                     const json& meta) {
  json tensors = json::array();
  const auto params = model.parameters();
  const auto names = model.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    tensors.push_back({{"name", names[i]}, {"dtype", "float64"}, {"shape", p->value.shape()}, {"trainable", p->trainable}});
  }
  const json header = {{"architecture", to_json(model.config())},
                       {"config_hash", config_hash},
                       {"meta", meta},
                       {"tensors", tensors}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic.data(), 8);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : params) {
    for (double v : p->value.values()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) { return open_container(path).header; }

CheckpointHeader load_checkpoint(CascadeModel& model, const std::filesystem::path& path) {
  auto c = open_container(path);
  const auto& a = c.header.architecture;
  const auto& m = model.config();
  if (a.multires != m.multires || a.resolution_ratio != m.resolution_ratio || !same_geometry(a.high, m.high) ||
      (m.multires && !same_geometry(a.low, m.low))) {
    throw ConfigError("checkpoint architecture " + to_json(a).dump() + " does not match model " + to_json(m).dump());
  }
  auto params = model.parameters();
  const auto names = model.parameter_names();
  if (c.blobs.size() != params.size()) throw ConfigError("checkpoint holds a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& b = c.blobs[i];
    auto* p = params[i];
    if (b.at("name").get<std::string>() != names[i] || b.at("shape").get<Shape>() != p->value.shape()) {
      throw ConfigError("checkpoint tensor " + b.at("name").get<std::string>() + " does not match " + names[i]);
    }
    if (b.at("dtype").get<std::string>() != "float64") throw CorruptFile("unsupported blob dtype");
    auto w = p->value.mutable_values();
    for (auto& v : w) v = std::bit_cast<double>(get_le<std::uint64_t>(c.in));
    p->trainable = b.at("trainable").get<bool>();
  }
  return c.header;
}

ParameterSnapshot snapshot(const CascadeModel& model) {
  ParameterSnapshot s;
  for (const auto* p : model.parameters()) {
    auto v = p->value.values();
    s.emplace_back(v.begin(), v.end());
  }
  return s;
}

void restore(CascadeModel& model, const ParameterSnapshot& snap) {
  auto params = model.parameters();
  if (params.size() != snap.size()) throw ShapeError("snapshot does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->value.mutable_values();
    if (w.size() != snap[i].size()) throw ShapeError("snapshot tensor size mismatch");
    std::copy(snap[i].begin(), snap[i].end(), w.begin());
  }
}

}  // namespace mrseg
