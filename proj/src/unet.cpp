#include "mrseg/unet.hpp"

#include <cmath>

#include "mrseg/errors.hpp"

namespace mrseg {

int valid_margin(int levels) {
  const int top = 1 << (levels - 1);
  return 8 * (top - 1) + 4 * top;
}

int unet_output_size(const UNetConfig& cfg) {
  if (cfg.levels < 1) throw ShapeError("levels must be >= 1");
  if (cfg.base_filters < 1 || cfg.in_channels < 1 || cfg.out_classes < 2) {
    throw ShapeError("filters, input channels and classes must be positive (classes >= 2)");
  }
  auto fail = [](const std::string& where, int size) {
    throw ShapeError("invalid geometry at " + where + ": size " + std::to_string(size));
  };
  int s = cfg.input_size;
  std::vector<int> skips;
  for (int l = 0; l + 1 < cfg.levels; ++l) {
    s -= 4;
    if (s < 2) fail("encoder level " + std::to_string(l), s);
    if (s % 2) fail("encoder level " + std::to_string(l) + " (odd size before pooling)", s);
    skips.push_back(s);
    s /= 2;
  }
  s -= 4;
  if (s < 1) fail("bottom level " + std::to_string(cfg.levels - 1), s);
  for (int l = cfg.levels - 2; l >= 0; --l) {
    s *= 2;
    if (skips[static_cast<std::size_t>(l)] < s) fail("decoder level " + std::to_string(l) + " (skip too small)", s);
    s -= 4;
    if (s < 1) fail("decoder level " + std::to_string(l), s);
  }
  return s;
}

double glorot_limit(double fan_in, double fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

namespace {

Tensor glorot_tensor(const Shape& shape, double fan_in, double fan_out, Rng& rng) {
  const double lim = glorot_limit(fan_in, fan_out);
  std::vector<double> v(shape_count(shape));
  for (auto& w : v) w = rng.uniform(-lim, lim);
  return Tensor(shape, std::move(v), true);
}

}  // namespace

UNet::Conv UNet::add_conv(const std::string& name, int c_out, int c_in, int k, Rng& rng) {
  Conv c;
  const double k3 = static_cast<double>(k) * k * k;
  c.weight = static_cast<int>(params_.size());
  params_.push_back({name + ".weight", glorot_tensor({c_out, c_in, k, k, k}, c_in * k3, c_out * k3, rng), true});
  c.bias = static_cast<int>(params_.size());
  params_.push_back({name + ".bias", Tensor::zeros({c_out}, true), true});
  if (cfg_.channel_norm && k > 1) {
    c.gain = static_cast<int>(params_.size());
    params_.push_back({name + ".gain", Tensor::full({c_out}, 1.0, true), true});
    c.shift = static_cast<int>(params_.size());
    params_.push_back({name + ".shift", Tensor::zeros({c_out}, true), true});
  }
  layers_.push_back(name);
  return c;
}

int UNet::add_tconv(const std::string& name, int c_in, int c_out, Rng& rng) {
  const int w = static_cast<int>(params_.size());
  params_.push_back({name + ".weight", glorot_tensor({c_in, c_out, 2, 2, 2}, c_out * 8.0, c_in * 8.0, rng), true});
  params_.push_back({name + ".bias", Tensor::zeros({c_out}, true), true});
  layers_.push_back(name);
  return w;
}

UNet::UNet(const UNetConfig& cfg, Rng& rng) : cfg_(cfg), output_size_(unet_output_size(cfg)) {
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) throw InvalidRate("dropout rate must lie in [0, 1)");
  const int L = cfg.levels;
  auto filters = [&](int level) { return cfg.base_filters << level; };

  int c_in = cfg.in_channels;
  for (int l = 0; l + 1 < L; ++l) {
    const std::string n = "enc" + std::to_string(l);
    std::array<Conv, 2> stage{add_conv(n + ".conv0", filters(l), c_in, 3, rng),
                              add_conv(n + ".conv1", filters(l), filters(l), 3, rng)};
    enc_.push_back(stage);
    c_in = filters(l);
  }
  const std::string bn = "bottom";
  bottom_ = {add_conv(bn + ".conv0", filters(L - 1), c_in, 3, rng),
             add_conv(bn + ".conv1", filters(L - 1), filters(L - 1), 3, rng)};
  c_in = filters(L - 1);

  up_weight_.assign(static_cast<std::size_t>(std::max(0, L - 1)), -1);
  up_bias_.assign(up_weight_.size(), -1);
  dec_.resize(up_weight_.size());
  for (int l = L - 2; l >= 0; --l) {
    const std::string un = "up" + std::to_string(l);
    const int w = add_tconv(un + ".tconv", c_in, filters(l), rng);
    up_weight_[static_cast<std::size_t>(l)] = w;
    up_bias_[static_cast<std::size_t>(l)] = w + 1;
    const std::string dn = "dec" + std::to_string(l);
    dec_[static_cast<std::size_t>(l)] = {add_conv(dn + ".conv0", filters(l), 2 * filters(l), 3, rng),
                                         add_conv(dn + ".conv1", filters(l), filters(l), 3, rng)};
    c_in = filters(l);
  }
  out_ = add_conv("out", cfg.out_classes, c_in, 1, rng);
}

Parameter& UNet::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ShapeError("no parameter named " + name);
}

Tensor UNet::conv_block(const Tensor& x, const Conv& c, bool training, Rng* rng) const {
  Tensor y = conv3d_valid(x, p(c.weight), p(c.bias));
  if (c.gain >= 0) y = channel_norm(y, p(c.gain), p(c.shift));
  y = relu(y);
  if (cfg_.dropout_rate > 0.0 && training) {
    if (!rng) throw ConfigError("dropout in training requires a generator");
    y = spatial_dropout(y, cfg_.dropout_rate, *rng, true);
  }
  return y;
}

Tensor UNet::forward(const Tensor& input, bool training, Rng* dropout_rng) const {
  // any spatial size satisfying the pooling geometry is accepted, which is
  // what whole-volume inference relies on
  if (input.channels() != cfg_.in_channels) {
    throw ShapeError("U-Net expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                     shape_str(input.shape()));
  }
  std::vector<Tensor> skips;
  Tensor x = input;
  for (const auto& stage : enc_) {
    x = conv_block(x, stage[0], training, dropout_rng);
    x = conv_block(x, stage[1], training, dropout_rng);
    skips.push_back(x);
    x = maxpool2(x);
  }
  x = conv_block(x, bottom_[0], training, dropout_rng);
  x = conv_block(x, bottom_[1], training, dropout_rng);
  for (int l = static_cast<int>(dec_.size()) - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    Tensor up = transposed_conv2(x, p(up_weight_[li]), p(up_bias_[li]));
    x = concat_cropped(skips[li], up);
    x = conv_block(x, dec_[li][0], training, dropout_rng);
    x = conv_block(x, dec_[li][1], training, dropout_rng);
  }
  Tensor logits = conv3d(x, p(out_.weight), p(out_.bias));
  return softmax_channels(logits);
}

void UNet::freeze_all_but_last(int keep_last) {
  const auto n = static_cast<int>(layers_.size());
  for (auto& prm : params_) {
    const auto layer = prm.name.substr(0, prm.name.rfind('.'));
    int pos = 0;
    while (pos < n && layers_[static_cast<std::size_t>(pos)] != layer) ++pos;
    const bool keep = pos >= n - keep_last;
    prm.trainable = prm.trainable && keep;
    prm.value.set_requires_grad(prm.trainable);
  }
}

// ---------------------------------------------------------------------------

CascadeConfig full_scale_cascade() {
  CascadeConfig c;
  c.low = UNetConfig{16, 4, 1, 2, 108, 0.0, false};
  c.high = UNetConfig{32, 4, 2, 3, 108, 0.0, false};
  c.resolution_ratio = 4;
  return c;
}

CascadeConfig toy_cascade() {
  CascadeConfig c;
  c.low = UNetConfig{2, 2, 1, 2, 36, 0.0, false};
  c.high = UNetConfig{4, 2, 2, 3, 36, 0.0, false};
  c.resolution_ratio = 2;
  return c;
}

namespace {
UNetConfig fine_config(const CascadeConfig& cfg) {
  UNetConfig h = cfg.high;
  h.in_channels = cfg.multires ? 2 : 1;
  return h;
}
}  // namespace

CascadeModel::CascadeModel(const CascadeConfig& cfg, Rng& rng) : cfg_(cfg), high_([&] {
  // coarse net draws from the generator first
  if (cfg.multires) low_.emplace(cfg.low, rng);
  return UNet(fine_config(cfg), rng);
}()) {
  cfg_.high.in_channels = high_.config().in_channels;
  if (cfg_.multires) {
    if (cfg_.resolution_ratio < 1) throw ShapeError("resolution ratio must be >= 1");
    if (cfg_.low.out_classes != 2) throw ShapeError("coarse net must emit 2 classes");
    check_offset(default_offset());
  }
}

MaskOffset CascadeModel::default_offset() const {
  const int pad = (cfg_.high.input_size - low_->output_size() * cfg_.resolution_ratio) / 2;
  return {pad, pad, pad};
}

void CascadeModel::check_offset(const MaskOffset& offset) const {
  const int span = low_->output_size() * cfg_.resolution_ratio;
  const int out_begin = (cfg_.high.input_size - high_.output_size()) / 2;
  const int out_end = out_begin + high_.output_size();
  for (int a = 0; a < 3; ++a) {
    if (offset[a] > out_begin || offset[a] + span < out_end) {
      throw AlignmentError("coarse mask placed at offset " + std::to_string(offset[a]) +
                           " does not cover the fine output region [" + std::to_string(out_begin) + ", " +
                           std::to_string(out_end) + ")");
    }
  }
}

Tensor CascadeModel::bridge_mask(const Tensor& low_probs, const MaskOffset& offset) const {
  Tensor fg = channel(low_probs, 1);
  Tensor up = upsample_nearest(fg, cfg_.resolution_ratio);
  const int n = cfg_.high.input_size;
  return window(up, {-offset[0], -offset[1], -offset[2]}, Extent3{n, n, n});
}

Tensor CascadeModel::forward_high_with_mask(const Tensor& high_patch, const Tensor& mask, bool training,
                                            Rng* dropout_rng) const {
  Tensor masked = mul(high_patch, mask);
  return high_.forward(concat_channels({high_patch, masked}), training, dropout_rng);
}

CascadeOutput CascadeModel::forward(const Tensor& low_patch, const Tensor& high_patch, bool training,
                                    Rng* dropout_rng, std::optional<MaskOffset> offset) const {
  const int hn = cfg_.high.input_size;
  if (high_patch.channels() != 1 || !(high_patch.extent() == Extent3{hn, hn, hn})) {
    throw AlignmentError("fine patch must be [1," + std::to_string(hn) + "^3], got " + shape_str(high_patch.shape()));
  }
  CascadeOutput out;
  if (!cfg_.multires) {
    out.high_probs = high_.forward(high_patch, training, dropout_rng);
    return out;
  }
  const int ln = cfg_.low.input_size;
  if (!low_patch.defined() || low_patch.channels() != 1 || !(low_patch.extent() == Extent3{ln, ln, ln})) {
    throw AlignmentError("coarse patch must be [1," + std::to_string(ln) + "^3]");
  }
  const MaskOffset off = offset.value_or(default_offset());
  check_offset(off);
  out.low_probs = low_->forward(low_patch, training, dropout_rng);
  out.high_probs = forward_high_with_mask(high_patch, bridge_mask(out.low_probs, off), training, dropout_rng);
  return out;
}

void CascadeModel::freeze_lowres() {
  if (low_) low_->freeze_all_but_last(kFrozenKeepLast);
}

std::vector<Parameter*> CascadeModel::parameters() {
  std::vector<Parameter*> out;
  if (low_) {
    for (auto& p : low_->parameters()) out.push_back(&p);
  }
  for (auto& p : high_.parameters()) out.push_back(&p);
  return out;
}

std::vector<std::string> CascadeModel::parameter_names() const {
  std::vector<std::string> out;
  if (low_) {
    for (const auto& p : low_->parameters()) out.push_back("low." + p.name);
  }
  for (const auto& p : high_.parameters()) out.push_back("high." + p.name);
  return out;
}
std::vector<const Parameter*> CascadeModel::parameters() const {
  std::vector<const Parameter*> out;
  if (low_) {
    for (const auto& p : low_->parameters()) out.push_back(&p);
  }
  for (const auto& p : high_.parameters()) out.push_back(&p);
  return out;
}

}  // namespace mrseg
