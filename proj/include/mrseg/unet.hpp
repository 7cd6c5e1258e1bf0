#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mrseg/rng.hpp"
#include "mrseg/tensor.hpp"

namespace mrseg {

struct UNetConfig {
  int base_filters = 16;
  int levels = 4;  // resolution levels; levels - 1 poolings
  int in_channels = 1;
  int out_classes = 2;
  int input_size = 108;
  double dropout_rate = 0.0;  // spatial dropout after each conv+relu; 0 disables
  bool channel_norm = false;  // per-channel normalisation before each relu

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Total shrinkage of a valid-convolution U-Net with two 3x3x3 convolutions
/// per stage: 8*(2^(L-1) - 1) + 4*2^(L-1). 16 for L=2, 88 for L=4.
int valid_margin(int levels);

/// Output size per axis for `cfg`; throws ShapeError naming the first level
/// where the geometry breaks (non-positive size or odd size before pooling).
int unet_output_size(const UNetConfig& cfg);

/// Glorot/Xavier uniform limit sqrt(6 / (fan_in + fan_out)).
double glorot_limit(double fan_in, double fan_out);

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

/// Valid-convolution 3-D U-Net: per level [conv3, relu, conv3, relu], max
/// pooling down, transposed convolution plus centre-cropped skip
/// concatenation up, and a final 1x1x1 convolution with channel softmax.
class UNet {
 public:
  /// Weights ~ U(-L, L) with the Glorot limit; biases 0.
  UNet(const UNetConfig& cfg, Rng& rng);

  /// Class probabilities [out_classes, out, out, out]. `dropout_rng` is
  /// required when training with a non-zero dropout rate.
  Tensor forward(const Tensor& input, bool training = false, Rng* dropout_rng = nullptr) const;

  const UNetConfig& config() const { return cfg_; }
  int output_size() const { return output_size_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);

  /// Names of parameterised layers in forward order (each owns a weight and a
  /// bias, plus normalisation gain/shift when enabled).
  const std::vector<std::string>& layer_names() const { return layers_; }

  /// Marks every parameter non-trainable except those of the last
  /// `keep_last` parameterised layers. Idempotent.
  void freeze_all_but_last(int keep_last);

 private:
  struct Conv {
    int weight = -1, bias = -1, gain = -1, shift = -1;
  };
  Conv add_conv(const std::string& name, int c_out, int c_in, int k, Rng& rng);
  int add_tconv(const std::string& name, int c_in, int c_out, Rng& rng);
  Tensor conv_block(const Tensor& x, const Conv& c, bool training, Rng* rng) const;
  const Tensor& p(int i) const { return params_[static_cast<std::size_t>(i)].value; }

  UNetConfig cfg_;
  int output_size_ = 0;
  std::vector<Parameter> params_;
  std::vector<std::string> layers_;
  std::vector<std::array<Conv, 2>> enc_;  // levels - 1 encoder stages
  std::array<Conv, 2> bottom_;
  std::vector<int> up_weight_, up_bias_;  // per decoder level
  std::vector<std::array<Conv, 2>> dec_;
  Conv out_;
};

struct CascadeConfig {
  UNetConfig low;   // coarse localisation net, format-1 labels
  UNetConfig high;  // fine net, format-2 labels
  int resolution_ratio = 4;  // coarse spacing / fine spacing
  bool multires = true;      // false: single-input fine net only

  friend bool operator==(const CascadeConfig&, const CascadeConfig&) = default;
};

/// Full-scale geometry: 108^3 patches, 4 levels, 16/32 base filters.
CascadeConfig full_scale_cascade();
/// Desk-scale geometry: 36^3 -> 20^3 with 2 levels, base filters 2/4, ratio 2.
CascadeConfig toy_cascade();

struct CascadeOutput {
  Tensor low_probs;   // [2, out, out, out]; undefined when !multires
  Tensor high_probs;  // [3, out, out, out]
};

/// Zero-pad (positive) or crop (negative) offset that places the upsampled
/// coarse output inside the fine input, per axis in (z, y, x) order.
using MaskOffset = std::array<int, 3>;

/// Two sub-networks trained end to end. The coarse foreground probability is
/// nearest-upsampled by the resolution ratio, placed into the fine patch
/// frame with zero padding, multiplied with the raw fine patch, and stacked
/// with it as the fine net's two-channel input.
class CascadeModel {
 public:
  CascadeModel(const CascadeConfig& cfg, Rng& rng);

  const CascadeConfig& config() const { return cfg_; }
  bool multires() const { return cfg_.multires; }
  UNet& low() { return *low_; }
  const UNet& low() const { return *low_; }
  UNet& high() { return high_; }
  const UNet& high() const { return high_; }
  int output_size() const { return high_.output_size(); }

  /// Symmetric placement offset: (fine input - coarse output * ratio) / 2.
  MaskOffset default_offset() const;

  /// Throws AlignmentError when `offset` leaves part of the fine output
  /// region outside the placed mask.
  void check_offset(const MaskOffset& offset) const;

  CascadeOutput forward(const Tensor& low_patch, const Tensor& high_patch, bool training = false,
                        Rng* dropout_rng = nullptr, std::optional<MaskOffset> offset = std::nullopt) const;

  /// The placed, upsampled soft mask for a coarse output.
  Tensor bridge_mask(const Tensor& low_probs, const MaskOffset& offset) const;

  /// Fine net on (patch, patch * mask).
  Tensor forward_high_with_mask(const Tensor& high_patch, const Tensor& mask, bool training = false,
                                Rng* dropout_rng = nullptr) const;

  /// Freezes the coarse net except its last three parameterised layers.
  void freeze_lowres();

  /// Every parameter of both nets, coarse first.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  /// Names matching parameters(), prefixed "low." or "high.".
  std::vector<std::string> parameter_names() const;

 private:
  CascadeConfig cfg_;
  std::optional<UNet> low_;
  UNet high_;
};

inline constexpr int kFrozenKeepLast = 3;

}  // namespace mrseg
