#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mrseg/rng.hpp"

namespace mrseg {

using Shape = std::vector<int>;

std::size_t shape_count(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Spatial extent of a [C, D, H, W] tensor.
struct Extent3 {
  int d = 0;
  int h = 0;
  int w = 0;
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

namespace detail {
struct Node;
}

/// Dense tensor of 64-bit values taking part in a recorded computation
/// graph. Copies share storage (handle semantics); `clone` deep-copies.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);

  const Shape& shape() const;
  int dim(int i) const { return shape()[static_cast<std::size_t>(i)]; }
  std::size_t size() const;
  int channels() const { return dim(0); }
  Extent3 extent() const;  // requires rank 4

  std::span<const double> values() const;
  /// Direct write access; only legal on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  bool defined() const { return static_cast<bool>(node_); }
  std::uint64_t sequence() const;

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Gradient sinks handed to a backward function, one per input; a sink is
/// empty when that input does not require a gradient.
using GradSinks = std::vector<std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSinks& sinks)>;

/// Records a new graph node. `backward` receives the upstream gradient and
/// must accumulate (+=) into the sinks of `inputs`.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Execution-ordered record of the nodes reachable from a root. Backward
/// walks it in exact reverse order, so every use of a tensor has deposited
/// its gradient before that tensor's own backward runs.
class Tape {
 public:
  explicit Tape(const Tensor& root);
  const std::vector<std::uint64_t>& order() const { return order_; }
  void backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<std::uint64_t> order_;
  std::shared_ptr<detail::Node> root_;
};

/// Reverse-mode sweep from a scalar root; gradients accumulate into leaves.
void backward(const Tensor& root);

// ----------------------------------------------------------------------------
// Operations. Activations are [C, D, H, W]; convolution kernels are
// [C_out, C_in, k, k, k]; transposed kernels are [C_in, C_out, 2, 2, 2].

/// Valid (unpadded) 3-D convolution with a cubic kernel; output shrinks by k-1.
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias);
/// conv3d restricted to 3x3x3 kernels.
Tensor conv3d_valid(const Tensor& input, const Tensor& kernel, const Tensor& bias);
/// 2x2x2 max pooling, stride 2; spatial dims must be even.
Tensor maxpool2(const Tensor& input);
/// Kernel-2, stride-2 transposed convolution; doubles each spatial dim.
Tensor transposed_conv2(const Tensor& input, const Tensor& kernel, const Tensor& bias);
Tensor relu(const Tensor& x);
/// Softmax over the channel axis of a [C, ...] tensor.
Tensor softmax_channels(const Tensor& x);
/// Centre-crops `skip` to the spatial size of `up` and stacks [skip, up].
Tensor concat_cropped(const Tensor& skip, const Tensor& up);
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Single channel `c` as a [1, D, H, W] tensor.
Tensor channel(const Tensor& x, int c);
/// Window read: out[c, i] = x[c, start + i] inside bounds, 0 elsewhere.
/// Negative starts zero-pad, positive starts crop.
Tensor window(const Tensor& x, std::array<int, 3> start, Extent3 size);
Tensor crop_center(const Tensor& x, Extent3 size);
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Channel dropout: in training every channel is zeroed with probability
/// `rate` over its full spatial extent and survivors are scaled by
/// 1/(1-rate). Identity when not training.
Tensor spatial_dropout(const Tensor& x, double rate, Rng& rng, bool training);

/// Per-channel normalisation over the spatial extent, with affine gain/shift
/// tensors of shape [C].
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

// ----------------------------------------------------------------------------

/// While alive, piecewise ops (relu, maxpool2, top-k selection) fold their
/// discrete branch choices into a digest on this thread. Two evaluations with
/// equal digests lie on the same smooth piece of the function.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t digest() const { return digest_; }

 private:
  friend void record_branch(std::uint64_t);
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
  BranchRecorder* previous_;
};

/// Folds a branch choice into the active recorder, if any.
void record_branch(std::uint64_t choice);
bool recording_branches();

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t straddled = 0;  // coordinates skipped because x +/- eps changed a branch
};

/// Compares the reverse-mode gradient of scalar f at x against central
/// differences. Relative error per element is |a-n| / max(|a|, |n|, floor).
/// `max_elements` (0 = all) checks an evenly strided subset.
GradcheckResult gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-4,
                          std::size_t max_elements = 0, double floor = 1e-6);

/// With `smooth_only`, a coordinate whose +/- eps evaluations take a different
/// branch than the base point is skipped (counted in `straddled`) and the next
/// coordinate is tried instead, since central differences are not a gradient
/// oracle across a kink.

/// Same comparison for a leaf tensor `param` that `loss` reads implicitly
/// (network weights). `param` is perturbed in place and restored.
GradcheckResult gradcheck_parameter(const std::function<Tensor()>& loss, Tensor param, double eps = 1e-4,
                                    std::size_t max_elements = 0, double floor = 1e-6, bool smooth_only = false);

}  // namespace mrseg
