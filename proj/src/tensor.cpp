#include "mrseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "mrseg/errors.hpp"

namespace mrseg {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::span<double> grad_sink() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_sequence{1};
thread_local bool t_grad_enabled = true;

std::uint64_t next_sequence() { return g_sequence.fetch_add(1, std::memory_order_relaxed); }

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_count(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->seq = next_sequence();
  return n;
}

void require_rank4(const Tensor& t, const char* op) {
  if (t.shape().size() != 4) {
    throw ShapeError(std::string(op) + " expects a [C,D,H,W] tensor, got " + shape_str(t.shape()));
  }
}

inline std::size_t idx4(const Extent3& e, int c, int z, int y, int x) {
  return ((static_cast<std::size_t>(c) * e.d + z) * e.h + y) * e.w + x;
}

}  // namespace

struct TensorAccess {
  static const std::shared_ptr<detail::Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }
};

std::size_t shape_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_count(shape), value), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

Extent3 Tensor::extent() const {
  require_rank4(*this, "extent");
  return Extent3{node_->shape[1], node_->shape[2], node_->shape[3]};
}

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw ShapeError("cannot write the values of a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (node_->value.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(node_->shape));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }
Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }
std::uint64_t Tensor::sequence() const { return node_->seq; }

// ---------------------------------------------------------------------------
// Graph

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace {
thread_local BranchRecorder* t_recorder = nullptr;
}

BranchRecorder::BranchRecorder() : previous_(t_recorder) { t_recorder = this; }
BranchRecorder::~BranchRecorder() { t_recorder = previous_; }

void record_branch(std::uint64_t choice) {
  if (!t_recorder) return;
  auto& d = t_recorder->digest_;
  for (int b = 0; b < 8; ++b) {
    d ^= (choice >> (8 * b)) & 0xffU;
    d *= 0x100000001b3ULL;
  }
}

bool recording_branches() { return t_recorder != nullptr; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward) {
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = new_node(std::move(shape), std::move(values), needs);
  node->leaf = false;
  if (needs) {
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(TensorAccess::node(in));
    node->backward = std::move(backward);
  }
  return TensorAccess::wrap(std::move(node));
}

Tape::Tape(const Tensor& root) : root_(TensorAccess::node(root)) {
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{root_.get()};
  std::vector<std::shared_ptr<detail::Node>> found{root_};
  seen.insert(root_.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) {
        found.push_back(in);
        stack.push_back(in.get());
      }
    }
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });
  nodes_ = std::move(found);
  order_.reserve(nodes_.size());
  for (const auto& n : nodes_) order_.push_back(n->seq);
}

void Tape::backward() {
  if (root_->value.size() != 1) throw ShapeError("backward requires a scalar root");
  if (!root_->requires_grad) return;
  auto g = root_->grad_sink();
  g[0] += 1.0;
  GradSinks sinks;
  for (const auto& n : nodes_) {
    if (!n->backward) continue;
    sinks.clear();
    for (const auto& in : n->inputs) {
      sinks.push_back(in->requires_grad ? in->grad_sink() : std::span<double>{});
    }
    n->backward(n->grad_sink(), sinks);
    // interior gradients are consumed exactly once
    if (!n->leaf) std::vector<double>().swap(n->grad);
  }
}

void backward(const Tensor& root) { Tape(root).backward(); }

// ---------------------------------------------------------------------------
// Convolutions

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank4(input, "conv3d");
  const auto& ks = kernel.shape();
  if (ks.size() != 5 || ks[2] != ks[3] || ks[3] != ks[4]) {
    throw ShapeError("conv3d kernel must be [Co,Ci,k,k,k], got " + shape_str(ks));
  }
  const int co_n = ks[0], ci_n = ks[1], k = ks[2];
  if (ci_n != input.channels()) {
    throw ShapeError("conv3d kernel expects " + std::to_string(ci_n) + " input channels, got " +
                     std::to_string(input.channels()));
  }
  if (bias.size() != static_cast<std::size_t>(co_n)) throw ShapeError("conv3d bias length mismatch");
  const Extent3 ie = input.extent();
  if (ie.d < k || ie.h < k || ie.w < k) {
    throw ShapeError("conv3d spatial dims " + shape_str(input.shape()) + " smaller than kernel " +
                     std::to_string(k));
  }
  const Extent3 oe{ie.d - k + 1, ie.h - k + 1, ie.w - k + 1};

  const double* in = input.values().data();
  const double* w = kernel.values().data();
  const double* b = bias.values().data();
  std::vector<double> out(static_cast<std::size_t>(co_n) * oe.d * oe.h * oe.w);
  const std::size_t k3 = static_cast<std::size_t>(k) * k * k;

  for (int co = 0; co < co_n; ++co) {
    double* o = out.data() + idx4(oe, co, 0, 0, 0);
    std::fill(o, o + static_cast<std::size_t>(oe.d) * oe.h * oe.w, b[co]);
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* wk = w + (static_cast<std::size_t>(co) * ci_n + ci) * k3;
      for (int kz = 0; kz < k; ++kz)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const double wv = wk[(kz * k + ky) * k + kx];
            for (int z = 0; z < oe.d; ++z)
              for (int y = 0; y < oe.h; ++y) {
                const double* src = in + idx4(ie, ci, z + kz, y + ky, kx);
                double* dst = o + (static_cast<std::size_t>(z) * oe.h + y) * oe.w;
                for (int x = 0; x < oe.w; ++x) dst[x] += wv * src[x];
              }
          }
    }
  }

  return make_op(
      {co_n, oe.d, oe.h, oe.w}, std::move(out), {input, kernel, bias},
      [input, kernel, ie, oe, co_n, ci_n, k, k3](std::span<const double> g, GradSinks& sinks) {
        const double* in = input.values().data();
        const double* w = kernel.values().data();
        auto& gin = sinks[0];
        auto& gw = sinks[1];
        auto& gb = sinks[2];
        for (int co = 0; co < co_n; ++co) {
          const double* go = g.data() + idx4(oe, co, 0, 0, 0);
          if (!gb.empty()) {
            double s = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(oe.d) * oe.h * oe.w; ++i) s += go[i];
            gb[co] += s;
          }
          for (int ci = 0; ci < ci_n; ++ci) {
            const std::size_t wbase = (static_cast<std::size_t>(co) * ci_n + ci) * k3;
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const std::size_t wi = wbase + (kz * k + ky) * k + kx;
                  const double wv = w[wi];
                  // four partial sums so the reduction vectorises
                  double acc4[4] = {0, 0, 0, 0};
                  double acc = 0.0;
                  const int w4 = oe.w & ~3;
                  for (int z = 0; z < oe.d; ++z)
                    for (int y = 0; y < oe.h; ++y) {
                      const std::size_t src_off = idx4(ie, ci, z + kz, y + ky, kx);
                      const double* gr = go + (static_cast<std::size_t>(z) * oe.h + y) * oe.w;
                      if (!gw.empty()) {
                        const double* src = in + src_off;
                        for (int x = 0; x < w4; x += 4) {
                          acc4[0] += gr[x] * src[x];
                          acc4[1] += gr[x + 1] * src[x + 1];
                          acc4[2] += gr[x + 2] * src[x + 2];
                          acc4[3] += gr[x + 3] * src[x + 3];
                        }
                        for (int x = w4; x < oe.w; ++x) acc += gr[x] * src[x];
                      }
                      if (!gin.empty()) {
                        double* dst = gin.data() + src_off;
                        for (int x = 0; x < oe.w; ++x) dst[x] += wv * gr[x];
                      }
                    }
                  if (!gw.empty()) gw[wi] += acc + (acc4[0] + acc4[1]) + (acc4[2] + acc4[3]);
                }
          }
        }
      });
}

Tensor conv3d_valid(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  const auto& ks = kernel.shape();
  if (ks.size() != 5 || ks[2] != 3 || ks[3] != 3 || ks[4] != 3) {
    throw ShapeError("conv3d_valid expects a 3x3x3 kernel, got " + shape_str(ks));
  }
  return conv3d(input, kernel, bias);
}

Tensor transposed_conv2(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank4(input, "transposed_conv2");
  const auto& ks = kernel.shape();
  if (ks.size() != 5 || ks[2] != 2 || ks[3] != 2 || ks[4] != 2) {
    throw ShapeError("transposed_conv2 kernel must be [Ci,Co,2,2,2], got " + shape_str(ks));
  }
  const int ci_n = ks[0], co_n = ks[1];
  if (ci_n != input.channels()) throw ShapeError("transposed_conv2 input channel mismatch");
  if (bias.size() != static_cast<std::size_t>(co_n)) throw ShapeError("transposed_conv2 bias length mismatch");
  const Extent3 ie = input.extent();
  const Extent3 oe{ie.d * 2, ie.h * 2, ie.w * 2};
  const double* in = input.values().data();
  const double* w = kernel.values().data();
  const double* b = bias.values().data();
  std::vector<double> out(static_cast<std::size_t>(co_n) * oe.d * oe.h * oe.w);
  for (int co = 0; co < co_n; ++co) {
    double* o = out.data() + idx4(oe, co, 0, 0, 0);
    std::fill(o, o + static_cast<std::size_t>(oe.d) * oe.h * oe.w, b[co]);
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* wk = w + (static_cast<std::size_t>(ci) * co_n + co) * 8;
      for (int z = 0; z < ie.d; ++z)
        for (int a = 0; a < 2; ++a)
          for (int y = 0; y < ie.h; ++y)
            for (int bb = 0; bb < 2; ++bb) {
              const double* src = in + idx4(ie, ci, z, y, 0);
              double* dst = o + (static_cast<std::size_t>(2 * z + a) * oe.h + 2 * y + bb) * oe.w;
              const double w0 = wk[(a * 2 + bb) * 2], w1 = wk[(a * 2 + bb) * 2 + 1];
              for (int x = 0; x < ie.w; ++x) {
                dst[2 * x] += w0 * src[x];
                dst[2 * x + 1] += w1 * src[x];
              }
            }
    }
  }
  return make_op({co_n, oe.d, oe.h, oe.w}, std::move(out), {input, kernel, bias},
                 [input, kernel, ie, oe, ci_n, co_n](std::span<const double> g, GradSinks& sinks) {
                   const double* in = input.values().data();
                   const double* w = kernel.values().data();
                   auto& gin = sinks[0];
                   auto& gw = sinks[1];
                   auto& gb = sinks[2];
                   for (int co = 0; co < co_n; ++co) {
                     const double* go = g.data() + idx4(oe, co, 0, 0, 0);
                     if (!gb.empty()) {
                       double s = 0.0;
                       for (std::size_t i = 0; i < static_cast<std::size_t>(oe.d) * oe.h * oe.w; ++i) s += go[i];
                       gb[co] += s;
                     }
                     for (int ci = 0; ci < ci_n; ++ci) {
                       const std::size_t wbase = (static_cast<std::size_t>(ci) * co_n + co) * 8;
                       double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
                       for (int z = 0; z < ie.d; ++z)
                         for (int a = 0; a < 2; ++a)
                           for (int y = 0; y < ie.h; ++y)
                             for (int bb = 0; bb < 2; ++bb) {
                               const std::size_t src_off = idx4(ie, ci, z, y, 0);
                               const double* gr =
                                   go + (static_cast<std::size_t>(2 * z + a) * oe.h + 2 * y + bb) * oe.w;
                               const int kb = (a * 2 + bb) * 2;
                               const double w0 = w[wbase + kb], w1 = w[wbase + kb + 1];
                               for (int x = 0; x < ie.w; ++x) {
                                 const double g0 = gr[2 * x], g1 = gr[2 * x + 1];
                                 if (!gw.empty()) {
                                   acc[kb] += g0 * in[src_off + x];
                                   acc[kb + 1] += g1 * in[src_off + x];
                                 }
                                 if (!gin.empty()) gin[src_off + x] += w0 * g0 + w1 * g1;
                               }
                             }
                       if (!gw.empty()) {
                         for (int i = 0; i < 8; ++i) gw[wbase + i] += acc[i];
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Pooling, activations

Tensor maxpool2(const Tensor& input) {
  require_rank4(input, "maxpool2");
  const Extent3 ie = input.extent();
  if (ie.d % 2 || ie.h % 2 || ie.w % 2 || ie.d == 0) {
    throw ShapeError("maxpool2 requires even spatial dims, got " + shape_str(input.shape()));
  }
  const int c_n = input.channels();
  const Extent3 oe{ie.d / 2, ie.h / 2, ie.w / 2};
  const double* in = input.values().data();
  std::vector<double> out(static_cast<std::size_t>(c_n) * oe.d * oe.h * oe.w);
  std::vector<std::uint32_t> arg(out.size());
  std::size_t o = 0;
  for (int c = 0; c < c_n; ++c)
    for (int z = 0; z < oe.d; ++z)
      for (int y = 0; y < oe.h; ++y)
        for (int x = 0; x < oe.w; ++x, ++o) {
          std::size_t best = idx4(ie, c, 2 * z, 2 * y, 2 * x);
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int e = 0; e < 2; ++e) {
                const std::size_t i = idx4(ie, c, 2 * z + a, 2 * y + b, 2 * x + e);
                if (in[i] > in[best]) best = i;
              }
          out[o] = in[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
  if (recording_branches())
    for (auto a : arg) record_branch(a);
  return make_op({c_n, oe.d, oe.h, oe.w}, std::move(out), {input},
                 [arg = std::move(arg)](std::span<const double> g, GradSinks& sinks) {
                   if (sinks[0].empty()) return;
                   for (std::size_t i = 0; i < g.size(); ++i) sinks[0][arg[i]] += g[i];
                 });
}

Tensor relu(const Tensor& x) {
  auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  if (recording_branches()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      word = (word << 1) | (v[i] > 0.0 ? 1U : 0U);
      if (i % 64 == 63 || i + 1 == v.size()) {
        record_branch(word);
        word = 0;
      }
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [x](std::span<const double> g, GradSinks& sinks) {
    if (sinks[0].empty()) return;
    auto v = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (v[i] > 0.0) sinks[0][i] += g[i];
    }
  });
}

Tensor softmax_channels(const Tensor& x) {
  if (x.shape().empty()) throw ShapeError("softmax_channels on a scalar");
  const int c_n = x.shape()[0];
  const std::size_t n = x.size() / static_cast<std::size_t>(c_n);
  auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < n; ++i) {
    double m = v[i];
    for (int c = 1; c < c_n; ++c) m = std::max(m, v[c * n + i]);
    double s = 0.0;
    for (int c = 0; c < c_n; ++c) {
      out[c * n + i] = std::exp(v[c * n + i] - m);
      s += out[c * n + i];
    }
    for (int c = 0; c < c_n; ++c) out[c * n + i] /= s;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return make_op(x.shape(), std::move(out), {x}, [probs, c_n, n](std::span<const double> g, GradSinks& sinks) {
    if (sinks[0].empty()) return;
    const auto& p = *probs;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int c = 0; c < c_n; ++c) dot += g[c * n + i] * p[c * n + i];
      for (int c = 0; c < c_n; ++c) sinks[0][c * n + i] += p[c * n + i] * (g[c * n + i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor window(const Tensor& x, std::array<int, 3> start, Extent3 size) {
  require_rank4(x, "window");
  const Extent3 ie = x.extent();
  const int c_n = x.channels();
  const std::size_t out_n = static_cast<std::size_t>(c_n) * size.d * size.h * size.w;
  std::vector<double> out(out_n, 0.0);
  // flat map out index -> in index (or -1)
  auto map = std::make_shared<std::vector<std::int64_t>>(out_n, -1);
  auto v = x.values();
  std::size_t o = 0;
  for (int c = 0; c < c_n; ++c)
    for (int z = 0; z < size.d; ++z)
      for (int y = 0; y < size.h; ++y)
        for (int xx = 0; xx < size.w; ++xx, ++o) {
          const int sz = start[0] + z, sy = start[1] + y, sx = start[2] + xx;
          if (sz < 0 || sy < 0 || sx < 0 || sz >= ie.d || sy >= ie.h || sx >= ie.w) continue;
          const std::size_t i = idx4(ie, c, sz, sy, sx);
          out[o] = v[i];
          (*map)[o] = static_cast<std::int64_t>(i);
        }
  return make_op({c_n, size.d, size.h, size.w}, std::move(out), {x},
                 [map](std::span<const double> g, GradSinks& sinks) {
                   if (sinks[0].empty()) return;
                   for (std::size_t o = 0; o < g.size(); ++o) {
                     if ((*map)[o] >= 0) sinks[0][static_cast<std::size_t>((*map)[o])] += g[o];
                   }
                 });
}

Tensor crop_center(const Tensor& x, Extent3 size) {
  const Extent3 e = x.extent();
  if (size.d > e.d || size.h > e.h || size.w > e.w) {
    throw ShapeError("crop_center target larger than " + shape_str(x.shape()));
  }
  return window(x, {(e.d - size.d) / 2, (e.h - size.h) / 2, (e.w - size.w) / 2}, size);
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Extent3 e = parts[0].extent();
  int c_total = 0;
  for (const auto& p : parts) {
    if (!(p.extent() == e)) throw ShapeError("concat_channels spatial mismatch");
    c_total += p.channels();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(c_total) * e.d * e.h * e.w);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_op({c_total, e.d, e.h, e.w}, std::move(out), parts,
                 [offsets](std::span<const double> g, GradSinks& sinks) {
                   for (std::size_t k = 0; k < sinks.size(); ++k) {
                     auto& s = sinks[k];
                     for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[offsets[k] + i];
                   }
                 });
}

Tensor concat_cropped(const Tensor& skip, const Tensor& up) {
  const Extent3 se = skip.extent(), ue = up.extent();
  if (se.d < ue.d || se.h < ue.h || se.w < ue.w) {
    throw ShapeError("concat_cropped: skip " + shape_str(skip.shape()) + " smaller than " + shape_str(up.shape()));
  }
  return concat_channels({crop_center(skip, ue), up});
}

Tensor channel(const Tensor& x, int c) {
  require_rank4(x, "channel");
  if (c < 0 || c >= x.channels()) throw ShapeError("channel index out of range");
  const Extent3 e = x.extent();
  const std::size_t n = static_cast<std::size_t>(e.d) * e.h * e.w;
  auto v = x.values();
  std::vector<double> out(v.begin() + c * n, v.begin() + (c + 1) * n);
  return make_op({1, e.d, e.h, e.w}, std::move(out), {x}, [c, n](std::span<const double> g, GradSinks& sinks) {
    if (sinks[0].empty()) return;
    for (std::size_t i = 0; i < n; ++i) sinks[0][c * n + i] += g[i];
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank4(x, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample factor must be >= 1");
  const Extent3 ie = x.extent();
  const Extent3 oe{ie.d * factor, ie.h * factor, ie.w * factor};
  const int c_n = x.channels();
  auto v = x.values();
  std::vector<double> out(static_cast<std::size_t>(c_n) * oe.d * oe.h * oe.w);
  std::size_t o = 0;
  for (int c = 0; c < c_n; ++c)
    for (int z = 0; z < oe.d; ++z)
      for (int y = 0; y < oe.h; ++y)
        for (int xx = 0; xx < oe.w; ++xx, ++o) out[o] = v[idx4(ie, c, z / factor, y / factor, xx / factor)];
  return make_op({c_n, oe.d, oe.h, oe.w}, std::move(out), {x},
                 [ie, oe, c_n, factor](std::span<const double> g, GradSinks& sinks) {
                   if (sinks[0].empty()) return;
                   std::size_t o = 0;
                   for (int c = 0; c < c_n; ++c)
                     for (int z = 0; z < oe.d; ++z)
                       for (int y = 0; y < oe.h; ++y)
                         for (int xx = 0; xx < oe.w; ++xx, ++o)
                           sinks[0][idx4(ie, c, z / factor, y / factor, xx / factor)] += g[o];
                 });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g, GradSinks& sinks) {
    auto av = a.values(), bv = b.values();
    if (!sinks[0].empty())
      for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] += g[i] * bv[i];
    if (!sinks[1].empty())
      for (std::size_t i = 0; i < g.size(); ++i) sinks[1][i] += g[i] * av[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add shape mismatch");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](std::span<const double> g, GradSinks& sinks) {
    for (auto& s : sinks)
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * factor;
  return make_op(x.shape(), std::move(out), {x}, [factor](std::span<const double> g, GradSinks& sinks) {
    for (std::size_t i = 0; i < sinks[0].size(); ++i) sinks[0][i] += g[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  auto v = x.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_op({1}, {s}, {x}, [](std::span<const double> g, GradSinks& sinks) {
    for (auto& d : sinks[0]) d += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// ---------------------------------------------------------------------------
// Regularisation / normalisation

Tensor spatial_dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidRate("dropout rate must lie in [0, 1)");
  require_rank4(x, "spatial_dropout");
  if (!training || rate == 0.0) return x;
  const int c_n = x.channels();
  const std::size_t n = x.size() / static_cast<std::size_t>(c_n);
  std::vector<double> factor(static_cast<std::size_t>(c_n));
  for (int c = 0; c < c_n; ++c) factor[c] = rng.bernoulli(rate) ? 0.0 : 1.0 / (1.0 - rate);
  auto v = x.values();
  std::vector<double> out(v.size());
  for (int c = 0; c < c_n; ++c)
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = v[c * n + i] * factor[c];
  return make_op(x.shape(), std::move(out), {x}, [factor, n](std::span<const double> g, GradSinks& sinks) {
    if (sinks[0].empty()) return;
    for (std::size_t c = 0; c < factor.size(); ++c)
      for (std::size_t i = 0; i < n; ++i) sinks[0][c * n + i] += g[c * n + i] * factor[c];
  });
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  require_rank4(x, "channel_norm");
  const int c_n = x.channels();
  if (gain.size() != static_cast<std::size_t>(c_n) || shift.size() != static_cast<std::size_t>(c_n)) {
    throw ShapeError("channel_norm affine parameters must have one entry per channel");
  }
  const std::size_t n = x.size() / static_cast<std::size_t>(c_n);
  auto v = x.values();
  auto gv = gain.values(), sv = shift.values();
  auto xhat = std::make_shared<std::vector<double>>(v.size());
  std::vector<double> inv_std(static_cast<std::size_t>(c_n));
  std::vector<double> out(v.size());
  for (int c = 0; c < c_n; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += v[c * n + i];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (v[c * n + i] - m) * (v[c * n + i] - m);
    var /= static_cast<double>(n);
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      (*xhat)[c * n + i] = (v[c * n + i] - m) * inv_std[c];
      out[c * n + i] = gv[c] * (*xhat)[c * n + i] + sv[c];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gain, shift},
                 [xhat, inv_std, gain, n, c_n](std::span<const double> g, GradSinks& sinks) {
                   auto gv = gain.values();
                   const auto& xh = *xhat;
                   for (int c = 0; c < c_n; ++c) {
                     double sg = 0.0, sgx = 0.0;
                     for (std::size_t i = 0; i < n; ++i) {
                       sg += g[c * n + i];
                       sgx += g[c * n + i] * xh[c * n + i];
                     }
                     if (!sinks[1].empty()) sinks[1][c] += sgx;
                     if (!sinks[2].empty()) sinks[2][c] += sg;
                     if (!sinks[0].empty()) {
                       const double k = gv[c] * inv_std[c] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         sinks[0][c * n + i] +=
                             k * (static_cast<double>(n) * g[c * n + i] - sg - xh[c * n + i] * sgx);
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------

GradcheckResult gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                          std::size_t max_elements, double floor) {
  Tensor probe(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  Tensor y = f(probe);
  backward(y);
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  const std::size_t n = probe.size();
  const std::size_t stride = (max_elements == 0 || max_elements >= n) ? 1 : n / max_elements;
  GradcheckResult r;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < n; i += stride) {
    std::vector<double> base(x.values().begin(), x.values().end());
    base[i] += eps;
    const double fp = f(Tensor(x.shape(), base)).item();
    base[i] -= 2.0 * eps;
    const double fm = f(Tensor(x.shape(), base)).item();
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
    ++r.checked;
  }
  return r;
}

GradcheckResult gradcheck_parameter(const std::function<Tensor()>& loss, Tensor param, double eps,
                                    std::size_t max_elements, double floor, bool smooth_only) {
  const bool was = param.requires_grad();
  param.set_requires_grad(true);
  param.zero_grad();
  std::uint64_t base_digest = 0;
  {
    BranchRecorder rec;
    backward(loss());
    base_digest = rec.digest();
  }
  std::vector<double> analytic(param.grad().begin(), param.grad().end());

  const std::size_t n = param.size();
  const std::size_t stride = (max_elements == 0 || max_elements >= n) ? 1 : n / max_elements;
  GradcheckResult r;
  NoGradGuard no_grad;
  auto v = param.mutable_values();
  const auto eval = [&](std::size_t i, double value, std::uint64_t& digest) {
    v[i] = value;
    BranchRecorder rec;
    const double f = loss().item();
    digest = rec.digest();
    return f;
  };
  for (std::size_t start = 0; start < n; start += stride) {
    for (std::size_t i = start; i < std::min(n, start + stride); ++i) {
      const double orig = v[i];
      std::uint64_t dp = 0, dm = 0;
      const double fp = eval(i, orig + eps, dp);
      const double fm = eval(i, orig - eps, dm);
      v[i] = orig;
      if (smooth_only && (dp != base_digest || dm != base_digest)) {
        ++r.straddled;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_index = i;
      }
      ++r.checked;
      break;
    }
  }
  param.set_requires_grad(was);
  param.zero_grad();
  return r;
}

}  // namespace mrseg
