#include "mrseg/infer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "mrseg/errors.hpp"
#include "mrseg/sampler.hpp"

namespace mrseg {

double ProbabilityMaps::max_sum_error() const {
  if (classes.empty()) return 0.0;
  double worst = 0.0;
  const std::size_t n = classes[0].size();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (const auto& v : classes) s += v.data()[i];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

namespace {

struct Canvas {
  Dims3 dims;
  std::vector<std::vector<float>> data;

  Canvas(Dims3 d, int classes) : dims(d), data(static_cast<std::size_t>(classes), std::vector<float>(d.count(), 0.0f)) {}

  // Copies the in-bounds part of a [C, o, o, o] output tile placed at `corner`.
  void paste(const Tensor& probs, Index3 corner) {
    const Extent3 e = probs.extent();
    auto v = probs.values();
    const std::size_t plane = static_cast<std::size_t>(e.d) * e.h * e.w;
    for (std::size_t c = 0; c < data.size(); ++c) {
      auto& out = data[c];
      for (int z = 0; z < e.d; ++z) {
        const int gz = corner.z + z;
        if (gz >= dims.nz) break;
        for (int y = 0; y < e.h; ++y) {
          const int gy = corner.y + y;
          if (gy >= dims.ny) break;
          for (int x = 0; x < e.w; ++x) {
            const int gx = corner.x + x;
            if (gx >= dims.nx) break;
            out[static_cast<std::size_t>(gx) + static_cast<std::size_t>(dims.nx) * (gy + static_cast<std::size_t>(dims.ny) * gz)] =
                static_cast<float>(v[c * plane + (static_cast<std::size_t>(z) * e.h + y) * e.w + x]);
          }
        }
      }
    }
  }

  ProbabilityMaps finish(const Volume& ref) {
    ProbabilityMaps m;
    for (auto& d : data) m.classes.push_back(ref.with_data(std::move(d), VolumeKind::Probability));
    return m;
  }
};

Tensor cube_patch(const Volume& vol, Index3 start, int size) {
  auto v = mirror_crop(vol, start, size);
  return Tensor({1, size, size, size}, std::vector<double>(v.begin(), v.end()));
}

// Runs fn(corner) for every corner, on up to `workers` threads.
template <typename Fn>
void for_tiles(const std::vector<Index3>& corners, int workers, Fn&& fn) {
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(corners.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    NoGradGuard guard;
    try {
      for (std::size_t i = next++; i < corners.size(); i = next++) fn(corners[i]);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      next = corners.size();
    }
  };
  if (n == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

void check_single_channel(const UNet& net) {
  if (net.config().in_channels != 1) throw ShapeError("direct inference needs a single-channel network");
}

Index3 shifted(Index3 a, int m) { return {a.x - m, a.y - m, a.z - m}; }

}  // namespace

ProbabilityMaps predict_unet(const UNet& net, const Volume& ct, const InferenceOptions& opt) {
  check_single_channel(net);
  const int in = net.config().input_size, out = net.output_size();
  const int half = (in - out) / 2;
  const auto grid = inference_patch_grid(ct.dims(), in, out);
  Canvas canvas(ct.dims(), net.config().out_classes);
  for_tiles(grid.corners(), opt.workers, [&](Index3 c) { canvas.paste(net.forward(cube_patch(ct, shifted(c, half), in)), c); });
  return canvas.finish(ct);
}

ProbabilityMaps predict_unet_whole(const UNet& net, const Volume& ct) {
  check_single_channel(net);
  const int half = (net.config().input_size - net.output_size()) / 2;
  const Dims3 d = ct.dims();
  const Dims3 p{d.nx + 2 * half, d.ny + 2 * half, d.nz + 2 * half};
  for (int a = 0; a < 3; ++a) {
    UNetConfig probe = net.config();
    probe.input_size = p[a];
    if (unet_output_size(probe) != d[a]) throw ShapeError("padded extent does not map back onto the volume");
  }
  std::vector<double> v(p.count());
  std::size_t o = 0;
  for (int z = 0; z < p.nz; ++z)
    for (int y = 0; y < p.ny; ++y)
      for (int x = 0; x < p.nx; ++x)
        v[o++] = ct.at(mirror_index(x - half, d.nx), mirror_index(y - half, d.ny), mirror_index(z - half, d.nz));
  NoGradGuard guard;
  const Tensor probs = net.forward(Tensor({1, p.nz, p.ny, p.nx}, std::move(v)));
  Canvas canvas(d, net.config().out_classes);
  canvas.paste(probs, {0, 0, 0});
  return canvas.finish(ct);
}

CascadePrediction predict_volume(const CascadeModel& model, const Volume& high_ct, const Volume* low_ct,
                                 const InferenceOptions& opt) {
  CascadePrediction result;
  if (!model.multires()) {
    result.high = predict_unet(model.high(), high_ct, opt);
    return result;
  }
  if (!low_ct) throw AlignmentError("multi-resolution model needs a coarse volume");
  const PairGeometry g = pair_geometry(model);
  for (int a = 0; a < 3; ++a) {
    if (std::abs(low_ct->spacing()[a] - g.ratio * high_ct.spacing()[a]) > 1e-6 * low_ct->spacing()[a]) {
      throw AlignmentError("coarse spacing is not " + std::to_string(g.ratio) + "x the fine spacing");
    }
  }
  const int half_h = (g.high_input - g.high_output) / 2;
  const int half_l = (g.low_input - g.low_output) / 2;
  const auto grid = inference_patch_grid(high_ct.dims(), g.high_input, g.high_output);
  Canvas canvas(high_ct.dims(), model.config().high.out_classes);
  for_tiles(grid.corners(), opt.workers, [&](Index3 c) {
    const Index3 cc = coarse_corner_for(c, g);
    const auto out = model.forward(cube_patch(*low_ct, shifted(cc, half_l), g.low_input),
                                   cube_patch(high_ct, shifted(c, half_h), g.high_input), false, nullptr,
                                   mask_offset_for(c, cc, g));
    canvas.paste(out.high_probs, c);
  });
  result.high = canvas.finish(high_ct);
  result.low = predict_unet(model.low(), *low_ct, opt);
  return result;
}

ProbabilityMaps ensemble(const ProbabilityMaps& a, const ProbabilityMaps& b) {
  if (a.class_count() != b.class_count() || a.classes.empty()) throw AlignmentError("ensemble inputs differ in classes");
  ProbabilityMaps m;
  for (int c = 0; c < a.class_count(); ++c) {
    if (!a[c].same_geometry(b[c])) throw AlignmentError("ensemble inputs differ in geometry");
    auto va = a[c].data();
    auto vb = b[c].data();
    std::vector<float> out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = 0.5f * (va[i] + vb[i]);
    m.classes.push_back(a[c].with_data(std::move(out), VolumeKind::Probability));
  }
  return m;
}

Volume argmax_labels(const ProbabilityMaps& maps) {
  if (maps.classes.empty()) throw ShapeError("no classes to decide between");
  const std::size_t n = maps[0].size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    float bv = maps[0].data()[i];
    for (int c = 1; c < maps.class_count(); ++c) {
      const float v = maps[c].data()[i];
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out[i] = static_cast<float>(best);
  }
  return maps[0].with_data(std::move(out), VolumeKind::Labels);
}

Mask upsample_mask(const Mask& coarse, Dims3 cd, Dims3 fd, int ratio) {
  if (coarse.size() != cd.count()) throw ShapeError("coarse mask size does not match dims");
  if (ratio < 1) throw InvalidRange("upsampling ratio must be positive");
  Mask out(fd.count());
  std::size_t o = 0;
  for (int z = 0; z < fd.nz; ++z) {
    const int cz = std::min(z / ratio, cd.nz - 1);
    for (int y = 0; y < fd.ny; ++y) {
      const int cy = std::min(y / ratio, cd.ny - 1);
      for (int x = 0; x < fd.nx; ++x) {
        const int cx = std::min(x / ratio, cd.nx - 1);
        out[o++] = coarse[static_cast<std::size_t>(cx) + static_cast<std::size_t>(cd.nx) * (cy + static_cast<std::size_t>(cd.ny) * cz)];
      }
    }
  }
  return out;
}

Mask gate_mask(const Volume& low_foreground, const Volume& fine_reference, int ratio, double threshold,
               int dilation_iterations) {
  auto v = low_foreground.data();
  Mask coarse(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) coarse[i] = v[i] > threshold ? 1 : 0;
  return dilate(upsample_mask(coarse, low_foreground.dims(), fine_reference.dims(), ratio), fine_reference.dims(),
                dilation_iterations);
}

Volume remove_detached_abnormalities(const Volume& labels) {
  const Dims3 d = labels.dims();
  const Mask paren = label_mask(labels, labels::kParenchyma);
  const Mask abn = label_mask(labels, labels::kAbnormality);
  const Components comp = connected_components(abn, d);
  std::vector<std::uint8_t> attached(static_cast<std::size_t>(comp.count) + 1, 0);
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        const int k = comp.label[i];
        if (k && !attached[k] && touches(paren, d, x, y, z)) attached[k] = 1;
      }
  std::vector<float> out(labels.data().begin(), labels.data().end());
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (comp.label[j] && !attached[comp.label[j]]) out[j] = labels::kBackground;
  }
  return labels.with_data(std::move(out));
}

SegmentationResult postprocess(const ProbabilityMaps& high, const ProbabilityMaps* low, int ratio,
                               const PostprocessConfig& cfg) {
  SegmentationResult r;
  Volume labels = argmax_labels(high);
  if (cfg.gate && low && low->class_count() >= 2) {
    const Mask gate = gate_mask((*low)[1], labels, ratio, cfg.threshold, cfg.dilation_iterations);
    std::vector<float> v(labels.data().begin(), labels.data().end());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!gate[i]) v[i] = labels::kBackground;
    }
    labels = labels.with_data(std::move(v));
    r.gated = true;
  }
  if (cfg.remove_detached) {
    labels = remove_detached_abnormalities(labels);
    r.detached_removed = true;
  }
  r.format1 = merge_format1(labels);
  r.labels = std::move(labels);
  return r;
}

std::pair<Volume, Volume> split_left_right(const Volume& format1) {
  const Dims3 d = format1.dims();
  Mask fg(format1.size());
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = format1.data()[i] != 0.0f;
  const Components comp = connected_components(fg, d);
  std::vector<double> sx(static_cast<std::size_t>(comp.count) + 1, 0.0);
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        if (comp.label[i]) sx[comp.label[i]] += x;
      }
  const double mid = 0.5 * (d.nx - 1);
  std::vector<std::uint8_t> is_right(sx.size(), 0);
  for (int k = 1; k <= comp.count; ++k) is_right[k] = sx[k] / static_cast<double>(comp.sizes[k]) < mid;
  std::vector<float> left(fg.size(), 0.0f), right(fg.size(), 0.0f);
  for (std::size_t j = 0; j < fg.size(); ++j) {
    const int k = comp.label[j];
    if (!k) continue;
    (is_right[k] ? right : left)[j] = labels::kKidney;
  }
  return {format1.with_data(std::move(left), VolumeKind::Labels), format1.with_data(std::move(right), VolumeKind::Labels)};
}

ProbabilityMaps one_hot(const Volume& labels, int classes) {
  ProbabilityMaps m;
  for (int c = 0; c < classes; ++c) {
    std::vector<float> v(labels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = labels.data()[i] == static_cast<float>(c) ? 1.0f : 0.0f;
    m.classes.push_back(labels.with_data(std::move(v), VolumeKind::Probability));
  }
  return m;
}

}  // namespace mrseg
