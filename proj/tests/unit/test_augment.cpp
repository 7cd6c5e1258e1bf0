#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>

#include "mrseg/augment.hpp"
#include "mrseg/sampler.hpp"

using namespace mrseg;

namespace {

const PairGeometry kGeom{36, 20, 36, 20, 2};

PatchSample smooth_sample() {
  std::vector<float> ct(60 * 60 * 60), lab(60 * 60 * 60), cct(30 * 30 * 30), clab(30 * 30 * 30);
  for (int z = 0; z < 60; ++z)
    for (int y = 0; y < 60; ++y)
      for (int x = 0; x < 60; ++x) {
        const double r = std::sqrt((x - 30.0) * (x - 30.0) + (y - 28.0) * (y - 28.0) + (z - 31.0) * (z - 31.0));
        const auto i = static_cast<std::size_t>((z * 60 + y) * 60 + x);
        ct[i] = static_cast<float>(100.0 * std::sin(0.1 * x) + 3.0 * y - z);
        lab[i] = r < 8 ? 1.0f : 0.0f;
      }
  for (int z = 0; z < 30; ++z)
    for (int y = 0; y < 30; ++y)
      for (int x = 0; x < 30; ++x) {
        const auto i = static_cast<std::size_t>((z * 30 + y) * 30 + x);
        cct[i] = static_cast<float>(2.0 * x - y);
        const double r = std::sqrt((2 * x + 0.5 - 30.0) * (2 * x + 0.5 - 30.0) + (2 * y + 0.5 - 28.0) * (2 * y + 0.5 - 28.0) +
                                   (2 * z + 0.5 - 31.0) * (2 * z + 0.5 - 31.0));
        clab[i] = r < 8 ? 1.0f : 0.0f;
      }
  const Volume fine({60, 60, 60}, {1, 1, 1}, {0, 0, 0}, VolumeKind::Intensity, ct);
  const Volume fl({60, 60, 60}, {1, 1, 1}, {0, 0, 0}, VolumeKind::Labels, lab);
  const Volume coarse({30, 30, 30}, {2, 2, 2}, {0, 0, 0}, VolumeKind::Intensity, cct);
  const Volume cl({30, 30, 30}, {2, 2, 2}, {0, 0, 0}, VolumeKind::Labels, clab);
  return make_sample(fine, fl, &coarse, &cl, {20, 18, 21}, kGeom);
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace

TEST_CASE("legal transform sets") {
  const auto sets = legal_transform_sets(3);
  for (unsigned s : sets) {
    CHECK(std::popcount(s) >= 1);
    CHECK(std::popcount(s) <= 3);
    if (s & 16u) CHECK((s & 12u) == 12u);
  }
  // 5 singles + 10 pairs + 10 triples, minus elastic alone, its 4 pairs and 5 of its 6 triples
  CHECK(sets.size() == 15);
}

TEST_CASE("plan frequencies and reproducibility") {
  Rng rng(11);
  int non_identity = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto p = draw_plan(rng);
    if (!p.identity()) ++non_identity;
    CHECK(p.count() <= 3);
    if (p.has(Transform::Elastic)) {
      CHECK(p.has(Transform::Blur));
      CHECK(p.has(Transform::Intensity));
      CHECK(p.displacements.size() == 10u * 10 * 10 * 3);
    }
    if (p.has(Transform::Scale)) {
      CHECK(p.scale >= 0.95);
      CHECK(p.scale <= 1.05);
    }
    if (p.has(Transform::Intensity)) CHECK(std::abs(p.intensity_shift) <= 20.0);
    for (double d : p.rotation_deg) CHECK(std::abs(d) <= 5.0);
  }
  CHECK(static_cast<double>(non_identity) / n == doctest::Approx(0.7).epsilon(0.03));
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    const auto x = draw_plan(a), y = draw_plan(b);
    CHECK(x.applied == y.applied);
    CHECK(x.scale == y.scale);
    CHECK(x.displacements == y.displacements);
  }
  AugmentConfig off;
  off.enabled = false;
  for (int i = 0; i < 100; ++i) CHECK(draw_plan(rng, off).identity());
}

TEST_CASE("neutral geometric plans are the identity") {
  const auto s = smooth_sample();
  AugmentPlan unit_scale;
  unit_scale.applied = static_cast<unsigned>(Transform::Scale);
  unit_scale.scale = 1.0;
  AugmentPlan zero_rot;
  zero_rot.applied = static_cast<unsigned>(Transform::Rotate);
  for (const auto& plan : {unit_scale, zero_rot}) {
    const auto out = apply_plan(s, plan, kGeom);
    CHECK(max_diff(out.high_in, s.high_in) < 1e-6);
    CHECK(max_diff(out.low_in, s.low_in) < 1e-6);
    CHECK(max_diff(out.target, s.target) == 0.0);
    CHECK(max_diff(out.low_target, s.low_target) == 0.0);
  }
}

TEST_CASE("intensity shift re-clips") {
  auto s = smooth_sample();
  s.high_in = Tensor::full(s.high_in.shape(), 395.0);
  AugmentPlan plan;
  plan.applied = static_cast<unsigned>(Transform::Intensity);
  plan.intensity_shift = 20.0;
  const auto out = apply_plan(s, plan, kGeom);
  for (double v : out.high_in.values()) CHECK(v == 400.0);
  CHECK(max_diff(out.target, s.target) == 0.0);
}

TEST_CASE("geometric plans keep labels and weights consistent") {
  const auto s = smooth_sample();
  Rng rng(3);
  AugmentConfig cfg;
  cfg.probability = 1.0;
  for (int i = 0; i < 12; ++i) {
    const auto out = augment(s, rng, kGeom, cfg);
    const auto w = weight_map(out.target.values());
    CHECK(std::equal(w.begin(), w.end(), out.weights.values().begin()));
    for (double v : out.high_in.values()) {
      CHECK(v >= -500.0);
      CHECK(v <= 400.0);
    }
  }
}

TEST_CASE("small rotations move labels only near the boundary") {
  const auto s = smooth_sample();
  AugmentPlan plan;
  plan.applied = static_cast<unsigned>(Transform::Rotate);
  plan.rotation_deg = {0, 0, 5.0};
  const auto out = apply_plan(s, plan, kGeom);
  double changed = 0;
  for (std::size_t i = 0; i < s.target.size(); ++i) changed += s.target.values()[i] != out.target.values()[i];
  CHECK(changed > 0);
  CHECK(changed < 0.05 * static_cast<double>(s.target.size()));
}

TEST_CASE("gaussian blur keeps constants and mass") {
  std::vector<double> c(8 * 8 * 8, 3.0);
  for (double v : gaussian_blur(c, 8, 0.7)) CHECK(v == doctest::Approx(3.0).epsilon(1e-12));
  std::vector<double> spike(9 * 9 * 9, 0.0);
  spike[(4 * 9 + 4) * 9 + 4] = 1.0;
  const auto b = gaussian_blur(spike, 9, 0.8);
  double total = 0.0;
  for (double v : b) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(b[(4 * 9 + 4) * 9 + 4] < 1.0);
}
