#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "mrseg/errors.hpp"
#include "mrseg/sampler.hpp"

using namespace mrseg;

namespace {

Volume ramp_volume(Dims3 d, double spacing = 1.0) {
  std::vector<float> v(d.count());
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) v[static_cast<std::size_t>((z * d.ny + y) * d.nx + x)] = static_cast<float>(x + 100 * y + 10000 * z);
  return Volume(d, {spacing, spacing, spacing}, {0, 0, 0}, VolumeKind::Intensity, v);
}

}  // namespace

TEST_CASE("mirror reflection rule") {
  // sequence [a, b, c]
  CHECK(mirror_index(-1, 3) == 1);
  CHECK(mirror_index(3, 3) == 1);
  CHECK(mirror_index(0, 3) == 0);
  CHECK(mirror_index(-2, 3) == 2);
  CHECK(mirror_index(4, 3) == 0);
  CHECK(mirror_index(7, 1) == 0);
  for (int i = -50; i < 50; ++i) {
    const int m = mirror_index(i, 5);
    CHECK(m >= 0);
    CHECK(m < 5);
  }
}

TEST_CASE("training grid corners") {
  CHECK(training_grid(40).corners == std::vector<int>{0, 10, 20});
  CHECK(training_grid(20).corners == std::vector<int>{0});
  CHECK(training_grid(45).corners == std::vector<int>{0, 10, 20, 25});
  CHECK_THROWS_AS(training_grid(19), GridError);
  const auto g = training_grid(60);
  for (std::size_t i = 1; i < g.corners.size(); ++i) CHECK(g.corners[i] - g.corners[i - 1] == 10);
}

TEST_CASE("inference tiles cover every voxel once") {
  for (int extent : {1, 19, 20, 21, 60, 77}) {
    const auto g = inference_grid(extent, 20);
    std::vector<int> hits(static_cast<std::size_t>(extent), 0);
    for (int c : g.corners)
      for (int i = c; i < std::min(c + 20, extent); ++i) ++hits[static_cast<std::size_t>(i)];
    for (int h : hits) CHECK(h == 1);
  }
  CHECK(inference_patch_grid({60, 60, 60}, 36, 20).corners().size() == 27);
}

TEST_CASE("patch extraction") {
  const auto v = ramp_volume({40, 40, 40});
  const auto p = extract_patch(v, {15, 12, 10}, 36, 20);
  CHECK(p.shape() == Shape{1, 36, 36, 36});
  // interior: plain crop
  const auto q = extract_patch(v, {10, 10, 10}, 36, 20);
  CHECK(q.values()[0] == v.at(2, 2, 2));
  CHECK(q.values()[35] == v.at(37, 2, 2));
  CHECK(p.values()[0] == v.at(7, 4, 2));
  const auto c = Volume::filled({20, 20, 20}, 7.0f);
  const auto cp = extract_patch(c, {0, 0, 0}, 36, 20);
  for (double x : cp.values()) CHECK(x == 7.0);
  CHECK_THROWS_AS(extract_patch(v, {25, 0, 0}, 36, 20), GridError);
  CHECK_THROWS_AS(extract_patch(v, {-1, 0, 0}, 36, 20), GridError);
}

TEST_CASE("weight lookup") {
  std::vector<double> bg(8000, 0.0);
  for (double w : weight_map(bg)) CHECK(w == 0.05);
  bg[123] = 2.0;
  const auto w = weight_map(bg);
  CHECK(std::count(w.begin(), w.end(), 0.99) == 1);
  CHECK(std::count(w.begin(), w.end(), 0.05) == 7999);
  const std::vector<double> mixed{1, 2, 1, 2};
  CHECK(weight_map(mixed) == std::vector<double>{0.10, 0.99, 0.10, 0.99});
  CHECK_THROWS_AS(weight_map(std::vector<double>{3.0}), LabelError);
  CHECK_THROWS_AS(weight_map(std::vector<double>{0.5}), LabelError);
}

TEST_CASE("paired samples share the tile centre") {
  const PairGeometry g{36, 20, 36, 20, 2};
  const auto fine = ramp_volume({60, 60, 60});
  const auto coarse = ramp_volume({30, 30, 30}, 2.0);
  const auto labels = Volume::filled({60, 60, 60}, 0.0f, {1, 1, 1}, {0, 0, 0}, VolumeKind::Labels);
  const auto coarse_labels = Volume::filled({30, 30, 30}, 0.0f, {2, 2, 2}, {0, 0, 0}, VolumeKind::Labels);
  for (int c : training_grid(60).corners) {
    const Index3 corner{c, c, 0};
    const auto cc = coarse_corner_for(corner, g);
    for (int a = 0; a < 3; ++a) {
      const double fine_centre = corner[a] + 10.0;
      const double coarse_centre = (cc[a] + 10.0) * 2.0;
      CHECK(std::abs(fine_centre - coarse_centre) <= 2.0);
    }
    const auto s = make_sample(fine, labels, &coarse, &coarse_labels, corner, g);
    CHECK(s.low_in.shape() == Shape{1, 36, 36, 36});
    CHECK(s.low_target.shape() == Shape{1, 20, 20, 20});
    // placed coarse output must cover the fine output region [8, 28) of the fine input
    for (int a = 0; a < 3; ++a) {
      CHECK(s.mask_offset[a] <= 8);
      CHECK(s.mask_offset[a] + 40 >= 28);
    }
  }
  const auto bad = ramp_volume({20, 20, 20}, 3.0);
  CHECK_THROWS_AS(make_sample(fine, labels, &bad, nullptr, {0, 0, 0}, g), AlignmentError);
}

TEST_CASE("low samples hold binary targets") {
  std::vector<float> lab(30 * 30 * 30, 0.0f);
  lab[100] = 2.0f;
  lab[200] = 1.0f;
  const Volume l({30, 30, 30}, {2, 2, 2}, {0, 0, 0}, VolumeKind::Labels, lab);
  const auto s = make_low_sample(ramp_volume({30, 30, 30}, 2.0), l, {0, 0, 0}, 36, 20);
  std::set<double> vals(s.low_target.values().begin(), s.low_target.values().end());
  CHECK(vals == std::set<double>{0.0, 1.0});
}
