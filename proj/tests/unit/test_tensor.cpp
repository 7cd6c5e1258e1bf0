#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mrseg/errors.hpp"
#include "mrseg/rng.hpp"
#include "mrseg/tensor.hpp"
#include "oracles/nets.hpp"

using namespace mrseg;

namespace {

Tensor random_tensor(Rng& rng, const Shape& s, bool grad = false, double lo = -1, double hi = 1) {
  std::vector<double> v(shape_count(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(s, v, grad);
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("conv3d matches the direct loop oracle") {
  Rng rng(1);
  const auto x = random_tensor(rng, {2, 6, 5, 7});
  const auto k = random_tensor(rng, {3, 2, 3, 3, 3});
  const auto b = random_tensor(rng, {3});
  const auto y = conv3d_valid(x, k, b);
  CHECK(y.shape() == Shape{3, 4, 3, 5});
  const auto ref = oracle::conv3d(vec(x), 2, 6, 5, 7, vec(k), vec(b), 3, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  const auto k1 = random_tensor(rng, {2, 2, 1, 1, 1});
  const auto y1 = conv3d(x, k1, random_tensor(rng, {2}));
  CHECK(y1.shape() == Shape{2, 6, 5, 7});
}

TEST_CASE("conv3d closed forms") {
  Rng rng(2);
  const auto x = random_tensor(rng, {1, 5, 5, 5});
  std::vector<double> delta(27, 0.0);
  delta[13] = 1.0;
  const auto y = conv3d_valid(x, Tensor({1, 1, 3, 3, 3}, delta), Tensor::zeros({1}));
  const auto cropped = crop_center(x, {3, 3, 3});
  CHECK(vec(y) == vec(cropped));
  const auto c = conv3d_valid(Tensor::full({1, 4, 4, 4}, 0.5), Tensor::full({1, 1, 3, 3, 3}, 1.0), Tensor::zeros({1}));
  for (double v : c.values()) CHECK(v == doctest::Approx(13.5));
  CHECK_THROWS_AS(conv3d_valid(Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({1, 1, 3, 3, 3}), Tensor::zeros({1})),
                  ShapeError);
}

TEST_CASE("large input conv shape") {
  const auto y = conv3d_valid(Tensor::zeros({1, 108, 108, 108}), Tensor::zeros({1, 1, 3, 3, 3}), Tensor::zeros({1}));
  CHECK(y.extent() == Extent3{106, 106, 106});
}

TEST_CASE("softmax and pooling") {
  const auto s = softmax_channels(Tensor::full({3, 2, 2, 2}, 0.7));
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const auto two = softmax_channels(Tensor({2, 1, 1, 1}, {0.0, std::log(2.0)}));
  CHECK(two.values()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(two.values()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  Rng rng(3);
  const auto x = random_tensor(rng, {2, 20, 20, 20});
  const auto p = maxpool2(x);
  CHECK(p.extent() == Extent3{10, 10, 10});
  double expect = -1e9;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) expect = std::max(expect, x.values()[static_cast<std::size_t>((dz * 20 + dy) * 20 + dx)]);
  CHECK(p.values()[0] == expect);
  CHECK_THROWS_AS(maxpool2(Tensor::zeros({1, 3, 4, 4})), ShapeError);
  CHECK_THROWS_AS(add(Tensor::zeros({1, 2}), Tensor::zeros({2, 1})), ShapeError);
}

TEST_CASE("spatial dropout") {
  Rng rng(4);
  const auto x = Tensor::full({10, 3, 3, 3}, 0.9);
  CHECK(vec(spatial_dropout(x, 0.0, rng, true)) == vec(x));
  CHECK(vec(spatial_dropout(x, 0.1, rng, false)) == vec(x));
  CHECK_THROWS_AS(spatial_dropout(x, 1.0, rng, true), InvalidRate);
  CHECK_THROWS_AS(spatial_dropout(x, -0.1, rng, true), InvalidRate);
  long dropped = 0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const auto y = spatial_dropout(x, 0.1, rng, true);
    for (int c = 0; c < 10; ++c) {
      const auto first = y.values()[static_cast<std::size_t>(c) * 27];
      for (int i = 0; i < 27; ++i) CHECK(y.values()[static_cast<std::size_t>(c) * 27 + i] == first);
      if (first == 0.0) {
        ++dropped;
      } else {
        CHECK(first == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
  const double mean_dropped = static_cast<double>(dropped) / trials;
  CHECK(mean_dropped == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("gradcheck examples") {
  Rng rng(5);
  const auto x = random_tensor(rng, {1, 3, 3, 3});
  const auto quad = gradcheck([](const Tensor& t) { return sum(mul(t, t)); }, x);
  CHECK(quad.max_rel_error < 1e-8);
  const auto lin = gradcheck([](const Tensor& t) { return sum(scale(t, 3.0)); }, x);
  CHECK(lin.max_rel_error < 1e-9);
  const auto k = random_tensor(rng, {3, 1, 3, 3, 3});
  const auto b = random_tensor(rng, {3});
  const auto inp = random_tensor(rng, {1, 5, 5, 5});
  const auto comp = gradcheck(
      [&](const Tensor& t) {
        const auto p = softmax_channels(relu(conv3d_valid(t, k, b)));
        return scale(sum(mul(channel(p, 1), channel(p, 1))), -1.0);
      },
      inp);
  CHECK(comp.max_rel_error < 1e-3);
}

TEST_CASE("backward accumulates through shared uses and the tape is reverse ordered") {
  const Tensor x({1}, {3.0}, true);
  const auto y = add(mul(x, x), scale(x, 2.0));
  const Tape tape(y);
  const auto& order = tape.order();
  CHECK(std::is_sorted(order.rbegin(), order.rend()));
  CHECK(order.front() == y.sequence());
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const auto z = mul(x, x);
    CHECK_FALSE(z.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("central difference oracle agrees with reverse mode on a composite") {
  Rng rng(6);
  auto x = random_tensor(rng, {2, 4, 4, 4}, true);
  const auto f = [](const Tensor& t) { return mean(mul(softmax_channels(t), upsample_nearest(maxpool2(t), 2))); };
  const auto loss = f(x);
  backward(loss);
  const auto numeric = oracle::central_diff(
      [&](const std::vector<double>& v) {
        NoGradGuard g;
        return f(Tensor(x.shape(), v)).item();
      },
      vec(x), 1e-5);
  for (std::size_t i = 0; i < numeric.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(numeric[i]).epsilon(1e-4).scale(1e-6));
}

TEST_CASE("window pads and crops") {
  const Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto w = window(x, {-1, -1, -1}, {4, 4, 4});
  CHECK(w.extent() == Extent3{4, 4, 4});
  CHECK(w.values()[0] == 0.0);
  CHECK(w.values()[(1 * 4 + 1) * 4 + 1] == 1.0);
  const auto c = window(x, {1, 1, 1}, {1, 1, 1});
  CHECK(c.values()[0] == 8.0);
}

TEST_CASE("branch recorder tracks relu and pooling choices") {
  const auto digest_of = [](const Tensor& x) {
    BranchRecorder rec;
    (void)maxpool2(relu(x));
    return rec.digest();
  };
  std::vector<double> v(8, -1.0);
  v[3] = 0.5;
  const Tensor a({1, 2, 2, 2}, v);
  v[3] = 0.6;
  CHECK(digest_of(a) == digest_of(Tensor({1, 2, 2, 2}, v)));
  v[5] = 0.7;
  CHECK(digest_of(a) != digest_of(Tensor({1, 2, 2, 2}, v)));
  CHECK_FALSE(recording_branches());
}

TEST_CASE("smooth-only parameter gradcheck skips coordinates across a kink") {
  Tensor p({2}, {1e-5, 0.5}, true);
  const Tensor w({2}, {1.0, 3.0});
  const auto loss = [&] { return sum(mul(relu(p), w)); };
  const auto plain = gradcheck_parameter(loss, p, 1e-4);
  CHECK(plain.max_rel_error > 0.1);
  const auto smooth = gradcheck_parameter(loss, p, 1e-4, 0, 1e-6, true);
  CHECK(smooth.straddled == 1);
  CHECK(smooth.checked == 1);
  CHECK(smooth.max_rel_error < 1e-9);
}
