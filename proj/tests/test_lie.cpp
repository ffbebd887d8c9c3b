#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "liedecomp/affine.hpp"

using namespace liedecomp;

namespace {

FlowParams random_flow(std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  FlowParams p;
  p.A << dist(rng), dist(rng), dist(rng), dist(rng);
  p.b << dist(rng), dist(rng);
  return p;
}

// Fixed-step RK4 on the pair (M, t): M' = A M, t' = A t + b.
AffineMap rk4_flow(const FlowParams& p, double lambda, int steps) {
  Eigen::Matrix2d M = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();
  const double h = lambda / steps;
  for (int i = 0; i < steps; ++i) {
    const Eigen::Matrix2d k1M = p.A * M;
    const Eigen::Vector2d k1t = p.A * t + p.b;
    const Eigen::Matrix2d k2M = p.A * (M + 0.5 * h * k1M);
    const Eigen::Vector2d k2t = p.A * (t + 0.5 * h * k1t) + p.b;
    const Eigen::Matrix2d k3M = p.A * (M + 0.5 * h * k2M);
    const Eigen::Vector2d k3t = p.A * (t + 0.5 * h * k2t) + p.b;
    const Eigen::Matrix2d k4M = p.A * (M + h * k3M);
    const Eigen::Vector2d k4t = p.A * (t + h * k3t) + p.b;
    M += h / 6.0 * (k1M + 2.0 * k2M + 2.0 * k3M + k4M);
    t += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
  }
  return AffineMap{M, t};
}

double map_distance(const AffineMap& a, const AffineMap& b) {
  return std::max((a.M - b.M).cwiseAbs().maxCoeff(), (a.t - b.t).cwiseAbs().maxCoeff());
}

Tensor glyph_x_15() {
  Tensor img = Tensor::zeros(Shape{15, 15});
  for (int i = 0; i < 5; ++i) {
    img.at(5 + i, 5 + i) = 1.0;
    img.at(5 + i, 9 - i) = 1.0;
  }
  return img;
}

}  // namespace

TEST_CASE("constant field integrates linearly") {
  FlowParams p;
  p.b << 1.0, 0.0;
  const AffineMap m = integrate_flow(p, 0.5);
  CHECK(map_distance(m, AffineMap{Eigen::Matrix2d::Identity(), {0.5, 0.0}}) == 0.0);
}

TEST_CASE("lambda = 0 is the exact identity") {
  std::mt19937_64 rng(3);
  const FlowParams p = random_flow(rng);
  const AffineMap m = integrate_flow(p, 0.0);
  CHECK(m.M == Eigen::Matrix2d::Identity());
  CHECK(m.t == Eigen::Vector2d::Zero());
}

TEST_CASE("rotation generator integrates to the rotation matrix") {
  FlowParams p;
  p.A << 0, -1, 1, 0;
  const double quarter = std::numbers::pi / 2.0;
  const AffineMap m = integrate_flow(p, quarter);
  Eigen::Matrix2d expect;
  expect << 0, -1, 1, 0;
  CHECK((m.M - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(m.t.cwiseAbs().maxCoeff() < 1e-12);

  const AffineMap oracle = rk4_flow(p, quarter, 10000);
  CHECK(map_distance(m, oracle) < 1e-10);
}

TEST_CASE("overflow guard rejects huge magnitudes") {
  FlowParams p;
  p.A << 100, 0, 0, 100;
  CHECK_THROWS_AS(integrate_flow(p, 20.0), FlowOverflowError);
}

TEST_CASE("compose applies inner first") {
  const AffineMap id = AffineMap::identity();
  AffineMap m;
  m.M << 0.5, 0.1, -0.2, 0.9;
  m.t << 0.3, -0.4;
  CHECK(map_distance(compose(id, m), m) == 0.0);
  CHECK(map_distance(compose(m, id), m) == 0.0);

  AffineMap t1 = AffineMap::identity(), t2 = AffineMap::identity();
  t1.t << 0.25, -0.5;
  t2.t << 0.1, 0.2;
  const AffineMap both = compose(t1, t2);
  CHECK(both.t(0) == doctest::Approx(0.35).epsilon(1e-15));
  CHECK(both.t(1) == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(both.M == Eigen::Matrix2d::Identity());

  // rotation after translation: t maps through the rotation
  AffineMap rot = AffineMap::identity();
  rot.M << 0, -1, 1, 0;
  AffineMap shift = AffineMap::identity();
  shift.t << 1, 0;
  const AffineMap c = compose(rot, shift);
  CHECK((c.M - rot.M).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.t(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(c.t(1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("invert is the group inverse") {
  CHECK(map_distance(invert(AffineMap::identity()), AffineMap::identity()) == 0.0);

  AffineMap shift = AffineMap::identity();
  shift.t << 0.3, -0.1;
  const AffineMap inv = invert(shift);
  CHECK(inv.t(0) == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(inv.t(1) == doctest::Approx(0.1).epsilon(1e-15));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const FlowParams p = random_flow(rng);
    const AffineMap m = integrate_flow(p, 0.7);
    CHECK(map_distance(compose(m, invert(m)), AffineMap::identity()) < 1e-12);
    CHECK(map_distance(invert(m), integrate_flow(p, -0.7)) < 1e-10);
  }

  AffineMap degenerate;
  degenerate.M << 1, 1, 1, 1;
  CHECK_THROWS_AS(invert(degenerate), SingularMapError);
}

TEST_CASE("group law: additivity, identity, inverse") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> lam(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const FlowParams p = random_flow(rng);
    const double a = lam(rng), b = lam(rng);
    const AffineMap composed = compose(integrate_flow(p, a), integrate_flow(p, b));
    CHECK(map_distance(composed, integrate_flow(p, a + b)) < 1e-9);
    CHECK(map_distance(integrate_flow(p, 0.0), AffineMap::identity()) == 0.0);
    CHECK(map_distance(compose(integrate_flow(p, a), integrate_flow(p, -a)),
                       AffineMap::identity()) < 1e-9);
  }
}

TEST_CASE("integrate_flow matches the RK4 oracle") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> lam(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const FlowParams p = random_flow(rng);
    const double l = lam(rng);
    CHECK(map_distance(integrate_flow(p, l), rk4_flow(p, l, 10000)) < 1e-8);
  }
}

TEST_CASE("pixel_to_normalized matches the documented frame") {
  const CoordinateFrame f{15, 15};
  CHECK(pixel_to_normalized(0, 0, f) == Eigen::Vector2d(-1, -1));
  CHECK(pixel_to_normalized(7, 7, f) == Eigen::Vector2d(0, 0));
  CHECK(pixel_to_normalized(14, 14, f) == Eigen::Vector2d(1, 1));
  const Eigen::Vector2d p = pixel_to_normalized(7, 8, f);
  CHECK(p(0) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(p(1) == 0.0);
  CHECK_THROWS_AS(pixel_to_normalized(15, 0, f), ValidationError);
  CHECK_THROWS_AS(pixel_to_normalized(0, -1, f), ValidationError);
}

TEST_CASE("warp with identity map reproduces the input bitwise") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor img = Tensor::zeros(Shape{9, 13});
  for (Eigen::Index i = 0; i < img.numel(); ++i) img.data[i] = dist(rng);
  const Tensor out = warp(img, AffineMap::identity());
  for (Eigen::Index i = 0; i < img.numel(); ++i) CHECK(out.data[i] == img.data[i]);
}

TEST_CASE("integer-pitch translation equals an exact array shift") {
  const Tensor img = glyph_x_15();
  AffineMap shift = AffineMap::identity();
  shift.t << 2.0 / 14.0, 0.0;  // one pixel to the right
  const Tensor out = warp(img, shift);
  for (int r = 0; r < 15; ++r)
    for (int c = 0; c < 15; ++c) {
      const double expect = (c == 0) ? 0.0 : img.at(r, c - 1);
      CHECK(out.at(r, c) == expect);
    }
}

TEST_CASE("half-pixel point source splits into exact bilinear weights") {
  Tensor img = Tensor::zeros(Shape{15, 15});
  img.at(7, 7) = 1.0;
  AffineMap shift = AffineMap::identity();
  shift.t << 1.0 / 14.0, 0.0;
  const Tensor out = warp(img, shift);
  CHECK(out.at(7, 7) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.at(7, 8) == doctest::Approx(0.5).epsilon(1e-12));
  double mass = 0.0;
  for (Eigen::Index i = 0; i < out.numel(); ++i) mass += out.data[i];
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("warp output stays within the convex range of inputs") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor img = Tensor::zeros(Shape{15, 15});
  for (Eigen::Index i = 0; i < img.numel(); ++i) img.data[i] = dist(rng);
  const double maxv = img.data.maxCoeff();

  const FlowParams p = random_flow(rng, 0.4);
  const Tensor out = warp(img, integrate_flow(p, 0.6));
  CHECK(out.data.minCoeff() >= 0.0);
  CHECK(out.data.maxCoeff() <= maxv + 1e-15);
}

TEST_CASE("displacement field is independent of image content") {
  std::mt19937_64 rng(41);
  const FlowParams p = random_flow(rng, 0.5);
  const AffineMap inv = invert(integrate_flow(p, 0.8));
  const CoordinateFrame f{15, 15};
  const Tensor grid1 = warp_grid(f, inv);
  const Tensor grid2 = warp_grid(f, inv);
  for (Eigen::Index i = 0; i < grid1.numel(); ++i) CHECK(grid1.data[i] == grid2.data[i]);
}

TEST_CASE("warp additivity") {
  SUBCASE("integer-pitch translations compose exactly") {
    const Tensor img = glyph_x_15();
    AffineMap one = AffineMap::identity();
    one.t << 2.0 / 14.0, 0.0;
    AffineMap two = AffineMap::identity();
    two.t << 4.0 / 14.0, 0.0;
    const Tensor twice = warp(warp(img, one), one);
    const Tensor once = warp(img, two);
    for (Eigen::Index i = 0; i < img.numel(); ++i) CHECK(twice.data[i] == once.data[i]);
  }
  SUBCASE("general maps agree within resampling tolerance on smooth images") {
    Tensor img = Tensor::zeros(Shape{15, 15});
    for (int r = 0; r < 15; ++r)
      for (int c = 0; c < 15; ++c) {
        const double dx = (c - 7.0) / 7.0, dy = (r - 7.0) / 7.0;
        img.at(r, c) = std::exp(-2.0 * (dx * dx + dy * dy));
      }
    std::mt19937_64 rng(59);
    const FlowParams p = random_flow(rng, 0.3);
    const AffineMap half = integrate_flow(p, 0.25);
    const AffineMap full = integrate_flow(p, 0.5);
    const Tensor stepped = warp(warp(img, half), half);
    const Tensor direct = warp(img, full);
    CHECK((stepped.data - direct.data).abs().maxCoeff() <= 0.1);
  }
}

TEST_CASE("warp gradients pass finite differences") {
  // d(sum of weighted warp)/d(A,b,lambda,image) via the tape path
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor img = Tensor::zeros(Shape{7, 7});
  for (Eigen::Index i = 0; i < img.numel(); ++i) img.data[i] = dist(rng);
  Eigen::ArrayXd weights(49);
  for (Eigen::Index i = 0; i < 49; ++i) weights[i] = dist(rng) - 0.5;

  // params: A(4), b(2), lambda(1), image(49)
  Eigen::ArrayXd point(56);
  point << 0.11, -0.23, 0.17, 0.05, 0.31, -0.12, 0.45, Eigen::Map<Eigen::ArrayXd>(img.data.data(), 49);

  auto build = [&](const Eigen::ArrayXd& p, bool want_grad,
                   Eigen::ArrayXd* grad_out) -> double {
    Tape tape;
    const NodeId A = tape.leaf(Tensor::from_vector(Shape{2, 2}, {p[0], p[1], p[2], p[3]}));
    const NodeId b = tape.leaf(Tensor::from_vector(Shape{2}, {p[4], p[5]}));
    const NodeId lam = tape.leaf(Tensor::scalar(p[6]));
    Tensor im = Tensor::zeros(Shape{7, 7});
    for (Eigen::Index i = 0; i < 49; ++i) im.data[i] = p[7 + i];
    const NodeId image = tape.leaf(im);

    const NodeId neg_lam = tape.scale(-1.0, lam);
    const AffineNodes inv = flow_exp_nodes(tape, A, b, neg_lam);
    const NodeId out = warp_nodes(tape, image, inv, CoordinateFrame{7, 7});
    Tensor w = Tensor::zeros(Shape{7, 7});
    w.data = weights;
    const NodeId loss = tape.sum(tape.mul(out, tape.leaf(w)));
    if (want_grad) {
      tape.backward(loss);
      grad_out->resize(56);
      const Tensor& gA = tape.grad(A);
      const Tensor& gb = tape.grad(b);
      (*grad_out)[0] = gA.at(0, 0);
      (*grad_out)[1] = gA.at(0, 1);
      (*grad_out)[2] = gA.at(1, 0);
      (*grad_out)[3] = gA.at(1, 1);
      (*grad_out)[4] = gb.at(0);
      (*grad_out)[5] = gb.at(1);
      (*grad_out)[6] = tape.grad(lam).value();
      for (Eigen::Index i = 0; i < 49; ++i) (*grad_out)[7 + i] = tape.grad(image).data[i];
    }
    return tape.value(loss).value();
  };

  Eigen::ArrayXd analytic;
  build(point, true, &analytic);
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    Eigen::ArrayXd probe = point;
    probe[i] = point[i] + h;
    const double fp = build(probe, false, nullptr);
    probe[i] = point[i] - h;
    const double fm = build(probe, false, nullptr);
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("tape and value integration agree bitwise") {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 10; ++trial) {
    const FlowParams p = random_flow(rng);
    const double lambda = 0.9;
    const AffineMap direct = integrate_flow(p, lambda);

    Tape tape;
    const NodeId A = tape.leaf(Tensor::from_vector(
        Shape{2, 2}, {p.A(0, 0), p.A(0, 1), p.A(1, 0), p.A(1, 1)}));
    const NodeId b = tape.leaf(Tensor::from_vector(Shape{2}, {p.b(0), p.b(1)}));
    const AffineNodes nodes = flow_exp_nodes(tape, A, b, tape.leaf(Tensor::scalar(lambda)));
    CHECK(tape.value(nodes.M).at(0, 0) == direct.M(0, 0));
    CHECK(tape.value(nodes.M).at(0, 1) == direct.M(0, 1));
    CHECK(tape.value(nodes.M).at(1, 0) == direct.M(1, 0));
    CHECK(tape.value(nodes.M).at(1, 1) == direct.M(1, 1));
    CHECK(tape.value(nodes.t).at(0) == direct.t(0));
    CHECK(tape.value(nodes.t).at(1) == direct.t(1));
  }
}
