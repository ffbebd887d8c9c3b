#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "liedecomp/grad_check.hpp"
#include "liedecomp/losses.hpp"
#include "test_support.hpp"

using namespace liedecomp;
using namespace liedecomp::testsupport;

namespace {

std::vector<NodeId> as_leaves(Tape& tape, const std::vector<Tensor>& ts) {
  std::vector<NodeId> ids;
  for (const Tensor& t : ts) ids.push_back(tape.leaf(t));
  return ids;
}

}  // namespace

TEST_CASE("recon_loss_patterns") {
  Tape tape;
  const Tensor X1 = plus_image(15, 15, 7, 7);

  SUBCASE("perfect reconstruction is zero") {
    const auto X = as_leaves(tape, {X1, X1});
    CHECK(tape.value(recon_loss_patterns(tape, X, X, 0.9)).value() == 0.0);
  }
  SUBCASE("single wrong pixel at frame 1 costs r") {
    Tensor Y1 = X1;
    Y1.at(0, 0) += 1.0;
    const auto X = as_leaves(tape, {X1});
    const auto Y = as_leaves(tape, {Y1});
    CHECK(tape.value(recon_loss_patterns(tape, X, Y, 0.9)).value() ==
          doctest::Approx(0.9).epsilon(1e-12));
  }
  SUBCASE("uniform error has the closed-form value") {
    const double e = 0.13;
    const Tensor X0 = Tensor::zeros(Shape{15, 15});
    const Tensor Ye = Tensor::full(Shape{15, 15}, e);
    const auto X = as_leaves(tape, {X0, X0});
    const auto Y = as_leaves(tape, {Ye, Ye});
    CHECK(tape.value(recon_loss_patterns(tape, X, Y, 0.5)).value() ==
          doctest::Approx(225.0 * e * e * 0.75).epsilon(1e-12));
  }
  SUBCASE("length mismatch is rejected") {
    const auto X = as_leaves(tape, {X1, X1});
    const auto Y = as_leaves(tape, {X1});
    CHECK_THROWS_AS(recon_loss_patterns(tape, X, Y, 0.9), ValidationError);
  }
}

TEST_CASE("masked_recon_loss") {
  Tape tape;
  const Tensor X1 = plus_image(15, 15, 7, 7);  // binary support

  SUBCASE("ones on the support are free") {
    const Tensor ones = Tensor::full(Shape{15, 15}, 1.0);
    const auto X = as_leaves(tape, {X1});
    const auto Y = as_leaves(tape, {ones});
    CHECK(tape.value(masked_recon_loss(tape, X, Y, 0.9)).value() == 0.0);
  }
  SUBCASE("zero reconstruction costs the discounted support mass") {
    const Tensor zero = Tensor::zeros(Shape{15, 15});
    const auto X = as_leaves(tape, {X1, X1});
    const auto Y = as_leaves(tape, {zero, zero});
    const double support = X1.data.sum();  // binary image
    CHECK(tape.value(masked_recon_loss(tape, X, Y, 0.9)).value() ==
          doctest::Approx(0.9 * support + 0.81 * support).epsilon(1e-12));
  }
  SUBCASE("half-intensity reconstruction costs a quarter per support pixel") {
    const Tensor half = Tensor::full(Shape{15, 15}, 0.5);
    const auto X = as_leaves(tape, {X1});
    const auto Y = as_leaves(tape, {half});
    CHECK(tape.value(masked_recon_loss(tape, X, Y, 0.9)).value() ==
          doctest::Approx(0.9 * 0.25 * X1.data.sum()).epsilon(1e-12));
  }
  SUBCASE("pixels with X = 0 contribute exactly zero") {
    Tensor Ywild = Tensor::zeros(Shape{15, 15});
    for (Eigen::Index i = 0; i < Ywild.numel(); ++i)
      Ywild.data[i] = (X1.data[i] == 0.0) ? 123.0 : 1.0;
    const auto X = as_leaves(tape, {X1});
    const auto Y = as_leaves(tape, {Ywild});
    CHECK(tape.value(masked_recon_loss(tape, X, Y, 0.9)).value() == 0.0);
  }
}

TEST_CASE("pattern_entropy") {
  const Tensor X0 = plus_image(15, 15, 7, 7);

  SUBCASE("degenerate distribution has (near) zero entropy") {
    Tensor logits = Tensor::zeros(Shape{3, 15, 15});
    for (int r = 0; r < 15; ++r)
      for (int c = 0; c < 15; ++c) logits.at(0, r, c) = 60.0;
    Tape tape;
    const NodeId w = tape.softmax(tape.leaf(logits), 0);
    CHECK(std::abs(tape.value(pattern_entropy(tape, w, X0)).value()) < 1e-10);
  }
  SUBCASE("uniform distribution has entropy ln 3") {
    Tape tape;
    const NodeId w = tape.softmax(tape.leaf(Tensor::zeros(Shape{3, 15, 15})), 0);
    CHECK(tape.value(pattern_entropy(tape, w, X0)).value() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-9));
  }
  SUBCASE("two equal patterns have entropy ln 2") {
    Tensor logits = Tensor::zeros(Shape{3, 15, 15});
    for (int r = 0; r < 15; ++r)
      for (int c = 0; c < 15; ++c) {
        logits.at(0, r, c) = (c < 7) ? 60.0 : -60.0;
        logits.at(1, r, c) = (c < 7) ? -60.0 : 60.0;
        logits.at(2, r, c) = -60.0;
      }
    // the plus at (7,7) has 3 of 5 pixels in columns >= 7... rebuild a
    // symmetric support instead: two pixels, one per side.
    Tensor X = Tensor::zeros(Shape{15, 15});
    X.at(7, 2) = 1.0;
    X.at(7, 12) = 1.0;
    Tape tape;
    const NodeId w = tape.softmax(tape.leaf(logits), 0);
    CHECK(tape.value(pattern_entropy(tape, w, X)).value() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("empty support is rejected") {
    Tape tape;
    const NodeId w = tape.softmax(tape.leaf(Tensor::zeros(Shape{2, 15, 15})), 0);
    CHECK_THROWS_AS(pattern_entropy(tape, w, Tensor::zeros(Shape{15, 15})), ValidationError);
  }
  SUBCASE("entropy is invariant under pattern permutation") {
    ModelState s = random_state(CoordinateFrame{15, 15}, 3, 1, 1, 71);
    Tape tape;
    const NodeId w = tape.softmax(tape.leaf(s.logits), 0);
    const double h1 = tape.value(pattern_entropy(tape, w, X0)).value();

    Tensor perm = Tensor::zeros(Shape{3, 15, 15});
    for (int r = 0; r < 15; ++r)
      for (int c = 0; c < 15; ++c) {
        perm.at(0, r, c) = s.logits.at(2, r, c);
        perm.at(1, r, c) = s.logits.at(0, r, c);
        perm.at(2, r, c) = s.logits.at(1, r, c);
      }
    Tape tape2;
    const NodeId w2 = tape2.softmax(tape2.leaf(perm), 0);
    const double h2 = tape2.value(pattern_entropy(tape2, w2, X0)).value();
    CHECK(h1 == doctest::Approx(h2).epsilon(1e-12));
  }
}

TEST_CASE("l1_reg") {
  Tape tape;

  SUBCASE("zero parameters give zero") {
    FlowNodes fn{tape.leaf(Tensor::zeros(Shape{2, 2})), tape.leaf(Tensor::zeros(Shape{2}))};
    CHECK(tape.value(l1_reg(tape, {fn})).value() == 0.0);
  }
  SUBCASE("identity plus unit translation gives 4") {
    FlowNodes fn{tape.leaf(Tensor::from_vector(Shape{2, 2}, {1, 0, 0, 1})),
                 tape.leaf(Tensor::from_vector(Shape{2}, {1, -1}))};
    CHECK(tape.value(l1_reg(tape, {fn})).value() == 4.0);
  }
  SUBCASE("reported transformer-2 values sum to 1.0022") {
    FlowNodes fn{
        tape.leaf(Tensor::from_vector(Shape{2, 2}, {-0.0049, 0.0095, -0.0014, -0.0024})),
        tape.leaf(Tensor::from_vector(Shape{2}, {0.97, 0.014}))};
    CHECK(tape.value(l1_reg(tape, {fn})).value() == doctest::Approx(1.0022).epsilon(1e-12));
  }
}

TEST_CASE("lambda_scale_loss") {
  SUBCASE("max quantity exactly 1 is free") {
    Tensor d = Tensor::zeros(Shape{1, 2, 2});
    d.at(0, 0, 0) = 0.5;
    d.at(0, 0, 1) = 0.5;  // lambda = (0.5, 1.0)
    d.at(0, 1, 0) = 0.25;
    d.at(0, 1, 1) = 0.25;
    Tape tape;
    const NodeId lam = tape.cumsum_last(tape.leaf(d));
    CHECK(tape.value(lambda_scale_loss(tape, lam)).value() == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("single quantity of 2 costs |2 - 1| plus the midpoint") {
    Tensor d = Tensor::zeros(Shape{1, 1, 1});
    d.at(0, 0, 0) = 2.0;  // lambda_N = 2, s = 2
    Tape tape;
    const NodeId lam = tape.cumsum_last(tape.leaf(d));
    CHECK(tape.value(lambda_scale_loss(tape, lam)).value() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("all-zero table hits the inert guard") {
    Tape tape;
    const NodeId lam = tape.cumsum_last(tape.leaf(Tensor::zeros(Shape{3, 2, 4})));
    CHECK(tape.value(lambda_scale_loss(tape, lam)).value() == 0.0);
  }
  SUBCASE("inflating one active slice strictly increases its cost") {
    Tensor d = Tensor::zeros(Shape{1, 2, 2});
    d.at(0, 0, 0) = 0.6;
    d.at(0, 0, 1) = 0.4;  // final 1.0 -> s = 1
    d.at(0, 1, 0) = 0.3;
    d.at(0, 1, 1) = 0.3;
    Tape tape;
    const NodeId lam = tape.cumsum_last(tape.leaf(d));
    const double base = tape.value(lambda_scale_loss(tape, lam)).value();

    Tensor d2 = d;
    d2.data *= 2.0;
    Tape tape2;
    const NodeId lam2 = tape2.cumsum_last(tape2.leaf(d2));
    const double doubled = tape2.value(lambda_scale_loss(tape2, lam2)).value();
    CHECK(doubled > base);
  }
  SUBCASE("gradient does not flow through the normalizer") {
    Tensor d = Tensor::zeros(Shape{1, 1, 2});
    d.at(0, 0, 0) = 0.8;
    d.at(0, 0, 1) = 0.8;  // lambda = (0.8, 1.6), s = 1.6
    Tape tape;
    const NodeId leaf_d = tape.leaf(d);
    const NodeId lam = tape.cumsum_last(leaf_d);
    tape.backward(lambda_scale_loss(tape, lam));
    // loss = |0.8 - 0.5| + |1.6 - 1.0| with the targets held constant:
    // d/d(delta_0) = sign(0.3) * 1 + sign(0.6) * 1 = 2, d/d(delta_1) = 1
    CHECK(tape.grad(leaf_d).at(0, 0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(tape.grad(leaf_d).at(0, 0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("inner_product_loss") {
  Tape tape;
  const auto make = [&](std::vector<double> A, std::vector<double> b) {
    return FlowNodes{tape.leaf(Tensor::from_vector(Shape{2, 2}, A)),
                     tape.leaf(Tensor::from_vector(Shape{2}, b))};
  };

  SUBCASE("a single transformer has no pairs") {
    CHECK(tape.value(inner_product_loss(tape, {make({1, 2, 3, 4}, {5, 6})})).value() == 0.0);
  }
  SUBCASE("orthogonal translations are free") {
    const auto t1 = make({0, 0, 0, 0}, {1, 0});
    const auto t2 = make({0, 0, 0, 0}, {0, 1});
    CHECK(tape.value(inner_product_loss(tape, {t1, t2})).value() == 0.0);
  }
  SUBCASE("parallel unit translations cost 1") {
    const auto t1 = make({0, 0, 0, 0}, {1, 0});
    const auto t2 = make({0, 0, 0, 0}, {1, 0});
    CHECK(tape.value(inner_product_loss(tape, {t1, t2})).value() == 1.0);
  }
}

TEST_CASE("assembled objectives and the loss report") {
  const ObservedSequence seq = toy_sequence(15, 15, 2, 7, 2);
  ModelState s = random_state(CoordinateFrame{15, 15}, 3, 3, 2, 83);
  const LossWeights w;

  const LossReport rep = evaluate_losses(s, seq, w);
  CHECK(rep.total_P == doctest::Approx(rep.recon_P + w.alpha * rep.entropy).epsilon(1e-12));
  CHECK(rep.total_T == doctest::Approx(rep.recon_T_masked + w.beta * rep.l1 +
                                       w.gamma * rep.lambda_scale + w.delta * rep.inner_prod)
                           .epsilon(1e-12));
  CHECK(rep.recon_P >= 0.0);
  CHECK(rep.entropy >= 0.0);
  CHECK(rep.recon_T_masked >= 0.0);
  CHECK(rep.l1 >= 0.0);
  CHECK(rep.lambda_scale >= 0.0);
  CHECK(rep.inner_prod >= 0.0);

  SUBCASE("alpha = 0 reduces total_P to the reconstruction term") {
    LossWeights w0 = w;
    w0.alpha = 0.0;
    const LossReport r0 = evaluate_losses(s, seq, w0);
    CHECK(r0.total_P == doctest::Approx(r0.recon_P).epsilon(1e-15));
  }
  SUBCASE("beta = gamma = delta = 0 reduces total_T to the masked term") {
    LossWeights w0 = w;
    w0.beta = w0.gamma = w0.delta = 0.0;
    const LossReport r0 = evaluate_losses(s, seq, w0);
    CHECK(r0.total_T == doctest::Approx(r0.recon_T_masked).epsilon(1e-15));
  }
  SUBCASE("inert model keeps every term finite and the regularizers at zero") {
    ModelState inert = s;
    inert.delta_lambda = Tensor::zeros(Shape{3, 3, 2});
    for (auto& p : inert.transformers) {
      p.A.setZero();
      p.b.setZero();
    }
    const LossReport r0 = evaluate_losses(inert, seq, w);
    CHECK(r0.l1 == 0.0);
    CHECK(r0.inner_prod == 0.0);
    CHECK(r0.lambda_scale == 0.0);
    CHECK(std::isfinite(r0.total_P));
    CHECK(std::isfinite(r0.total_T));
  }
}

TEST_CASE("objective gradients pass the gradient check") {
  // random 7x7 instance with L = K = 2, N = 2 per the contract
  const ObservedSequence seq = toy_sequence(7, 7, 2, 3, 1);
  const ModelState base = random_state(CoordinateFrame{7, 7}, 2, 2, 2, 91);
  const LossWeights w;

  const Eigen::Index nlogits = base.logits.numel();
  const Eigen::Index ntheta = base.K * 6;
  const Eigen::Index nlam = base.delta_lambda.numel();

  const auto state_from = [&](const Eigen::ArrayXd& p) {
    ModelState s = base;
    for (Eigen::Index i = 0; i < nlogits; ++i) s.logits.data[i] = p[i];
    Eigen::ArrayXd theta(ntheta);
    for (Eigen::Index i = 0; i < ntheta; ++i) theta[i] = p[nlogits + i];
    unflatten_theta(s, theta);
    for (Eigen::Index i = 0; i < nlam; ++i) s.delta_lambda.data[i] = p[nlogits + ntheta + i];
    return s;
  };
  Eigen::ArrayXd point(nlogits + ntheta + nlam);
  point << base.logits.data, flatten_theta(base), base.delta_lambda.data;

  // The scale-fixing loss carries a detached target; freeze it at the base
  // point so finite differences probe the same function backward() sees.
  const LambdaScaleTarget frozen = [&] {
    Tape tape;
    return make_lambda_scale_target(tape.value(tape.cumsum_last(tape.leaf(base.delta_lambda))));
  }();

  const auto run = [&](const Eigen::ArrayXd& p, bool want_T, Eigen::ArrayXd* grad) {
    const ModelState s = state_from(p);
    Tape tape;
    const SceneGraph g = build_scene_graph(tape, s, seq.frames[0]);
    const ObjectiveNodes nodes = build_objectives(tape, g, seq, w, &frozen);
    const NodeId root = want_T ? nodes.total_T : nodes.total_P;
    if (grad) {
      tape.backward(root);
      grad->setZero(point.size());
      for (Eigen::Index i = 0; i < nlogits; ++i) (*grad)[i] = tape.grad(g.logits).data[i];
      for (int k = 0; k < base.K; ++k) {
        const Tensor& gA = tape.grad(g.theta[static_cast<std::size_t>(k)].A);
        const Tensor& gb = tape.grad(g.theta[static_cast<std::size_t>(k)].b);
        (*grad)[nlogits + k * 6 + 0] = gA.at(0, 0);
        (*grad)[nlogits + k * 6 + 1] = gA.at(0, 1);
        (*grad)[nlogits + k * 6 + 2] = gA.at(1, 0);
        (*grad)[nlogits + k * 6 + 3] = gA.at(1, 1);
        (*grad)[nlogits + k * 6 + 4] = gb.at(0);
        (*grad)[nlogits + k * 6 + 5] = gb.at(1);
      }
      for (Eigen::Index i = 0; i < nlam; ++i)
        (*grad)[nlogits + ntheta + i] = tape.grad(g.delta_lambda).data[i];
    }
    return tape.value(root).value();
  };

  SUBCASE("objective_P over the pattern logits") {
    DifferentiableScalar f;
    f.value = [&](const Eigen::ArrayXd& p) { return run(p, false, nullptr); };
    f.gradient = [&](const Eigen::ArrayXd& p) {
      Eigen::ArrayXd g;
      run(p, false, &g);
      return Eigen::ArrayXd(g.head(nlogits));
    };
    // vary only the logits; theta and lambda stay at the base point
    DifferentiableScalar restricted;
    restricted.value = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.head(nlogits) = q;
      return f.value(p);
    };
    restricted.gradient = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.head(nlogits) = q;
      return f.gradient(p);
    };
    const auto report = grad_check(restricted, point.head(nlogits), 1e-5);
    CHECK(report.all_finite);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("objective_T over theta and delta-lambda") {
    DifferentiableScalar f;
    f.value = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.tail(ntheta + nlam) = q;
      return run(p, true, nullptr);
    };
    f.gradient = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.tail(ntheta + nlam) = q;
      Eigen::ArrayXd g;
      run(p, true, &g);
      return Eigen::ArrayXd(g.tail(ntheta + nlam));
    };
    const auto report = grad_check(f, point.tail(ntheta + nlam), 1e-5);
    CHECK(report.all_finite);
    CHECK(report.max_rel_error < 1e-4);
  }
}
