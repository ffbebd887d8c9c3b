#include "liedecomp/verify.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "liedecomp/grad_check.hpp"
#include "liedecomp/losses.hpp"
#include "liedecomp/scene.hpp"
#include "liedecomp/train.hpp"

namespace liedecomp {

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

namespace {

double map_distance(const AffineMap& a, const AffineMap& b) {
  return std::max((a.M - b.M).cwiseAbs().maxCoeff(), (a.t - b.t).cwiseAbs().maxCoeff());
}

FlowParams random_flow(std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  FlowParams p;
  p.A << dist(rng), dist(rng), dist(rng), dist(rng);
  p.b << dist(rng), dist(rng);
  return p;
}

Tensor cross_glyph(int H, int W, int row, int col) {
  Tensor img = Tensor::zeros(Shape{H, W});
  for (int d = -1; d <= 1; ++d) {
    img.at(row + d, col) = 1.0;
    img.at(row, col + d) = 1.0;
  }
  return img;
}

struct Suite {
  std::vector<PropertyResult> results;
  const std::string& filter;

  void run(const std::string& name, const std::function<std::string()>& body) {
    if (!filter.empty() && name.find(filter) == std::string::npos) return;
    PropertyResult r;
    r.name = name;
    try {
      r.detail = body();  // empty detail means pass
      r.pass = r.detail.empty();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  }
};

std::string check_leq(double value, double bound, const char* what) {
  if (value <= bound) return {};
  std::ostringstream os;
  os << what << ": " << value << " exceeds " << bound;
  return os.str();
}

}  // namespace

std::vector<PropertyResult> run_verification(const std::string& filter,
                                             FlowIntegrator integrator) {
  if (!integrator)
    integrator = [](const FlowParams& p, double lambda) { return integrate_flow(p, lambda); };

  Suite suite{{}, filter};

  suite.run("group-law-additivity", [&] {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> lam(-1.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const FlowParams p = random_flow(rng);
      const double a = lam(rng), b = lam(rng);
      worst = std::max(worst, map_distance(compose(integrator(p, a), integrator(p, b)),
                                           integrator(p, a + b)));
    }
    return check_leq(worst, 1e-9, "additivity residual");
  });

  suite.run("group-identity", [&] {
    std::mt19937_64 rng(103);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i)
      worst = std::max(worst, map_distance(integrator(random_flow(rng), 0.0),
                                           AffineMap::identity()));
    return check_leq(worst, 1e-9, "identity residual");
  });

  suite.run("group-inverse", [&] {
    std::mt19937_64 rng(107);
    std::uniform_real_distribution<double> lam(-1.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const FlowParams p = random_flow(rng);
      const double a = lam(rng);
      worst = std::max(worst, map_distance(compose(integrator(p, a), integrator(p, -a)),
                                           AffineMap::identity()));
      worst = std::max(worst, map_distance(invert(integrator(p, a)), integrator(p, -a)));
    }
    return check_leq(worst, 1e-9, "inverse residual");
  });

  suite.run("exp-vs-rk4", [&] {
    std::mt19937_64 rng(109);
    std::uniform_real_distribution<double> lam(-1.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const FlowParams p = random_flow(rng);
      const double a = lam(rng);
      worst = std::max(worst, map_distance(integrator(p, a), rk4_flow(p, a, 10000)));
    }
    return check_leq(worst, 1e-8, "exponential vs RK4 residual");
  });

  suite.run("warp-identity-bitwise", [&] {
    std::mt19937_64 rng(113);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Tensor img = Tensor::zeros(Shape{15, 15});
    for (Eigen::Index i = 0; i < img.numel(); ++i) img.data[i] = dist(rng);
    const Tensor out = warp(img, AffineMap::identity());
    for (Eigen::Index i = 0; i < img.numel(); ++i)
      if (out.data[i] != img.data[i]) return std::string("identity warp is not bitwise");
    return std::string{};
  });

  suite.run("warp-integer-shift", [&] {
    const Tensor img = cross_glyph(15, 15, 7, 7);
    AffineMap shift = AffineMap::identity();
    shift.t << 2.0 / 14.0, 0.0;
    const Tensor out = warp(img, shift);
    for (int r = 0; r < 15; ++r)
      for (int c = 0; c < 15; ++c) {
        const double expect = (c == 0) ? 0.0 : img.at(r, c - 1);
        if (out.at(r, c) != expect) return std::string("shifted warp differs from array shift");
      }
    return std::string{};
  });

  suite.run("warp-bilinear-split", [&] {
    Tensor img = Tensor::zeros(Shape{15, 15});
    img.at(7, 7) = 1.0;
    AffineMap shift = AffineMap::identity();
    shift.t << 1.0 / 14.0, 0.0;
    const Tensor out = warp(img, shift);
    const double e1 = std::abs(out.at(7, 7) - 0.5);
    const double e2 = std::abs(out.at(7, 8) - 0.5);
    return check_leq(std::max(e1, e2), 1e-12, "half-pixel split residual");
  });

  suite.run("warp-shape-invariance", [&] {
    std::mt19937_64 rng(127);
    const FlowParams p = random_flow(rng, 0.5);
    const AffineMap inv = invert(integrate_flow(p, 0.8));
    const Tensor g1 = warp_grid(CoordinateFrame{15, 15}, inv);
    const Tensor g2 = warp_grid(CoordinateFrame{15, 15}, inv);
    for (Eigen::Index i = 0; i < g1.numel(); ++i)
      if (g1.data[i] != g2.data[i]) return std::string("grids differ across calls");
    return std::string{};
  });

  suite.run("grad-primitives", [&] {
    // spot checks on the primitives most exposed to the model
    std::mt19937_64 rng(131);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    double worst = 0.0;

    {
      Eigen::ArrayXd point(6);
      for (Eigen::Index i = 0; i < 6; ++i) point[i] = dist(rng);
      DifferentiableScalar f;
      f.value = [](const Eigen::ArrayXd& p) {
        Tape tape;
        Tensor t = Tensor::zeros(Shape{6});
        t.data = p;
        const NodeId x = tape.leaf(t);
        return tape.value(tape.sum(tape.mul(tape.softmax(x, 0), tape.exp(tape.scale(0.3, x)))))
            .value();
      };
      f.gradient = [](const Eigen::ArrayXd& p) {
        Tape tape;
        Tensor t = Tensor::zeros(Shape{6});
        t.data = p;
        const NodeId x = tape.leaf(t);
        tape.backward(tape.sum(tape.mul(tape.softmax(x, 0), tape.exp(tape.scale(0.3, x)))));
        return tape.grad(x).data;
      };
      worst = std::max(worst, grad_check(f, point, 1e-6).max_rel_error);
    }
    {
      Eigen::ArrayXd point(4 + 2 + 1);
      for (Eigen::Index i = 0; i < point.size(); ++i) point[i] = 0.3 * dist(rng);
      DifferentiableScalar f;
      const auto eval = [](const Eigen::ArrayXd& p, Eigen::ArrayXd* grad) {
        Tape tape;
        const NodeId A = tape.leaf(Tensor::from_vector(Shape{2, 2}, {p[0], p[1], p[2], p[3]}));
        const NodeId b = tape.leaf(Tensor::from_vector(Shape{2}, {p[4], p[5]}));
        const NodeId lam = tape.leaf(Tensor::scalar(p[6]));
        const AffineNodes m = flow_exp_nodes(tape, A, b, lam);
        const NodeId root = tape.add(tape.sum(tape.square(m.M)), tape.sum(tape.square(m.t)));
        if (grad) {
          tape.backward(root);
          grad->resize(7);
          (*grad) << tape.grad(A).data, tape.grad(b).data, tape.grad(lam).data;
        }
        return tape.value(root).value();
      };
      f.value = [&eval](const Eigen::ArrayXd& p) { return eval(p, nullptr); };
      f.gradient = [&eval](const Eigen::ArrayXd& p) {
        Eigen::ArrayXd g;
        eval(p, &g);
        return g;
      };
      worst = std::max(worst, grad_check(f, point, 1e-6).max_rel_error);
    }
    return check_leq(worst, 1e-6, "primitive gradient error");
  });

  suite.run("grad-objectives", [&] {
    // random 7x7 instance, L = K = 2, N = 2, h = 1e-5
    ObservedSequence seq;
    seq.frame = CoordinateFrame{7, 7};
    for (int i = 0; i <= 2; ++i) seq.frames.push_back(cross_glyph(7, 7, 3, 1 + i));

    TrainConfig cfg;
    cfg.L = 2;
    cfg.K = 2;
    const ModelState base = init_state(cfg, seq, 2024);
    const LossWeights w;

    const Eigen::Index nlogits = base.logits.numel();
    const Eigen::Index ntheta = base.K * 6;
    const Eigen::Index nlam = base.delta_lambda.numel();

    const LambdaScaleTarget frozen = [&] {
      Tape tape;
      return make_lambda_scale_target(
          tape.value(tape.cumsum_last(tape.leaf(base.delta_lambda))));
    }();

    const auto run = [&](const Eigen::ArrayXd& p, bool want_T, Eigen::ArrayXd* grad) {
      ModelState s = base;
      for (Eigen::Index i = 0; i < nlogits; ++i) s.logits.data[i] = p[i];
      Eigen::ArrayXd theta(ntheta);
      for (Eigen::Index i = 0; i < ntheta; ++i) theta[i] = p[nlogits + i];
      unflatten_theta(s, theta);
      for (Eigen::Index i = 0; i < nlam; ++i) s.delta_lambda.data[i] = p[nlogits + ntheta + i];

      Tape tape;
      const SceneGraph g = build_scene_graph(tape, s, seq.frames[0]);
      const ObjectiveNodes nodes = build_objectives(tape, g, seq, w, &frozen);
      const NodeId root = want_T ? nodes.total_T : nodes.total_P;
      if (grad) {
        tape.backward(root);
        grad->setZero(p.size());
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

    Eigen::ArrayXd point(nlogits + ntheta + nlam);
    point << base.logits.data, flatten_theta(base), base.delta_lambda.data;

    DifferentiableScalar fP;
    fP.value = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.head(nlogits) = q;
      return run(p, false, nullptr);
    };
    fP.gradient = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.head(nlogits) = q;
      Eigen::ArrayXd g;
      run(p, false, &g);
      return Eigen::ArrayXd(g.head(nlogits));
    };
    const double errP = grad_check(fP, point.head(nlogits), 1e-5).max_rel_error;

    DifferentiableScalar fT;
    fT.value = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.tail(ntheta + nlam) = q;
      return run(p, true, nullptr);
    };
    fT.gradient = [&](const Eigen::ArrayXd& q) {
      Eigen::ArrayXd p = point;
      p.tail(ntheta + nlam) = q;
      Eigen::ArrayXd g;
      run(p, true, &g);
      return Eigen::ArrayXd(g.tail(ntheta + nlam));
    };
    const double errT = grad_check(fT, point.tail(ntheta + nlam), 1e-5).max_rel_error;

    return check_leq(std::max(errP, errT), 1e-4, "objective gradient error");
  });

  return suite.results;
}

}  // namespace liedecomp
