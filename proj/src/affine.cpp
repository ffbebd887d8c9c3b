#include "liedecomp/affine.hpp"

#include <cmath>
#include <string>

namespace liedecomp {

namespace {

constexpr double kOverflowGuard = 1e3;
constexpr double kSquaringThreshold = 0.5;
constexpr int kTaylorOrder = 18;

// 1-norm of the augmented generator [[A,b],[0,0]] (max column abs sum).
double augmented_norm1(const Eigen::Matrix2d& A, const Eigen::Vector2d& b) {
  const double c0 = std::abs(A(0, 0)) + std::abs(A(1, 0));
  const double c1 = std::abs(A(0, 1)) + std::abs(A(1, 1));
  const double c2 = std::abs(b(0)) + std::abs(b(1));
  return std::max({c0, c1, c2});
}

void check_overflow_guard(const FlowParams& params, double lambda) {
  const double mag = std::abs(lambda) * (params.A.norm() + params.b.norm());
  if (mag > kOverflowGuard)
    throw FlowOverflowError("integrate_flow: |lambda|*(|A|+|b|) = " + std::to_string(mag) +
                            " exceeds guard " + std::to_string(kOverflowGuard));
}

int squaring_steps(double norm1) {
  int s = 0;
  while (norm1 > kSquaringThreshold && s < 64) {
    norm1 *= 0.5;
    ++s;
  }
  return s;
}

}  // namespace

AffineNodes flow_exp_nodes(Tape& tape, NodeId A, NodeId b, NodeId lambda) {
  if (tape.value(A).shape != Shape{2, 2})
    throw ShapeError("flow_exp_nodes: A must be {2,2}, got " + tape.value(A).shape.str());
  if (tape.value(b).shape != Shape{2})
    throw ShapeError("flow_exp_nodes: b must be {2}, got " + tape.value(b).shape.str());

  {
    FlowParams p;
    const Tensor& va = tape.value(A);
    p.A << va.at(0, 0), va.at(0, 1), va.at(1, 0), va.at(1, 1);
    p.b << tape.value(b).at(0), tape.value(b).at(1);
    check_overflow_guard(p, tape.value(lambda).value());
  }

  // Generator G = lambda * [[A,b],[0,0]] kept in (GA, Gb) pair form.
  const NodeId GA = tape.scale(lambda, A);
  const NodeId Gb = tape.scale(lambda, b);

  Eigen::Matrix2d ga_val;
  ga_val << tape.value(GA).at(0, 0), tape.value(GA).at(0, 1), tape.value(GA).at(1, 0),
      tape.value(GA).at(1, 1);
  Eigen::Vector2d gb_val(tape.value(Gb).at(0), tape.value(Gb).at(1));
  const int s = squaring_steps(augmented_norm1(ga_val, gb_val));
  const double inv_pow = std::ldexp(1.0, -s);  // 2^-s

  const NodeId GAs = tape.scale(inv_pow, GA);
  const NodeId Gbs = tape.scale(inv_pow, Gb);

  // exp(G') = [[I + sum Cn, sum dn], [0, 1]] with C1 = G'A, d1 = G'b and
  // C_{n} = G'A C_{n-1} / n, d_{n} = G'A d_{n-1} / n.
  NodeId Cn = GAs;
  NodeId dn = Gbs;
  NodeId Csum = GAs;
  NodeId dsum = Gbs;
  for (int n = 2; n <= kTaylorOrder; ++n) {
    Cn = tape.scale(1.0 / n, tape.matmul(GAs, Cn));
    dn = tape.scale(1.0 / n, tape.matvec(GAs, dn));
    Csum = tape.add(Csum, Cn);
    dsum = tape.add(dsum, dn);
  }
  const NodeId eye = tape.leaf(Tensor::from_vector(Shape{2, 2}, {1, 0, 0, 1}));
  NodeId M = tape.add(eye, Csum);
  NodeId t = dsum;

  for (int i = 0; i < s; ++i) {
    const NodeId Mt = tape.matvec(M, t);
    t = tape.add(Mt, t);
    M = tape.matmul(M, M);
  }
  return AffineNodes{M, t};
}

AffineNodes compose_nodes(Tape& tape, const AffineNodes& outer, const AffineNodes& inner) {
  AffineNodes out;
  out.M = tape.matmul(outer.M, inner.M);
  out.t = tape.add(tape.matvec(outer.M, inner.t), outer.t);
  return out;
}

NodeId warp_nodes(Tape& tape, NodeId image, const AffineNodes& inverse_map,
                  const CoordinateFrame& frame) {
  const NodeId grid = tape.affine_grid(inverse_map.M, inverse_map.t, frame.H, frame.W);
  return tape.gather_bilinear(image, grid);
}

AffineMap integrate_flow(const FlowParams& params, double lambda) {
  if (!params.A.allFinite() || !params.b.allFinite() || !std::isfinite(lambda))
    throw NonFiniteError("integrate_flow: non-finite flow parameters");
  check_overflow_guard(params, lambda);

  // Same computation as flow_exp_nodes, run on a scratch tape so the value
  // and tape paths agree bitwise.
  Tape tape;
  const NodeId A = tape.leaf(Tensor::from_vector(
      Shape{2, 2}, {params.A(0, 0), params.A(0, 1), params.A(1, 0), params.A(1, 1)}));
  const NodeId b = tape.leaf(Tensor::from_vector(Shape{2}, {params.b(0), params.b(1)}));
  const NodeId lam = tape.leaf(Tensor::scalar(lambda));
  const AffineNodes nodes = flow_exp_nodes(tape, A, b, lam);

  AffineMap map;
  const Tensor& vm = tape.value(nodes.M);
  const Tensor& vt = tape.value(nodes.t);
  map.M << vm.at(0, 0), vm.at(0, 1), vm.at(1, 0), vm.at(1, 1);
  map.t << vt.at(0), vt.at(1);
  return map;
}

AffineMap compose(const AffineMap& outer, const AffineMap& inner) {
  AffineMap out;
  out.M = outer.M * inner.M;
  out.t = outer.M * inner.t + outer.t;
  return out;
}

AffineMap invert(const AffineMap& map) {
  const double det = map.M(0, 0) * map.M(1, 1) - map.M(0, 1) * map.M(1, 0);
  if (std::abs(det) < 1e-12)
    throw SingularMapError("invert: |det M| = " + std::to_string(std::abs(det)) +
                           " below 1e-12");
  AffineMap inv;
  inv.M(0, 0) = map.M(1, 1) / det;
  inv.M(0, 1) = -map.M(0, 1) / det;
  inv.M(1, 0) = -map.M(1, 0) / det;
  inv.M(1, 1) = map.M(0, 0) / det;
  inv.t = -(inv.M * map.t);
  return inv;
}

Eigen::Vector2d pixel_to_normalized(int row, int col, const CoordinateFrame& frame) {
  frame.validate();
  if (row < 0 || row >= frame.H || col < 0 || col >= frame.W)
    throw ValidationError("pixel_to_normalized: index (" + std::to_string(row) + "," +
                          std::to_string(col) + ") outside " + std::to_string(frame.H) + "x" +
                          std::to_string(frame.W));
  const double x = 2.0 * col / (frame.W - 1) - 1.0;
  const double y = 2.0 * row / (frame.H - 1) - 1.0;
  return {x, y};
}

Tensor warp_grid(const CoordinateFrame& frame, const AffineMap& inverse_map) {
  frame.validate();
  Tape tape;
  const NodeId M = tape.leaf(Tensor::from_vector(
      Shape{2, 2},
      {inverse_map.M(0, 0), inverse_map.M(0, 1), inverse_map.M(1, 0), inverse_map.M(1, 1)}));
  const NodeId t =
      tape.leaf(Tensor::from_vector(Shape{2}, {inverse_map.t(0), inverse_map.t(1)}));
  return tape.value(tape.affine_grid(M, t, frame.H, frame.W));
}

Tensor warp(const Tensor& image, const AffineMap& map) {
  if (image.shape.rank() != 2)
    throw ShapeError("warp: image must be rank 2, got " + image.shape.str());
  const CoordinateFrame frame{image.shape.dim(0), image.shape.dim(1)};
  frame.validate();
  const AffineMap inv = invert(map);

  Tape tape;
  const NodeId img = tape.leaf(image);
  const NodeId M = tape.leaf(
      Tensor::from_vector(Shape{2, 2}, {inv.M(0, 0), inv.M(0, 1), inv.M(1, 0), inv.M(1, 1)}));
  const NodeId t = tape.leaf(Tensor::from_vector(Shape{2}, {inv.t(0), inv.t(1)}));
  return tape.value(warp_nodes(tape, img, AffineNodes{M, t}, frame));
}

}  // namespace liedecomp
