#pragma once

#include <Eigen/Dense>

#include "liedecomp/tape.hpp"
#include "liedecomp/tensor.hpp"

namespace liedecomp {

struct SingularMapError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FlowOverflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Image dimensions defining the normalized coordinate frame: top-left
/// pixel maps to (-1,-1), bottom-right to (1,1), x along columns, y along
/// rows (increasing downward).
struct CoordinateFrame {
  int H = 0;
  int W = 0;

  void validate() const {
    if (H < 2 || W < 2) throw ValidationError("CoordinateFrame: H and W must be >= 2");
  }
  bool operator==(const CoordinateFrame& o) const { return H == o.H && W == o.W; }
};

/// Parameters of the affine velocity field dz/dlambda = A z + b on
/// normalized coordinates.
struct FlowParams {
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
};

/// Integrated flow: acts as p -> M p + t on normalized coordinates.
struct AffineMap {
  Eigen::Matrix2d M = Eigen::Matrix2d::Identity();
  Eigen::Vector2d t = Eigen::Vector2d::Zero();

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return M * p + t; }
  static AffineMap identity() { return AffineMap{}; }
};

/// Time-lambda flow map of the affine ODE, computed as the exponential of
/// the augmented generator lambda*[[A,b],[0,0]] by scaling-and-squaring
/// with an order-18 Taylor series. lambda = 0 gives the exact identity.
AffineMap integrate_flow(const FlowParams& params, double lambda);

/// Result applies `inner` first, then `outer`.
AffineMap compose(const AffineMap& outer, const AffineMap& inner);

/// Group inverse; rejects |det M| < 1e-12 as singular.
AffineMap invert(const AffineMap& map);

Eigen::Vector2d pixel_to_normalized(int row, int col, const CoordinateFrame& frame);

/// Width of one pixel step in normalized units.
inline double pixel_pitch_x(const CoordinateFrame& f) { return 2.0 / (f.W - 1); }
inline double pixel_pitch_y(const CoordinateFrame& f) { return 2.0 / (f.H - 1); }

/// Source-coordinate grid used by warp: per output pixel, the normalized
/// coordinate the sample is read from. Depends only on the map, never on
/// image content.
Tensor warp_grid(const CoordinateFrame& frame, const AffineMap& inverse_map);

/// Dense differentiable warp by inverse sampling: output pixel p reads a
/// bilinear sample of the input at invert(map)(p); samples outside
/// [-1,1]^2 are zero.
Tensor warp(const Tensor& image, const AffineMap& map);

/// Tape-level affine map: value nodes for M {2,2} and t {2}.
struct AffineNodes {
  NodeId M = -1;
  NodeId t = -1;
};

/// Tape-level flow params: leaves (or derived nodes) for A {2,2} and b {2}.
struct FlowNodes {
  NodeId A = -1;
  NodeId b = -1;
};

/// Differentiable version of integrate_flow over tape nodes
/// (A {2,2}, b {2}, lambda scalar).
AffineNodes flow_exp_nodes(Tape& tape, NodeId A, NodeId b, NodeId lambda);

AffineNodes compose_nodes(Tape& tape, const AffineNodes& outer, const AffineNodes& inner);

/// Differentiable warp given the *inverse* map nodes (the trainer builds
/// inverses directly via the group property T(lambda)^-1 = T(-lambda)).
NodeId warp_nodes(Tape& tape, NodeId image, const AffineNodes& inverse_map,
                  const CoordinateFrame& frame);

}  // namespace liedecomp
