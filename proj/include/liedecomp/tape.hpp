#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

#include "liedecomp/tensor.hpp"

namespace liedecomp {

using NodeId = int;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  ScaleConst,
  ScaleNode,
  SumAll,
  Exp,
  LogEps,
  Softmax,
  Square,
  Abs,
  MatMul,
  MatVec,
  CumSumLast,
  Pick,
  Slice0,
  AffineGrid,
  GatherBilinear,
  StopGradient,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::Leaf;
  NodeId a = -1;
  NodeId b = -1;
  int iaux = 0;
  int iaux2 = 0;
  double daux = 0.0;
  Tensor value;
  Tensor grad;  // same shape as value; materialized by backward()
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape
/// itself is the topological order used by backward(). Single-owner,
/// single-threaded; independent tapes may live on different threads.
class Tape {
 public:
  Tape() = default;

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId leaf(Tensor v);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// c * x with a plain constant.
  NodeId scale(double c, NodeId x);
  /// s * x where s is a scalar node.
  NodeId scale(NodeId s, NodeId x);
  /// Sum of all elements -> scalar.
  NodeId sum(NodeId x);
  NodeId exp(NodeId x);
  /// log(x + 1e-12); the epsilon keeps zero ratios finite.
  NodeId log_eps(NodeId x);
  NodeId softmax(NodeId x, int axis);
  NodeId square(NodeId x);
  NodeId abs(NodeId x);
  /// {m,k} x {k,n} -> {m,n}
  NodeId matmul(NodeId a, NodeId b);
  /// {m,k} x {k} -> {m}
  NodeId matvec(NodeId a, NodeId v);
  /// Cumulative sum along the last axis.
  NodeId cumsum_last(NodeId x);
  /// Extract one element (row-major flat index) -> scalar.
  NodeId pick(NodeId x, Eigen::Index flat_index);
  /// Slice along axis 0 at index k, dropping that axis.
  NodeId slice0(NodeId x, int k);
  /// Source-coordinate grid of the affine map p -> M p + t over an H x W
  /// frame in normalized coordinates. Output {H,W,2} as (x,y) per pixel.
  NodeId affine_grid(NodeId M, NodeId t, int H, int W);
  /// Bilinear sample of image {H,W} at normalized coords {H',W',2};
  /// out-of-range samples read as zero. Output {H',W'}.
  NodeId gather_bilinear(NodeId image, NodeId coords);
  /// Identity forward, zero backward.
  NodeId stop_gradient(NodeId x);

  /// Node storage is reference-stable: value()/grad() references stay
  /// valid while further nodes are recorded.
  const Tensor& value(NodeId id) const { return node(id).value; }
  const Tensor& grad(NodeId id) const { return node(id).grad; }
  bool is_leaf(NodeId id) const { return node(id).op == Op::Leaf; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar root. Fills every node's gradient slot and
  /// returns the leaf gradients. Accumulation order is the fixed reverse
  /// tape order, so results are bit-reproducible.
  std::map<NodeId, Tensor> backward(NodeId root);

 private:
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  NodeId push(Node n);
  NodeId binary_same_shape(Op op, NodeId a, NodeId b);

  std::deque<Node> nodes_;
};

/// Pixel-space bilinear sample with zero padding outside [0,H-1]x[0,W-1].
/// Coordinates within 1e-9 of a lattice point snap to it so that exact
/// integer-pitch warps reproduce array shifts bitwise.
double bilinear_sample(const Eigen::ArrayXd& image, int H, int W, double pr, double pc);

/// Shared forward kernel for softmax over an axis (numerically stable).
Tensor softmax_forward(const Tensor& x, int axis);

}  // namespace liedecomp
