#include "liedecomp/tape.hpp"

#include <cmath>
#include <string>

namespace liedecomp {

namespace {

constexpr double kLogEps = 1e-12;
constexpr double kLatticeSnap = 1e-9;

double snap_lattice(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < kLatticeSnap ? r : v;
}

struct BilinearCell {
  int r0, c0;
  double fr, fc;
};

BilinearCell bilinear_cell(double pr, double pc) {
  const double sr = snap_lattice(pr);
  const double sc = snap_lattice(pc);
  BilinearCell cell;
  cell.r0 = static_cast<int>(std::floor(sr));
  cell.c0 = static_cast<int>(std::floor(sc));
  cell.fr = sr - cell.r0;
  cell.fc = sc - cell.c0;
  return cell;
}

double read_pixel(const Eigen::ArrayXd& image, int H, int W, int r, int c) {
  if (r < 0 || r >= H || c < 0 || c >= W) return 0.0;
  return image[static_cast<Eigen::Index>(r) * W + c];
}

}  // namespace

double bilinear_sample(const Eigen::ArrayXd& image, int H, int W, double pr, double pc) {
  const BilinearCell cell = bilinear_cell(pr, pc);
  const double s00 = read_pixel(image, H, W, cell.r0, cell.c0);
  const double s01 = read_pixel(image, H, W, cell.r0, cell.c0 + 1);
  const double s10 = read_pixel(image, H, W, cell.r0 + 1, cell.c0);
  const double s11 = read_pixel(image, H, W, cell.r0 + 1, cell.c0 + 1);
  const double top = (1.0 - cell.fc) * s00 + cell.fc * s01;
  const double bot = (1.0 - cell.fc) * s10 + cell.fc * s11;
  return (1.0 - cell.fr) * top + cell.fr * bot;
}

Tensor softmax_forward(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.shape.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     x.shape.str());
  Eigen::Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape.dim(i);
  for (int i = axis + 1; i < x.shape.rank(); ++i) inner *= x.shape.dim(i);
  const Eigen::Index n = x.shape.dim(axis);

  Tensor out = Tensor::zeros(x.shape);
  for (Eigen::Index o = 0; o < outer; ++o) {
    for (Eigen::Index in = 0; in < inner; ++in) {
      const Eigen::Index base = o * n * inner + in;
      double maxv = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) maxv = std::max(maxv, x.data[base + j * inner]);
      double denom = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double e = std::exp(x.data[base + j * inner] - maxv);
        out.data[base + j * inner] = e;
        denom += e;
      }
      for (Eigen::Index j = 0; j < n; ++j) out.data[base + j * inner] /= denom;
    }
  }
  return out;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::ScaleConst: return "scale_const";
    case Op::ScaleNode: return "scale_node";
    case Op::SumAll: return "sum";
    case Op::Exp: return "exp";
    case Op::LogEps: return "log_eps";
    case Op::Softmax: return "softmax";
    case Op::Square: return "square";
    case Op::Abs: return "abs";
    case Op::MatMul: return "matmul";
    case Op::MatVec: return "matvec";
    case Op::CumSumLast: return "cumsum_last";
    case Op::Pick: return "pick";
    case Op::Slice0: return "slice0";
    case Op::AffineGrid: return "affine_grid";
    case Op::GatherBilinear: return "gather_bilinear";
    case Op::StopGradient: return "stop_gradient";
  }
  return "?";
}

const Node& Tape::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw ShapeError("Tape: node id " + std::to_string(id) + " not on this tape");
  return nodes_[static_cast<std::size_t>(id)];
}

Node& Tape::node(NodeId id) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(id));
}

NodeId Tape::push(Node n) {
  if (!n.value.all_finite())
    throw NonFiniteError(std::string("non-finite result in primitive '") + op_name(n.op) + "'");
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor v) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Tape::binary_same_shape(Op op, NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.shape != vb.shape)
    throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + va.shape.str() + " vs " +
                     vb.shape.str());
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  switch (op) {
    case Op::Add: n.value = Tensor(va.shape, va.data + vb.data); break;
    case Op::Sub: n.value = Tensor(va.shape, va.data - vb.data); break;
    case Op::Mul: n.value = Tensor(va.shape, va.data * vb.data); break;
    default: throw ShapeError("binary_same_shape: bad op");
  }
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) { return binary_same_shape(Op::Add, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return binary_same_shape(Op::Sub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return binary_same_shape(Op::Mul, a, b); }

NodeId Tape::scale(double c, NodeId x) {
  Node n;
  n.op = Op::ScaleConst;
  n.a = x;
  n.daux = c;
  n.value = Tensor(value(x).shape, c * value(x).data);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId s, NodeId x) {
  if (value(s).numel() != 1)
    throw ShapeError("scale_node: scale operand must be scalar, got " + value(s).shape.str());
  Node n;
  n.op = Op::ScaleNode;
  n.a = s;
  n.b = x;
  n.value = Tensor(value(x).shape, value(s).data[0] * value(x).data);
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  Node n;
  n.op = Op::SumAll;
  n.a = x;
  n.value = Tensor::scalar(value(x).data.sum());
  return push(std::move(n));
}

NodeId Tape::exp(NodeId x) {
  Node n;
  n.op = Op::Exp;
  n.a = x;
  n.value = Tensor(value(x).shape, value(x).data.exp());
  return push(std::move(n));
}

NodeId Tape::log_eps(NodeId x) {
  Node n;
  n.op = Op::LogEps;
  n.a = x;
  n.value = Tensor(value(x).shape, (value(x).data + kLogEps).log());
  return push(std::move(n));
}

NodeId Tape::softmax(NodeId x, int axis) {
  Node n;
  n.op = Op::Softmax;
  n.a = x;
  n.iaux = axis;
  n.value = softmax_forward(value(x), axis);
  return push(std::move(n));
}

NodeId Tape::square(NodeId x) {
  Node n;
  n.op = Op::Square;
  n.a = x;
  n.value = Tensor(value(x).shape, value(x).data.square());
  return push(std::move(n));
}

NodeId Tape::abs(NodeId x) {
  Node n;
  n.op = Op::Abs;
  n.a = x;
  n.value = Tensor(value(x).shape, value(x).data.abs());
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.shape.rank() != 2 || vb.shape.rank() != 2 || va.shape.dim(1) != vb.shape.dim(0))
    throw ShapeError("matmul: incompatible shapes " + va.shape.str() + " vs " + vb.shape.str());
  const int m = va.shape.dim(0), k = va.shape.dim(1), p = vb.shape.dim(1);
  Tensor out = Tensor::zeros(Shape{m, p});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int q = 0; q < k; ++q) acc += va.at(i, q) * vb.at(q, j);
      out.at(i, j) = acc;
    }
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::matvec(NodeId a, NodeId v) {
  const Tensor& va = value(a);
  const Tensor& vv = value(v);
  if (va.shape.rank() != 2 || vv.shape.rank() != 1 || va.shape.dim(1) != vv.shape.dim(0))
    throw ShapeError("matvec: incompatible shapes " + va.shape.str() + " vs " + vv.shape.str());
  const int m = va.shape.dim(0), k = va.shape.dim(1);
  Tensor out = Tensor::zeros(Shape{m});
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int q = 0; q < k; ++q) acc += va.at(i, q) * vv.at(q);
    out.at(i) = acc;
  }
  Node n;
  n.op = Op::MatVec;
  n.a = a;
  n.b = v;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::cumsum_last(NodeId x) {
  const Tensor& vx = value(x);
  if (vx.shape.rank() < 1) throw ShapeError("cumsum_last: scalar input");
  const Eigen::Index n = vx.shape.dim(vx.shape.rank() - 1);
  const Eigen::Index groups = vx.numel() / n;
  Tensor out = Tensor::zeros(vx.shape);
  for (Eigen::Index g = 0; g < groups; ++g) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      acc += vx.data[g * n + j];
      out.data[g * n + j] = acc;
    }
  }
  Node nN;
  nN.op = Op::CumSumLast;
  nN.a = x;
  nN.value = std::move(out);
  return push(std::move(nN));
}

NodeId Tape::pick(NodeId x, Eigen::Index flat_index) {
  const Tensor& vx = value(x);
  if (flat_index < 0 || flat_index >= vx.numel())
    throw ShapeError("pick: index " + std::to_string(flat_index) + " out of range for " +
                     vx.shape.str());
  Node n;
  n.op = Op::Pick;
  n.a = x;
  n.iaux = static_cast<int>(flat_index);
  n.value = Tensor::scalar(vx.data[flat_index]);
  return push(std::move(n));
}

NodeId Tape::slice0(NodeId x, int k) {
  const Tensor& vx = value(x);
  if (vx.shape.rank() < 1) throw ShapeError("slice0: scalar input");
  if (k < 0 || k >= vx.shape.dim(0))
    throw ShapeError("slice0: index " + std::to_string(k) + " out of range for " +
                     vx.shape.str());
  Shape out_shape;
  if (vx.shape.rank() == 2)
    out_shape = Shape{vx.shape.dim(1)};
  else if (vx.shape.rank() == 3)
    out_shape = Shape{vx.shape.dim(1), vx.shape.dim(2)};
  const Eigen::Index block = vx.numel() / vx.shape.dim(0);
  Tensor out(out_shape, vx.data.segment(k * block, block));
  Node n;
  n.op = Op::Slice0;
  n.a = x;
  n.iaux = k;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::affine_grid(NodeId M, NodeId t, int H, int W) {
  const Tensor& vm = value(M);
  const Tensor& vt = value(t);
  if (vm.shape != Shape{2, 2})
    throw ShapeError("affine_grid: M must be {2,2}, got " + vm.shape.str());
  if (vt.shape != Shape{2})
    throw ShapeError("affine_grid: t must be {2}, got " + vt.shape.str());
  if (H < 2 || W < 2) throw ShapeError("affine_grid: frame must be at least 2x2");
  Tensor out = Tensor::zeros(Shape{H, W, 2});
  const double m00 = vm.at(0, 0), m01 = vm.at(0, 1), m10 = vm.at(1, 0), m11 = vm.at(1, 1);
  const double t0 = vt.at(0), t1 = vt.at(1);
  for (int r = 0; r < H; ++r) {
    const double y = 2.0 * r / (H - 1) - 1.0;
    for (int c = 0; c < W; ++c) {
      const double x = 2.0 * c / (W - 1) - 1.0;
      out.at(r, c, 0) = m00 * x + m01 * y + t0;
      out.at(r, c, 1) = m10 * x + m11 * y + t1;
    }
  }
  Node n;
  n.op = Op::AffineGrid;
  n.a = M;
  n.b = t;
  n.iaux = H;
  n.iaux2 = W;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::gather_bilinear(NodeId image, NodeId coords) {
  const Tensor& vi = value(image);
  const Tensor& vc = value(coords);
  if (vi.shape.rank() != 2)
    throw ShapeError("gather_bilinear: image must be rank 2, got " + vi.shape.str());
  if (vc.shape.rank() != 3 || vc.shape.dim(2) != 2)
    throw ShapeError("gather_bilinear: coords must be {H,W,2}, got " + vc.shape.str());
  const int H = vi.shape.dim(0), W = vi.shape.dim(1);
  const int Ho = vc.shape.dim(0), Wo = vc.shape.dim(1);
  Tensor out = Tensor::zeros(Shape{Ho, Wo});
  for (int r = 0; r < Ho; ++r)
    for (int c = 0; c < Wo; ++c) {
      const double x = vc.at(r, c, 0);
      const double y = vc.at(r, c, 1);
      const double pc = (x + 1.0) * (W - 1) / 2.0;
      const double pr = (y + 1.0) * (H - 1) / 2.0;
      out.at(r, c) = bilinear_sample(vi.data, H, W, pr, pc);
    }
  Node n;
  n.op = Op::GatherBilinear;
  n.a = image;
  n.b = coords;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::stop_gradient(NodeId x) {
  Node n;
  n.op = Op::StopGradient;
  n.a = x;
  n.value = value(x);
  return push(std::move(n));
}

std::map<NodeId, Tensor> Tape::backward(NodeId root) {
  const Node& r = node(root);
  if (r.value.numel() != 1)
    throw ShapeError("backward: root must be scalar, got " + r.value.shape.str());

  for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  node(root).grad.data[0] = 1.0;

  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Eigen::ArrayXd& g = n.grad.data;
    switch (n.op) {
      case Op::Leaf:
      case Op::StopGradient:
        break;
      case Op::Add:
        node(n.a).grad.data += g;
        node(n.b).grad.data += g;
        break;
      case Op::Sub:
        node(n.a).grad.data += g;
        node(n.b).grad.data -= g;
        break;
      case Op::Mul:
        node(n.a).grad.data += g * node(n.b).value.data;
        node(n.b).grad.data += g * node(n.a).value.data;
        break;
      case Op::ScaleConst:
        node(n.a).grad.data += n.daux * g;
        break;
      case Op::ScaleNode:
        node(n.a).grad.data[0] += (g * node(n.b).value.data).sum();
        node(n.b).grad.data += node(n.a).value.data[0] * g;
        break;
      case Op::SumAll:
        node(n.a).grad.data += g[0];
        break;
      case Op::Exp:
        node(n.a).grad.data += g * n.value.data;
        break;
      case Op::LogEps:
        node(n.a).grad.data += g / (node(n.a).value.data + kLogEps);
        break;
      case Op::Softmax: {
        const Tensor& s = n.value;
        const int axis = n.iaux;
        Eigen::Index outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= s.shape.dim(i);
        for (int i = axis + 1; i < s.shape.rank(); ++i) inner *= s.shape.dim(i);
        const Eigen::Index nn = s.shape.dim(axis);
        Eigen::ArrayXd& ga = node(n.a).grad.data;
        for (Eigen::Index o = 0; o < outer; ++o)
          for (Eigen::Index in = 0; in < inner; ++in) {
            const Eigen::Index base = o * nn * inner + in;
            double dot = 0.0;
            for (Eigen::Index j = 0; j < nn; ++j)
              dot += g[base + j * inner] * s.data[base + j * inner];
            for (Eigen::Index j = 0; j < nn; ++j)
              ga[base + j * inner] += s.data[base + j * inner] * (g[base + j * inner] - dot);
          }
        break;
      }
      case Op::Square:
        node(n.a).grad.data += 2.0 * g * node(n.a).value.data;
        break;
      case Op::Abs:
        // subgradient at 0 taken as 0
        node(n.a).grad.data += g * node(n.a).value.data.sign();
        break;
      case Op::MatMul: {
        const Tensor& va = node(n.a).value;
        const Tensor& vb = node(n.b).value;
        Tensor& ga = node(n.a).grad;
        Tensor& gb = node(n.b).grad;
        const int m = va.shape.dim(0), k = va.shape.dim(1), p = vb.shape.dim(1);
        for (int i = 0; i < m; ++i)
          for (int q = 0; q < k; ++q) {
            double acc = 0.0;
            for (int j = 0; j < p; ++j) acc += n.grad.at(i, j) * vb.at(q, j);
            ga.at(i, q) += acc;
          }
        for (int q = 0; q < k; ++q)
          for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += va.at(i, q) * n.grad.at(i, j);
            gb.at(q, j) += acc;
          }
        break;
      }
      case Op::MatVec: {
        const Tensor& va = node(n.a).value;
        const Tensor& vv = node(n.b).value;
        Tensor& ga = node(n.a).grad;
        Tensor& gv = node(n.b).grad;
        const int m = va.shape.dim(0), k = va.shape.dim(1);
        for (int i = 0; i < m; ++i)
          for (int q = 0; q < k; ++q) {
            ga.at(i, q) += n.grad.at(i) * vv.at(q);
            gv.at(q) += va.at(i, q) * n.grad.at(i);
          }
        break;
      }
      case Op::CumSumLast: {
        const Eigen::Index nn = n.value.shape.dim(n.value.shape.rank() - 1);
        const Eigen::Index groups = n.value.numel() / nn;
        Eigen::ArrayXd& ga = node(n.a).grad.data;
        for (Eigen::Index grp = 0; grp < groups; ++grp) {
          double acc = 0.0;
          for (Eigen::Index j = nn - 1; j >= 0; --j) {
            acc += g[grp * nn + j];
            ga[grp * nn + j] += acc;
          }
        }
        break;
      }
      case Op::Pick:
        node(n.a).grad.data[n.iaux] += g[0];
        break;
      case Op::Slice0: {
        const Eigen::Index block = n.value.numel();
        node(n.a).grad.data.segment(n.iaux * block, block) += g;
        break;
      }
      case Op::AffineGrid: {
        const int H = n.iaux, W = n.iaux2;
        Tensor& gm = node(n.a).grad;
        Tensor& gt = node(n.b).grad;
        double m00 = 0, m01 = 0, m10 = 0, m11 = 0, tt0 = 0, tt1 = 0;
        for (int r = 0; r < H; ++r) {
          const double y = 2.0 * r / (H - 1) - 1.0;
          for (int c = 0; c < W; ++c) {
            const double x = 2.0 * c / (W - 1) - 1.0;
            const double g0 = n.grad.at(r, c, 0);
            const double g1 = n.grad.at(r, c, 1);
            m00 += g0 * x;
            m01 += g0 * y;
            m10 += g1 * x;
            m11 += g1 * y;
            tt0 += g0;
            tt1 += g1;
          }
        }
        gm.at(0, 0) += m00;
        gm.at(0, 1) += m01;
        gm.at(1, 0) += m10;
        gm.at(1, 1) += m11;
        gt.at(0) += tt0;
        gt.at(1) += tt1;
        break;
      }
      case Op::GatherBilinear: {
        const Tensor& vi = node(n.a).value;
        const Tensor& vc = node(n.b).value;
        Tensor& gi = node(n.a).grad;
        Tensor& gc = node(n.b).grad;
        const int H = vi.shape.dim(0), W = vi.shape.dim(1);
        const int Ho = vc.shape.dim(0), Wo = vc.shape.dim(1);
        for (int r = 0; r < Ho; ++r)
          for (int c = 0; c < Wo; ++c) {
            const double gout = n.grad.at(r, c);
            if (gout == 0.0) continue;
            const double x = vc.at(r, c, 0);
            const double y = vc.at(r, c, 1);
            const double pc = (x + 1.0) * (W - 1) / 2.0;
            const double pr = (y + 1.0) * (H - 1) / 2.0;
            const BilinearCell cell = bilinear_cell(pr, pc);
            const double s00 = read_pixel(vi.data, H, W, cell.r0, cell.c0);
            const double s01 = read_pixel(vi.data, H, W, cell.r0, cell.c0 + 1);
            const double s10 = read_pixel(vi.data, H, W, cell.r0 + 1, cell.c0);
            const double s11 = read_pixel(vi.data, H, W, cell.r0 + 1, cell.c0 + 1);
            const double w00 = (1.0 - cell.fr) * (1.0 - cell.fc);
            const double w01 = (1.0 - cell.fr) * cell.fc;
            const double w10 = cell.fr * (1.0 - cell.fc);
            const double w11 = cell.fr * cell.fc;
            auto bump = [&](int rr, int cc, double w) {
              if (rr >= 0 && rr < H && cc >= 0 && cc < W)
                gi.data[static_cast<Eigen::Index>(rr) * W + cc] += w * gout;
            };
            bump(cell.r0, cell.c0, w00);
            bump(cell.r0, cell.c0 + 1, w01);
            bump(cell.r0 + 1, cell.c0, w10);
            bump(cell.r0 + 1, cell.c0 + 1, w11);
            const double dval_dpc = (1.0 - cell.fr) * (s01 - s00) + cell.fr * (s11 - s10);
            const double dval_dpr = (1.0 - cell.fc) * (s10 - s00) + cell.fc * (s11 - s01);
            gc.at(r, c, 0) += gout * dval_dpc * (W - 1) / 2.0;
            gc.at(r, c, 1) += gout * dval_dpr * (H - 1) / 2.0;
          }
        break;
      }
    }
  }

  std::map<NodeId, Tensor> leaf_grads;
  for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id)
    if (nodes_[static_cast<std::size_t>(id)].op == Op::Leaf)
      leaf_grads.emplace(id, nodes_[static_cast<std::size_t>(id)].grad);
  return leaf_grads;
}

}  // namespace liedecomp
