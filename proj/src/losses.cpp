#include "liedecomp/losses.hpp"

#include <cmath>
#include <string>

namespace liedecomp {

namespace {

constexpr double kInertLambdaScale = 1e-6;

void check_aligned(const std::vector<NodeId>& X, const std::vector<NodeId>& Y,
                   const char* who) {
  if (X.size() != Y.size())
    throw ValidationError(std::string(who) + ": sequence length mismatch, " +
                          std::to_string(X.size()) + " vs " + std::to_string(Y.size()));
  if (X.empty()) throw ValidationError(std::string(who) + ": empty sequences");
}

}  // namespace

NodeId recon_loss_patterns(Tape& tape, const std::vector<NodeId>& X,
                           const std::vector<NodeId>& Y, double r) {
  check_aligned(X, Y, "recon_loss_patterns");
  NodeId total = -1;
  double ri = 1.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    ri *= r;
    const NodeId term = tape.scale(ri, tape.sum(tape.square(tape.sub(X[i], Y[i]))));
    total = (i == 0) ? term : tape.add(total, term);
  }
  return total;
}

NodeId masked_recon_loss(Tape& tape, const std::vector<NodeId>& X,
                         const std::vector<NodeId>& Y, double r) {
  check_aligned(X, Y, "masked_recon_loss");
  NodeId total = -1;
  double ri = 1.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    ri *= r;
    const NodeId masked = tape.mul(Y[i], X[i]);
    const NodeId term = tape.scale(ri, tape.sum(tape.square(tape.sub(X[i], masked))));
    total = (i == 0) ? term : tape.add(total, term);
  }
  return total;
}

NodeId pattern_entropy(Tape& tape, NodeId weights, const Tensor& X0) {
  const Tensor& w = tape.value(weights);
  if (w.shape.rank() != 3)
    throw ShapeError("pattern_entropy: weights must be {L,H,W}, got " + w.shape.str());
  if (X0.shape != Shape{w.shape.dim(1), w.shape.dim(2)})
    throw ShapeError("pattern_entropy: X0 shape " + X0.shape.str() +
                     " does not match weights " + w.shape.str());

  Tensor support = Tensor::zeros(X0.shape);
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < X0.numel(); ++i)
    if (X0.data[i] > 0.0) {
      support.data[i] = 1.0;
      ++count;
    }
  if (count == 0) throw ValidationError("pattern_entropy: X0 has empty support");

  const int L = w.shape.dim(0);
  const NodeId mask = tape.leaf(support);
  NodeId entropy = -1;
  for (int l = 0; l < L; ++l) {
    const NodeId q =
        tape.scale(1.0 / static_cast<double>(count), tape.sum(tape.mul(tape.slice0(weights, l), mask)));
    const NodeId term = tape.mul(q, tape.log_eps(q));
    entropy = (l == 0) ? term : tape.add(entropy, term);
  }
  return tape.scale(-1.0, entropy);
}

NodeId l1_reg(Tape& tape, const std::vector<FlowNodes>& theta) {
  NodeId total = -1;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const NodeId term =
        tape.add(tape.sum(tape.abs(theta[k].A)), tape.sum(tape.abs(theta[k].b)));
    total = (k == 0) ? term : tape.add(total, term);
  }
  if (total == -1) total = tape.leaf(Tensor::scalar(0.0));
  return total;
}

// Signed max over l of the final quantities, as printed in the source
// formula; it fixes the scale and the orientation (largest final quantity
// is driven toward +1), which is what unsticks mirror-signed paths.
double lambda_scale_normalizer(const Tensor& lam, int k) {
  const int L = lam.shape.dim(1), N = lam.shape.dim(2);
  double s_k = lam.at(k, 0, N - 1);
  for (int l = 1; l < L; ++l) s_k = std::max(s_k, lam.at(k, l, N - 1));
  return s_k;
}

LambdaScaleTarget make_lambda_scale_target(const Tensor& lam) {
  if (lam.shape.rank() != 3)
    throw ShapeError("lambda_scale: lambda table must be {K,L,N}, got " + lam.shape.str());
  const int K = lam.shape.dim(0), L = lam.shape.dim(1), N = lam.shape.dim(2);
  LambdaScaleTarget out;
  out.target = Tensor::zeros(lam.shape);
  out.active.resize(static_cast<std::size_t>(K), false);
  for (int k = 0; k < K; ++k) {
    const double s_k = lambda_scale_normalizer(lam, k);
    if (std::abs(s_k) < kInertLambdaScale) continue;  // inert transformer
    out.active[static_cast<std::size_t>(k)] = true;
    for (int l = 0; l < L; ++l)
      for (int i = 0; i < N; ++i) out.target.at(k, l, i) = lam.at(k, l, i) / s_k;
  }
  return out;
}

NodeId lambda_scale_loss(Tape& tape, NodeId lambda_cum, const LambdaScaleTarget& target) {
  const Tensor& lam = tape.value(lambda_cum);
  if (target.target.shape != lam.shape)
    throw ShapeError("lambda_scale_loss: target shape " + target.target.shape.str() +
                     " does not match table " + lam.shape.str());
  const int K = lam.shape.dim(0);

  NodeId total = tape.leaf(Tensor::scalar(0.0));
  for (int k = 0; k < K; ++k) {
    if (!target.active[static_cast<std::size_t>(k)]) continue;
    const NodeId slice = tape.slice0(lambda_cum, k);
    Tensor t = Tensor::zeros(tape.value(slice).shape);
    t.data = target.target.data.segment(k * t.numel(), t.numel());
    const NodeId tgt = tape.leaf(std::move(t));  // detached by construction
    total = tape.add(total, tape.sum(tape.abs(tape.sub(slice, tgt))));
  }
  return total;
}

NodeId lambda_scale_loss(Tape& tape, NodeId lambda_cum) {
  // Live variant: the target is lambda / s_k behind a stop-gradient, so it
  // tracks the current table but contributes no gradient.
  const LambdaScaleTarget target = make_lambda_scale_target(tape.value(lambda_cum));
  const Tensor& lam = tape.value(lambda_cum);
  const int K = lam.shape.dim(0);

  NodeId total = tape.leaf(Tensor::scalar(0.0));
  for (int k = 0; k < K; ++k) {
    if (!target.active[static_cast<std::size_t>(k)]) continue;
    const double s_k = lambda_scale_normalizer(lam, k);
    const NodeId slice = tape.slice0(lambda_cum, k);
    const NodeId tgt = tape.stop_gradient(tape.scale(1.0 / s_k, slice));
    total = tape.add(total, tape.sum(tape.abs(tape.sub(slice, tgt))));
  }
  return total;
}

NodeId inner_product_loss(Tape& tape, const std::vector<FlowNodes>& theta) {
  NodeId total = tape.leaf(Tensor::scalar(0.0));
  for (std::size_t i = 0; i + 1 < theta.size(); ++i)
    for (std::size_t j = i + 1; j < theta.size(); ++j) {
      const NodeId dotA = tape.sum(tape.mul(theta[i].A, theta[j].A));
      const NodeId dotb = tape.sum(tape.mul(theta[i].b, theta[j].b));
      total = tape.add(total, tape.add(tape.square(dotA), tape.square(dotb)));
    }
  return total;
}

ObjectiveNodes build_objectives(Tape& tape, const SceneGraph& graph,
                                const ObservedSequence& seq, const LossWeights& weights,
                                const LambdaScaleTarget* frozen_scale_target) {
  weights.validate();
  if (static_cast<int>(graph.Y.size()) != seq.steps())
    throw ValidationError("build_objectives: graph has " + std::to_string(graph.Y.size()) +
                          " reconstructed frames for " + std::to_string(seq.steps()) +
                          " observed steps");

  std::vector<NodeId> X;
  X.reserve(graph.Y.size());
  for (int i = 1; i <= seq.steps(); ++i)
    X.push_back(tape.leaf(seq.frames[static_cast<std::size_t>(i)]));

  ObjectiveNodes nodes;
  nodes.recon_P = recon_loss_patterns(tape, X, graph.Y, weights.r);
  nodes.entropy = pattern_entropy(tape, graph.weights, seq.frames[0]);
  nodes.recon_T_masked = masked_recon_loss(tape, X, graph.Y, weights.r);
  nodes.l1 = l1_reg(tape, graph.theta);
  nodes.lambda_scale = frozen_scale_target
                           ? lambda_scale_loss(tape, graph.lambda, *frozen_scale_target)
                           : lambda_scale_loss(tape, graph.lambda);
  nodes.inner_prod = inner_product_loss(tape, graph.theta);

  nodes.total_P = tape.add(nodes.recon_P, tape.scale(weights.alpha, nodes.entropy));
  nodes.total_T = tape.add(
      tape.add(nodes.recon_T_masked, tape.scale(weights.beta, nodes.l1)),
      tape.add(tape.scale(weights.gamma, nodes.lambda_scale),
               tape.scale(weights.delta, nodes.inner_prod)));
  return nodes;
}

LossReport extract_report(const Tape& tape, const ObjectiveNodes& nodes) {
  LossReport r;
  const auto read = [&](NodeId id, const char* name) {
    const double v = tape.value(id).value();
    if (!std::isfinite(v))
      throw NonFiniteError(std::string("loss term '") + name + "' is non-finite");
    return v;
  };
  r.recon_P = read(nodes.recon_P, "recon_P");
  r.entropy = read(nodes.entropy, "entropy");
  r.recon_T_masked = read(nodes.recon_T_masked, "recon_T_masked");
  r.l1 = read(nodes.l1, "l1");
  r.lambda_scale = read(nodes.lambda_scale, "lambda_scale");
  r.inner_prod = read(nodes.inner_prod, "inner_prod");
  r.total_P = read(nodes.total_P, "total_P");
  r.total_T = read(nodes.total_T, "total_T");
  return r;
}

LossReport evaluate_losses(const ModelState& state, const ObservedSequence& seq,
                           const LossWeights& weights) {
  seq.validate();
  if (!(state.frame == seq.frame) || state.N != seq.steps())
    throw ValidationError("evaluate_losses: model and sequence dimensions differ");
  Tape tape;
  const SceneGraph g = build_scene_graph(tape, state, seq.frames[0]);
  const ObjectiveNodes nodes = build_objectives(tape, g, seq, weights);
  return extract_report(tape, nodes);
}

std::vector<double> masked_mse_per_active_pixel(const ModelState& state,
                                                const ObservedSequence& seq) {
  const std::vector<Tensor> Y = reconstruct(state, seq.frames[0]);
  std::vector<double> out;
  for (int i = 1; i <= seq.steps(); ++i) {
    const Tensor& X = seq.frames[static_cast<std::size_t>(i)];
    double err = 0.0;
    Eigen::Index active = 0;
    for (Eigen::Index p = 0; p < X.numel(); ++p) {
      if (X.data[p] <= 0.0) continue;
      const double d = X.data[p] - Y[static_cast<std::size_t>(i)].data[p] * X.data[p];
      err += d * d;
      ++active;
    }
    out.push_back(active > 0 ? err / static_cast<double>(active) : 0.0);
  }
  return out;
}

}  // namespace liedecomp
