#include "liedecomp/scene.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

using nlohmann::json;

namespace liedecomp {

void ObservedSequence::validate() const {
  frame.validate();
  if (frames.size() < 2) throw ValidationError("ObservedSequence: need at least 2 frames");
  const Shape expect{frame.H, frame.W};
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].shape != expect)
      throw ValidationError("ObservedSequence: frame " + std::to_string(i) + " has shape " +
                            frames[i].shape.str() + ", expected " + expect.str());
    if (!frames[i].all_finite())
      throw ValidationError("ObservedSequence: frame " + std::to_string(i) + " not finite");
    if (frames[i].data.minCoeff() < 0.0 || frames[i].data.maxCoeff() > 1.0)
      throw ValidationError("ObservedSequence: frame " + std::to_string(i) +
                            " outside [0,1]");
  }
}

void ModelState::validate() const {
  frame.validate();
  if (L < 1 || K < 1 || N < 1) throw ValidationError("ModelState: L, K, N must be >= 1");
  if (logits.shape != Shape{L, frame.H, frame.W})
    throw ValidationError("ModelState: logits shape " + logits.shape.str() +
                          " inconsistent with L,H,W");
  if (static_cast<int>(transformers.size()) != K)
    throw ValidationError("ModelState: transformer count != K");
  if (delta_lambda.shape != Shape{K, L, N})
    throw ValidationError("ModelState: delta_lambda shape " + delta_lambda.shape.str() +
                          " inconsistent with K,L,N");
  if (!logits.all_finite() || !delta_lambda.all_finite())
    throw ValidationError("ModelState: non-finite parameters");
  for (const FlowParams& p : transformers)
    if (!p.A.allFinite() || !p.b.allFinite())
      throw ValidationError("ModelState: non-finite transformer parameters");
}

Tensor pattern_weights(const Tensor& logits) {
  if (logits.shape.rank() != 3)
    throw ShapeError("pattern_weights: logits must be {L,H,W}, got " + logits.shape.str());
  if (!logits.all_finite()) throw NonFiniteError("pattern_weights: non-finite logits");
  return softmax_forward(logits, 0);
}

std::vector<Tensor> pattern_primitives(const Tensor& X0, const Tensor& weights) {
  if (weights.shape.rank() != 3)
    throw ShapeError("pattern_primitives: weights must be {L,H,W}");
  const int L = weights.shape.dim(0);
  const Shape img{weights.shape.dim(1), weights.shape.dim(2)};
  if (X0.shape != img)
    throw ShapeError("pattern_primitives: image shape " + X0.shape.str() +
                     " does not match weights " + weights.shape.str());
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(L));
  const Eigen::Index block = img.numel();
  for (int l = 0; l < L; ++l)
    out.push_back(Tensor(img, X0.data * weights.data.segment(l * block, block)));
  return out;
}

Tensor cumulative_lambda(const Tensor& deltas) {
  if (deltas.shape.rank() != 3)
    throw ShapeError("cumulative_lambda: deltas must be {K,L,N}, got " + deltas.shape.str());
  const int K = deltas.shape.dim(0), L = deltas.shape.dim(1), N = deltas.shape.dim(2);
  Tensor out = Tensor::zeros(Shape{K, L, N + 1});
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < L; ++l) {
      double acc = 0.0;
      out.at(k, l, 0) = 0.0;
      for (int i = 0; i < N; ++i) {
        acc += deltas.at(k, l, i);
        out.at(k, l, i + 1) = acc;
      }
    }
  return out;
}

SceneGraph build_scene_graph(Tape& tape, const ModelState& state, const Tensor& X0,
                             bool with_Y0) {
  state.validate();
  if (X0.shape != Shape{state.frame.H, state.frame.W})
    throw ShapeError("build_scene_graph: X0 shape " + X0.shape.str() +
                     " does not match model frame");

  SceneGraph g;
  g.logits = tape.leaf(state.logits);
  g.delta_lambda = tape.leaf(state.delta_lambda);
  for (const FlowParams& p : state.transformers) {
    FlowNodes fn;
    fn.A = tape.leaf(
        Tensor::from_vector(Shape{2, 2}, {p.A(0, 0), p.A(0, 1), p.A(1, 0), p.A(1, 1)}));
    fn.b = tape.leaf(Tensor::from_vector(Shape{2}, {p.b(0), p.b(1)}));
    g.theta.push_back(fn);
  }

  g.weights = tape.softmax(g.logits, 0);
  const NodeId x0 = tape.leaf(X0);
  for (int l = 0; l < state.L; ++l)
    g.patterns.push_back(tape.mul(tape.slice0(g.weights, l), x0));

  g.lambda = tape.cumsum_last(g.delta_lambda);

  if (with_Y0) {
    NodeId y0 = g.patterns[0];
    for (int l = 1; l < state.L; ++l) y0 = tape.add(y0, g.patterns[static_cast<std::size_t>(l)]);
    g.Y0 = y0;
  }

  // Y_i = sum_l warp(P_l, T_1 o ... o T_K); the sampling grid uses the
  // inverse composite, built directly from negated quantities so the group
  // inverse is exact.
  const int N = state.N, K = state.K;
  for (int i = 1; i <= N; ++i) {
    NodeId yi = -1;
    for (int l = 0; l < state.L; ++l) {
      AffineNodes inv;
      bool first = true;
      for (int k = 0; k < K; ++k) {
        const Eigen::Index flat =
            (static_cast<Eigen::Index>(k) * state.L + l) * N + (i - 1);
        const NodeId neg_lam = tape.scale(-1.0, tape.pick(g.lambda, flat));
        const AffineNodes mk =
            flow_exp_nodes(tape, g.theta[static_cast<std::size_t>(k)].A,
                           g.theta[static_cast<std::size_t>(k)].b, neg_lam);
        // inverse composite: T_K^-1 outermost, T_1^-1 innermost
        inv = first ? mk : compose_nodes(tape, mk, inv);
        first = false;
      }
      const NodeId warped =
          warp_nodes(tape, g.patterns[static_cast<std::size_t>(l)], inv, state.frame);
      yi = (l == 0) ? warped : tape.add(yi, warped);
    }
    g.Y.push_back(yi);
  }
  return g;
}

std::vector<Tensor> reconstruct(const ModelState& state, const Tensor& X0) {
  Tape tape;
  const SceneGraph g = build_scene_graph(tape, state, X0, /*with_Y0=*/true);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(state.N) + 1);
  out.push_back(tape.value(g.Y0));
  for (const NodeId y : g.Y) out.push_back(tape.value(y));
  return out;
}

namespace {

json tensor_to_json(const Tensor& t) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < t.numel(); ++i) arr.push_back(t.data[i]);
  return arr;
}

void tensor_from_json(const json& arr, Tensor& t) {
  if (static_cast<Eigen::Index>(arr.size()) != t.numel())
    throw ValidationError("checkpoint: array size does not match tensor shape");
  for (Eigen::Index i = 0; i < t.numel(); ++i) t.data[i] = arr[static_cast<std::size_t>(i)];
}

}  // namespace

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ckpt.state.validate();
  json doc;
  doc["dims"] = {{"H", ckpt.state.frame.H},
                 {"W", ckpt.state.frame.W},
                 {"L", ckpt.state.L},
                 {"K", ckpt.state.K},
                 {"N", ckpt.state.N}};
  doc["logits"] = tensor_to_json(ckpt.state.logits);
  json transformers = json::array();
  for (const FlowParams& p : ckpt.state.transformers) {
    json tj;
    tj["A"] = {{p.A(0, 0), p.A(0, 1)}, {p.A(1, 0), p.A(1, 1)}};
    tj["b"] = {p.b(0), p.b(1)};
    transformers.push_back(tj);
  }
  doc["transformers"] = transformers;
  doc["delta_lambda"] = tensor_to_json(ckpt.state.delta_lambda);
  doc["config_hash"] = ckpt.config_hash;
  doc["rng_seed"] = ckpt.rng_seed;
  atomic_write_text(path, doc.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + ": " + e.what());
  }
  try {
    Checkpoint ckpt;
    const json& dims = doc.at("dims");
    ckpt.state.frame.H = dims.at("H").get<int>();
    ckpt.state.frame.W = dims.at("W").get<int>();
    ckpt.state.L = dims.at("L").get<int>();
    ckpt.state.K = dims.at("K").get<int>();
    ckpt.state.N = dims.at("N").get<int>();
    ckpt.state.logits = Tensor::zeros(Shape{ckpt.state.L, ckpt.state.frame.H, ckpt.state.frame.W});
    tensor_from_json(doc.at("logits"), ckpt.state.logits);
    for (const json& tj : doc.at("transformers")) {
      FlowParams p;
      p.A << tj.at("A")[0][0].get<double>(), tj.at("A")[0][1].get<double>(),
          tj.at("A")[1][0].get<double>(), tj.at("A")[1][1].get<double>();
      p.b << tj.at("b")[0].get<double>(), tj.at("b")[1].get<double>();
      ckpt.state.transformers.push_back(p);
    }
    ckpt.state.delta_lambda = Tensor::zeros(Shape{ckpt.state.K, ckpt.state.L, ckpt.state.N});
    tensor_from_json(doc.at("delta_lambda"), ckpt.state.delta_lambda);
    ckpt.config_hash = doc.at("config_hash").get<std::uint64_t>();
    ckpt.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
    ckpt.state.validate();
    return ckpt;
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace liedecomp
