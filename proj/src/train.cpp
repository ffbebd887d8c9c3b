#include "liedecomp/train.hpp"

#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>

#include "liedecomp/rng.hpp"

using nlohmann::json;

namespace liedecomp {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

void TrainConfig::validate() const {
  if (L < 1 || K < 1) throw ValidationError("TrainConfig: L and K must be >= 1");
  if (epochs_max < 1) throw ValidationError("TrainConfig: epochs_max must be >= 1");
  if (lr_theta <= 0 || lr_lambda <= 0 || lr_pattern <= 0)
    throw ValidationError("TrainConfig: learning rates must be positive");
  if (convergence_tol < 0) throw ValidationError("TrainConfig: convergence_tol must be >= 0");
  if (checkpoint_every < 1) throw ValidationError("TrainConfig: checkpoint_every must be >= 1");
  weights.validate();
}

std::string TrainConfig::to_json_string() const {
  json doc;
  doc["L"] = L;
  doc["K"] = K;
  doc["epochs_max"] = epochs_max;
  doc["lr_theta"] = lr_theta;
  doc["lr_lambda"] = lr_lambda;
  doc["lr_pattern"] = lr_pattern;
  doc["loss_weights"] = {{"r", weights.r},
                         {"alpha", weights.alpha},
                         {"beta", weights.beta},
                         {"gamma", weights.gamma},
                         {"delta", weights.delta}};
  doc["seed"] = seed;
  doc["convergence_tol"] = convergence_tol;
  doc["checkpoint_every"] = checkpoint_every;
  return doc.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  TrainConfig cfg;
  json doc;
  try {
    doc = json::parse(text);
    cfg.L = doc.value("L", cfg.L);
    cfg.K = doc.value("K", cfg.K);
    cfg.epochs_max = doc.value("epochs_max", cfg.epochs_max);
    cfg.lr_theta = doc.value("lr_theta", cfg.lr_theta);
    cfg.lr_lambda = doc.value("lr_lambda", cfg.lr_lambda);
    cfg.lr_pattern = doc.value("lr_pattern", cfg.lr_pattern);
    if (doc.contains("loss_weights")) {
      const json& w = doc["loss_weights"];
      cfg.weights.r = w.value("r", cfg.weights.r);
      cfg.weights.alpha = w.value("alpha", cfg.weights.alpha);
      cfg.weights.beta = w.value("beta", cfg.weights.beta);
      cfg.weights.gamma = w.value("gamma", cfg.weights.gamma);
      cfg.weights.delta = w.value("delta", cfg.weights.delta);
    }
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.convergence_tol = doc.value("convergence_tol", cfg.convergence_tol);
    cfg.checkpoint_every = doc.value("checkpoint_every", cfg.checkpoint_every);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("TrainConfig: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::uint64_t TrainConfig::hash() const {
  const std::string canon = to_json_string();
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double adam_step(AdamGroup& g, Eigen::ArrayXd& params, const Eigen::ArrayXd& grad, double lr) {
  if (params.size() != grad.size() || params.size() != g.m.size())
    throw ShapeError("adam_step: size mismatch");
  ++g.step;
  g.m = kBeta1 * g.m + (1.0 - kBeta1) * grad;
  g.v = kBeta2 * g.v + (1.0 - kBeta2) * grad.square();
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(g.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(g.step));
  const Eigen::ArrayXd delta = -lr * (g.m / bc1) / ((g.v / bc2).sqrt() + kAdamEps);
  params += delta;
  return delta.abs().maxCoeff();
}

OptimizerState make_optimizer(const ModelState& state) {
  OptimizerState opt;
  opt.theta = AdamGroup::sized(static_cast<Eigen::Index>(state.K) * 6);
  opt.lambda = AdamGroup::sized(state.delta_lambda.numel());
  opt.pattern = AdamGroup::sized(state.logits.numel());
  return opt;
}

Eigen::ArrayXd flatten_theta(const ModelState& state) {
  Eigen::ArrayXd flat(static_cast<Eigen::Index>(state.K) * 6);
  for (int k = 0; k < state.K; ++k) {
    const FlowParams& p = state.transformers[static_cast<std::size_t>(k)];
    flat[k * 6 + 0] = p.A(0, 0);
    flat[k * 6 + 1] = p.A(0, 1);
    flat[k * 6 + 2] = p.A(1, 0);
    flat[k * 6 + 3] = p.A(1, 1);
    flat[k * 6 + 4] = p.b(0);
    flat[k * 6 + 5] = p.b(1);
  }
  return flat;
}

void unflatten_theta(ModelState& state, const Eigen::ArrayXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(state.K) * 6)
    throw ShapeError("unflatten_theta: size mismatch");
  for (int k = 0; k < state.K; ++k) {
    FlowParams& p = state.transformers[static_cast<std::size_t>(k)];
    p.A(0, 0) = flat[k * 6 + 0];
    p.A(0, 1) = flat[k * 6 + 1];
    p.A(1, 0) = flat[k * 6 + 2];
    p.A(1, 1) = flat[k * 6 + 3];
    p.b(0) = flat[k * 6 + 4];
    p.b(1) = flat[k * 6 + 5];
  }
}

ModelState init_state(const TrainConfig& config, const ObservedSequence& seq,
                      std::uint64_t seed) {
  config.validate();
  seq.validate();

  ModelState state;
  state.frame = seq.frame;
  state.L = config.L;
  state.K = config.K;
  state.N = seq.steps();
  state.logits = Tensor::zeros(Shape{state.L, state.frame.H, state.frame.W});
  state.transformers.resize(static_cast<std::size_t>(state.K));
  state.delta_lambda = Tensor::zeros(Shape{state.K, state.L, state.N});

  GaussianRng rng(seed);
  for (Eigen::Index i = 0; i < state.logits.numel(); ++i)
    state.logits.data[i] = rng.normal(0.0, 0.01);
  for (int k = 0; k < state.K; ++k) {
    FlowParams& p = state.transformers[static_cast<std::size_t>(k)];
    p.A(0, 0) = rng.normal(0.0, 0.1);
    p.A(0, 1) = rng.normal(0.0, 0.1);
    p.A(1, 0) = rng.normal(0.0, 0.1);
    p.A(1, 1) = rng.normal(0.0, 0.1);
    p.b(0) = rng.normal(0.0, 0.1);
    p.b(1) = rng.normal(0.0, 0.1);
  }
  for (Eigen::Index i = 0; i < state.delta_lambda.numel(); ++i)
    state.delta_lambda.data[i] = rng.normal(0.0, 0.1);

  state.validate();
  return state;
}

EpochResult run_epoch(ModelState& state, OptimizerState& opt, const TrainConfig& config,
                      const ObservedSequence& seq) {
  LossReport report;
  double max_delta = 0.0;

  // Transformer phase: one forward, one backward; both gradients are
  // extracted before either update so they refer to the same parameters.
  {
    Tape tape;
    const SceneGraph g = build_scene_graph(tape, state, seq.frames[0]);
    const ObjectiveNodes nodes = build_objectives(tape, g, seq, config.weights);
    const LossReport fwd = extract_report(tape, nodes);
    report.recon_T_masked = fwd.recon_T_masked;
    report.l1 = fwd.l1;
    report.lambda_scale = fwd.lambda_scale;
    report.inner_prod = fwd.inner_prod;
    report.total_T = fwd.total_T;

    tape.backward(nodes.total_T);
    Eigen::ArrayXd grad_theta(static_cast<Eigen::Index>(state.K) * 6);
    for (int k = 0; k < state.K; ++k) {
      const Tensor& gA = tape.grad(g.theta[static_cast<std::size_t>(k)].A);
      const Tensor& gb = tape.grad(g.theta[static_cast<std::size_t>(k)].b);
      grad_theta[k * 6 + 0] = gA.at(0, 0);
      grad_theta[k * 6 + 1] = gA.at(0, 1);
      grad_theta[k * 6 + 2] = gA.at(1, 0);
      grad_theta[k * 6 + 3] = gA.at(1, 1);
      grad_theta[k * 6 + 4] = gb.at(0);
      grad_theta[k * 6 + 5] = gb.at(1);
    }
    const Eigen::ArrayXd grad_lambda = tape.grad(g.delta_lambda).data;
    if (!grad_theta.allFinite() || !grad_lambda.allFinite())
      throw NonFiniteError("transformer gradient is non-finite");

    Eigen::ArrayXd theta_flat = flatten_theta(state);
    max_delta = std::max(max_delta, adam_step(opt.theta, theta_flat, grad_theta, config.lr_theta));
    unflatten_theta(state, theta_flat);
    max_delta = std::max(
        max_delta, adam_step(opt.lambda, state.delta_lambda.data, grad_lambda, config.lr_lambda));
  }

  // Pattern phase: fresh forward against the updated transformers.
  {
    Tape tape;
    const SceneGraph g = build_scene_graph(tape, state, seq.frames[0]);
    const ObjectiveNodes nodes = build_objectives(tape, g, seq, config.weights);
    const LossReport fwd = extract_report(tape, nodes);
    report.recon_P = fwd.recon_P;
    report.entropy = fwd.entropy;
    report.total_P = fwd.total_P;

    tape.backward(nodes.total_P);
    const Eigen::ArrayXd grad_logits = tape.grad(g.logits).data;
    if (!grad_logits.allFinite()) throw NonFiniteError("pattern gradient is non-finite");
    max_delta = std::max(
        max_delta, adam_step(opt.pattern, state.logits.data, grad_logits, config.lr_pattern));
  }

  return EpochResult{report, max_delta};
}

FitResult fit(const ObservedSequence& seq, const TrainConfig& config, const TrainSinks* sinks) {
  config.validate();
  seq.validate();

  ModelState state = init_state(config, seq, config.seed);
  OptimizerState opt = make_optimizer(state);
  TrainHistory history;

  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  if (sinks && sinks->checkpoint) sinks->checkpoint(0, state);

  int epoch = 0;
  try {
    for (; epoch < config.epochs_max;) {
      const EpochResult r = run_epoch(state, opt, config, seq);
      ++epoch;
      history.epochs.push_back(r.report);
      if (sinks && epoch % config.checkpoint_every == 0) {
        if (sinks->checkpoint) sinks->checkpoint(epoch, state);
        history.epochs_run = epoch;
        history.wall_seconds = elapsed();
        if (sinks->metrics) sinks->metrics(history);
      }
      if (r.max_param_delta < config.convergence_tol) {
        history.converged = true;
        break;
      }
    }
  } catch (const NonFiniteError& e) {
    history.epochs_run = epoch;
    history.wall_seconds = elapsed();
    if (sinks && sinks->metrics) sinks->metrics(history);
    throw TrainingAbort(e.what(), epoch);
  } catch (const FlowOverflowError& e) {
    history.epochs_run = epoch;
    history.wall_seconds = elapsed();
    if (sinks && sinks->metrics) sinks->metrics(history);
    throw TrainingAbort(e.what(), epoch);
  }

  history.epochs_run = epoch;
  history.wall_seconds = elapsed();
  if (sinks) {
    if (sinks->checkpoint) sinks->checkpoint(epoch, state);
    if (sinks->metrics) sinks->metrics(history);
  }
  return FitResult{std::move(state), std::move(history)};
}

}  // namespace liedecomp
