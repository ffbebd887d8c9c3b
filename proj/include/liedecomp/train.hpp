#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "liedecomp/losses.hpp"
#include "liedecomp/scene.hpp"

namespace liedecomp {

/// Raised when a loss term or gradient goes non-finite; carries the name
/// of the offending term so the run can report it.
struct TrainingAbort : std::runtime_error {
  explicit TrainingAbort(const std::string& what, int epoch_)
      : std::runtime_error(what), epoch(epoch_) {}
  int epoch = 0;
};

struct TrainConfig {
  int L = 3;
  int K = 3;
  int epochs_max = 20000;
  double lr_theta = 0.01;
  double lr_lambda = 0.01;
  double lr_pattern = 0.05;
  LossWeights weights;
  std::uint64_t seed = 0;
  double convergence_tol = 1e-6;
  int checkpoint_every = 1000;

  void validate() const;
  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);
  /// FNV-1a over the canonical JSON encoding.
  std::uint64_t hash() const;
};

/// Adaptive-moment accumulators for one parameter group.
struct AdamGroup {
  Eigen::ArrayXd m;
  Eigen::ArrayXd v;
  long step = 0;

  static AdamGroup sized(Eigen::Index n) {
    return AdamGroup{Eigen::ArrayXd::Zero(n), Eigen::ArrayXd::Zero(n), 0};
  }
};

/// One adaptive-moment update with betas (0.9, 0.999) and eps 1e-8;
/// returns the largest absolute parameter change.
double adam_step(AdamGroup& g, Eigen::ArrayXd& params, const Eigen::ArrayXd& grad, double lr);

struct OptimizerState {
  AdamGroup theta;
  AdamGroup lambda;
  AdamGroup pattern;
};

OptimizerState make_optimizer(const ModelState& state);

struct TrainHistory {
  std::vector<LossReport> epochs;
  double wall_seconds = 0.0;
  bool converged = false;
  int epochs_run = 0;
};

/// Random initialization in a fixed draw order (logits, then theta by k,
/// then delta-lambda in row-major (k,l,i) order), bit-deterministic given
/// the seed.
ModelState init_state(const TrainConfig& config, const ObservedSequence& seq,
                      std::uint64_t seed);

struct EpochResult {
  LossReport report;
  double max_param_delta = 0.0;
};

/// One pass of the alternating algorithm: forward; extract both theta and
/// lambda gradients of the transformer objective; update theta, then
/// lambda; forward again; update the pattern logits from the pattern
/// objective.
EpochResult run_epoch(ModelState& state, OptimizerState& opt, const TrainConfig& config,
                      const ObservedSequence& seq);

/// Optional observers used by the CLI to persist checkpoints and metrics.
struct TrainSinks {
  std::function<void(int epoch, const ModelState&)> checkpoint;
  std::function<void(const TrainHistory&)> metrics;
};

struct FitResult {
  ModelState state;
  TrainHistory history;
};

/// Runs epochs until the max absolute parameter change drops below
/// convergence_tol or epochs_max is reached. On a non-finite loss the
/// in-progress history is flushed to the sinks and TrainingAbort is
/// rethrown, leaving the last checkpoint in place.
FitResult fit(const ObservedSequence& seq, const TrainConfig& config,
              const TrainSinks* sinks = nullptr);

/// Flat views used by the optimizer (A row-major then b, per transformer).
Eigen::ArrayXd flatten_theta(const ModelState& state);
void unflatten_theta(ModelState& state, const Eigen::ArrayXd& flat);

}  // namespace liedecomp
