#pragma once

#include <optional>
#include <string>
#include <vector>

#include "liedecomp/dataset.hpp"
#include "liedecomp/losses.hpp"
#include "liedecomp/scene.hpp"

namespace liedecomp {

/// Area ratio of each pattern on the support of X0 (the Q_l of the
/// entropy loss).
std::vector<double> pattern_area_ratios(const Tensor& weights, const Tensor& X0);

/// Patterns whose area ratio exceeds tau_p.
int count_active_patterns(const std::vector<double>& Q, double tau_p);

/// True entries mark transformers with |A|_F + |b| below tau_id.
std::vector<bool> classify_identity(const std::vector<FlowParams>& transformers,
                                    double tau_id);

struct TransformerInfo {
  int index = 0;
  bool identity = false;
  bool translational = false;       // |b| above 1e-9 for an active transformer
  Eigen::Vector2d direction{0, 0};  // b / |b| when translational
  double translation_purity = 0.0;  // |b| / (|b| + |A|_F)
  double residual_A = 0.0;          // |A|_F
  double b_norm = 0.0;
};

struct PairScore {
  int i = 0;
  int j = 0;
  double independence = 0.0;  // |det [b_i^ b_j^]|: 1 orthogonal, 0 parallel
};

struct DirectionAnalysis {
  std::vector<TransformerInfo> transformers;  // active ones only
  std::vector<PairScore> pairs;
};

/// Dominant directions and pairwise independence of the active
/// transformers; non-translational actives are flagged and excluded from
/// pair scores.
DirectionAnalysis direction_analysis(const std::vector<FlowParams>& transformers,
                                     const std::vector<bool>& identity);

struct PatternMatch {
  int pattern = -1;
  int object = -1;
  double iou = 0.0;
};

struct DisplacementRecovery {
  int object = -1;
  int pattern = -1;
  double max_error_px = 0.0;  // worst per-frame per-axis error in pixels
};

struct EvalReport {
  int active_pattern_count = 0;
  std::vector<double> Q;
  std::vector<bool> identity;
  DirectionAnalysis directions;
  LossReport final_losses;
  std::vector<double> masked_mse_per_frame;  // per active pixel
  std::vector<PatternMatch> matches;                 // only with ground truth
  std::vector<DisplacementRecovery> recovery;        // only with ground truth
  std::string to_json_string() const;
};

/// Full post-training analysis of a checkpoint against a dataset.
EvalReport evaluate(const ModelState& state, const ObservedSequence& seq,
                    const std::vector<GroundTruthObject>& ground_truth,
                    const LossWeights& weights, double tau_p, double tau_id);

/// IoU of the thresholded pattern (P_l > 0.5) against an object support.
double pattern_object_iou(const Tensor& pattern, const Tensor& object_support);

/// Forward composite map T_1 o ... o T_K for pattern l at frame i.
AffineMap composite_map(const ModelState& state, int l, int i);

}  // namespace liedecomp
