#include "liedecomp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace liedecomp {

std::vector<double> pattern_area_ratios(const Tensor& weights, const Tensor& X0) {
  if (weights.shape.rank() != 3)
    throw ShapeError("pattern_area_ratios: weights must be {L,H,W}");
  const int L = weights.shape.dim(0);
  const Eigen::Index block = X0.numel();
  Eigen::Index support = 0;
  for (Eigen::Index i = 0; i < block; ++i)
    if (X0.data[i] > 0.0) ++support;
  if (support == 0) throw ValidationError("pattern_area_ratios: X0 has empty support");

  std::vector<double> Q(static_cast<std::size_t>(L), 0.0);
  for (int l = 0; l < L; ++l) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < block; ++i)
      if (X0.data[i] > 0.0) acc += weights.data[l * block + i];
    Q[static_cast<std::size_t>(l)] = acc / static_cast<double>(support);
  }
  return Q;
}

int count_active_patterns(const std::vector<double>& Q, double tau_p) {
  if (!(tau_p > 0.0 && tau_p < 1.0))
    throw ValidationError("count_active_patterns: tau_p must be in (0,1)");
  int count = 0;
  for (double q : Q)
    if (q > tau_p) ++count;
  return count;
}

std::vector<bool> classify_identity(const std::vector<FlowParams>& transformers,
                                    double tau_id) {
  if (tau_id <= 0.0) throw ValidationError("classify_identity: tau_id must be positive");
  std::vector<bool> identity;
  identity.reserve(transformers.size());
  for (const FlowParams& p : transformers)
    identity.push_back(p.A.norm() + p.b.norm() < tau_id);
  return identity;
}

DirectionAnalysis direction_analysis(const std::vector<FlowParams>& transformers,
                                     const std::vector<bool>& identity) {
  DirectionAnalysis out;
  for (std::size_t k = 0; k < transformers.size(); ++k) {
    if (identity[k]) continue;
    const FlowParams& p = transformers[k];
    TransformerInfo info;
    info.index = static_cast<int>(k);
    info.identity = false;
    info.residual_A = p.A.norm();
    info.b_norm = p.b.norm();
    info.translational = info.b_norm >= 1e-9;
    if (info.translational) {
      info.direction = p.b / info.b_norm;
      info.translation_purity = info.b_norm / (info.b_norm + info.residual_A);
    }
    out.transformers.push_back(info);
  }
  for (std::size_t a = 0; a + 1 < out.transformers.size(); ++a)
    for (std::size_t b = a + 1; b < out.transformers.size(); ++b) {
      const TransformerInfo& ta = out.transformers[a];
      const TransformerInfo& tb = out.transformers[b];
      if (!ta.translational || !tb.translational) continue;
      PairScore s;
      s.i = ta.index;
      s.j = tb.index;
      s.independence = std::abs(ta.direction(0) * tb.direction(1) -
                                ta.direction(1) * tb.direction(0));
      out.pairs.push_back(s);
    }
  return out;
}

double pattern_object_iou(const Tensor& pattern, const Tensor& object_support) {
  if (pattern.shape != object_support.shape)
    throw ShapeError("pattern_object_iou: shape mismatch");
  Eigen::Index inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < pattern.numel(); ++i) {
    const bool a = pattern.data[i] > 0.5;
    const bool b = object_support.data[i] > 0.0;
    if (a && b) ++inter;
    if (a || b) ++uni;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

AffineMap composite_map(const ModelState& state, int l, int i) {
  state.validate();
  if (l < 0 || l >= state.L || i < 0 || i > state.N)
    throw ValidationError("composite_map: index out of range");
  const Tensor lam = cumulative_lambda(state.delta_lambda);
  AffineMap map = AffineMap::identity();
  // T_1 outermost: compose from k = K down to 1
  for (int k = state.K - 1; k >= 0; --k) {
    const AffineMap mk =
        integrate_flow(state.transformers[static_cast<std::size_t>(k)], lam.at(k, l, i));
    map = compose(mk, map);
  }
  return map;
}

namespace {

Tensor object_support_at(const GroundTruthObject& o, const CoordinateFrame& frame,
                         int frame_idx) {
  Tensor s = Tensor::zeros(Shape{frame.H, frame.W});
  const auto [r0, c0] = o.positions[static_cast<std::size_t>(frame_idx)];
  for (int r = 0; r < o.bitmap.shape.dim(0); ++r)
    for (int c = 0; c < o.bitmap.shape.dim(1); ++c)
      if (o.bitmap.at(r, c) > 0.0) s.at(r0 + r, c0 + c) = 1.0;
  return s;
}

Eigen::Vector2d support_centroid_normalized(const Tensor& support,
                                            const CoordinateFrame& frame) {
  double sr = 0.0, sc = 0.0, n = 0.0;
  for (int r = 0; r < frame.H; ++r)
    for (int c = 0; c < frame.W; ++c)
      if (support.at(r, c) > 0.0) {
        sr += r;
        sc += c;
        n += 1.0;
      }
  const double row = sr / n, col = sc / n;
  return {2.0 * col / (frame.W - 1) - 1.0, 2.0 * row / (frame.H - 1) - 1.0};
}

}  // namespace

EvalReport evaluate(const ModelState& state, const ObservedSequence& seq,
                    const std::vector<GroundTruthObject>& ground_truth,
                    const LossWeights& weights, double tau_p, double tau_id) {
  seq.validate();
  state.validate();
  if (!(state.frame == seq.frame) || state.N != seq.steps())
    throw ValidationError("evaluate: model and dataset dimensions differ");

  EvalReport report;
  const Tensor w = pattern_weights(state.logits);
  report.Q = pattern_area_ratios(w, seq.frames[0]);
  report.active_pattern_count = count_active_patterns(report.Q, tau_p);
  report.identity = classify_identity(state.transformers, tau_id);
  report.directions = direction_analysis(state.transformers, report.identity);
  report.final_losses = evaluate_losses(state, seq, weights);
  report.masked_mse_per_frame = masked_mse_per_active_pixel(state, seq);

  if (ground_truth.empty()) return report;

  // Greedy IoU matching of active patterns to ground-truth objects.
  const auto P = pattern_primitives(seq.frames[0], w);
  std::vector<std::pair<double, std::pair<int, int>>> candidates;
  for (int l = 0; l < state.L; ++l) {
    if (report.Q[static_cast<std::size_t>(l)] <= tau_p) continue;
    for (std::size_t oi = 0; oi < ground_truth.size(); ++oi) {
      const Tensor support = object_support_at(ground_truth[oi], seq.frame, 0);
      const double iou = pattern_object_iou(P[static_cast<std::size_t>(l)], support);
      candidates.push_back({iou, {l, static_cast<int>(oi)}});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<bool> used_pattern(static_cast<std::size_t>(state.L), false);
  std::vector<bool> used_object(ground_truth.size(), false);
  for (const auto& [iou, lp] : candidates) {
    const auto [l, oi] = lp;
    if (used_pattern[static_cast<std::size_t>(l)] || used_object[static_cast<std::size_t>(oi)])
      continue;
    used_pattern[static_cast<std::size_t>(l)] = true;
    used_object[static_cast<std::size_t>(oi)] = true;
    report.matches.push_back(PatternMatch{l, oi, iou});
  }

  // Displacement recovery: the learned composite map applied to the
  // object's frame-0 centroid should land on its frame-i centroid.
  for (const PatternMatch& m : report.matches) {
    const GroundTruthObject& obj = ground_truth[static_cast<std::size_t>(m.object)];
    const Tensor support0 = object_support_at(obj, seq.frame, 0);
    const Eigen::Vector2d c0 = support_centroid_normalized(support0, seq.frame);
    DisplacementRecovery rec;
    rec.object = m.object;
    rec.pattern = m.pattern;
    for (int i = 1; i <= state.N; ++i) {
      const AffineMap map = composite_map(state, m.pattern, i);
      const Eigen::Vector2d predicted = map.apply(c0);
      const auto [r0, col0] = obj.positions[0];
      const auto [ri, ci] = obj.positions[static_cast<std::size_t>(i)];
      const Eigen::Vector2d truth(
          c0(0) + (ci - col0) * pixel_pitch_x(seq.frame),
          c0(1) + (ri - r0) * pixel_pitch_y(seq.frame));
      const double err_px =
          std::max(std::abs(predicted(0) - truth(0)) / pixel_pitch_x(seq.frame),
                   std::abs(predicted(1) - truth(1)) / pixel_pitch_y(seq.frame));
      rec.max_error_px = std::max(rec.max_error_px, err_px);
    }
    report.recovery.push_back(rec);
  }
  return report;
}

std::string EvalReport::to_json_string() const {
  json doc;
  doc["active_pattern_count"] = active_pattern_count;
  doc["pattern_areas"] = Q;
  json classes = json::array();
  for (bool id : identity) classes.push_back(id ? "identity" : "active");
  doc["transformer_classes"] = classes;
  json infos = json::array();
  for (const TransformerInfo& t : directions.transformers) {
    json tj;
    tj["index"] = t.index;
    tj["translational"] = t.translational;
    if (t.translational) {
      tj["direction"] = {t.direction(0), t.direction(1)};
      tj["translation_purity"] = t.translation_purity;
    }
    tj["residual_A_fro"] = t.residual_A;
    tj["b_norm"] = t.b_norm;
    infos.push_back(tj);
  }
  doc["active_transformers"] = infos;
  json pairs = json::array();
  for (const PairScore& p : directions.pairs)
    pairs.push_back({{"i", p.i}, {"j", p.j}, {"independence", p.independence}});
  doc["independence"] = pairs;
  doc["final_losses"] = {{"recon_P", final_losses.recon_P},
                         {"entropy", final_losses.entropy},
                         {"recon_T_masked", final_losses.recon_T_masked},
                         {"l1", final_losses.l1},
                         {"lambda_scale", final_losses.lambda_scale},
                         {"inner_prod", final_losses.inner_prod},
                         {"total_P", final_losses.total_P},
                         {"total_T", final_losses.total_T}};
  doc["masked_mse_per_frame"] = masked_mse_per_frame;
  json matchesj = json::array();
  for (const PatternMatch& m : matches)
    matchesj.push_back({{"pattern", m.pattern}, {"object", m.object}, {"iou", m.iou}});
  doc["matches"] = matchesj;
  json recj = json::array();
  for (const DisplacementRecovery& r : recovery)
    recj.push_back(
        {{"object", r.object}, {"pattern", r.pattern}, {"max_error_px", r.max_error_px}});
  doc["displacement_recovery"] = recj;
  return doc.dump(2) + "\n";
}

}  // namespace liedecomp
