#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "liedecomp/affine.hpp"
#include "liedecomp/tape.hpp"
#include "liedecomp/tensor.hpp"

namespace liedecomp {

/// Frames X_0..X_N of one grayscale sequence, values in [0,1] with
/// background exactly zero.
struct ObservedSequence {
  CoordinateFrame frame;
  std::vector<Tensor> frames;

  int steps() const { return static_cast<int>(frames.size()) - 1; }
  void validate() const;
};

/// All learnable state: pattern logits (softmax over l gives the weights),
/// K flow transformers, and the per-step transformation quantities.
struct ModelState {
  CoordinateFrame frame;
  int L = 0;
  int K = 0;
  int N = 0;
  Tensor logits;                         // {L,H,W}
  std::vector<FlowParams> transformers;  // K entries
  Tensor delta_lambda;                   // {K,L,N}

  void validate() const;
};

/// Per-pixel softmax over the pattern axis; weights are positive and sum
/// to one at every pixel.
Tensor pattern_weights(const Tensor& logits);

/// P_l = X0 .* W_l; the partition sum_l P_l = X0 holds by construction.
std::vector<Tensor> pattern_primitives(const Tensor& X0, const Tensor& weights);

/// Cumulative transformation quantities: {K,L,N} deltas -> {K,L,N+1} table
/// with lambda_{k,l,0} = 0.
Tensor cumulative_lambda(const Tensor& deltas);

/// Reconstructed sequence Y_0..Y_N. X0 is the observed initial frame the
/// pattern primitives are carved from.
std::vector<Tensor> reconstruct(const ModelState& state, const Tensor& X0);

/// Tape-level forward pass shared by both objectives.
struct SceneGraph {
  NodeId logits = -1;
  NodeId delta_lambda = -1;
  std::vector<FlowNodes> theta;  // per transformer
  NodeId weights = -1;
  std::vector<NodeId> patterns;  // P_l
  NodeId lambda = -1;            // cumulative {K,L,N}, i >= 1
  NodeId Y0 = -1;                // only if requested
  std::vector<NodeId> Y;         // Y_1..Y_N
};

SceneGraph build_scene_graph(Tape& tape, const ModelState& state, const Tensor& X0,
                             bool with_Y0 = false);

/// Checkpoint document: model state plus provenance.
struct Checkpoint {
  ModelState state;
  std::uint64_t config_hash = 0;
  std::uint64_t rng_seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Write-then-rename so partial files never appear under the final name.
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace liedecomp
