#pragma once

#include <filesystem>
#include <vector>

#include "liedecomp/affine.hpp"
#include "liedecomp/tensor.hpp"

namespace liedecomp {

/// Grayscale strip of frames with 1-pixel separators, written as binary
/// PGM (P5); values map [0,1] -> [0,255]. The threshold view binarizes at
/// 0.5 for a clear look at near-converged patterns.
void write_pgm_strip(const std::filesystem::path& path, const std::vector<Tensor>& frames,
                     bool threshold = false);

struct FieldSample {
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
};

/// The velocity field A [x,y]^T + b evaluated on a grid_density^2 lattice
/// over [-1,1]^2.
std::vector<FieldSample> sample_field(const FlowParams& params, int grid_density);

void write_field_json(const std::filesystem::path& path,
                      const std::vector<FieldSample>& samples);

/// Arrow plot of the field; arrows are normalized to the largest magnitude
/// in the field, so a zero field renders with no arrows.
void write_field_svg(const std::filesystem::path& path,
                     const std::vector<FieldSample>& samples);

}  // namespace liedecomp
