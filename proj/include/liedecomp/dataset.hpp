#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "liedecomp/rng.hpp"
#include "liedecomp/scene.hpp"

namespace liedecomp {

/// One moving object: a binary glyph stamped at integer pixel positions.
struct SceneObject {
  std::string glyph = "X";  // "X", "O", "Y" or "custom"
  Tensor bitmap;            // resolved mask; filled from glyph unless custom
  int row0 = 0;
  int col0 = 0;
  int drow = 0;  // per-step displacement in pixels
  int dcol = 0;
  double intensity = 1.0;
};

struct SceneSpec {
  int H = 15;
  int W = 15;
  int frames = 8;  // N + 1
  std::vector<SceneObject> objects;

  std::string to_json_string() const;
  static SceneSpec from_json_string(const std::string& text);
};

/// Ground truth emitted alongside a generated sequence.
struct GroundTruthObject {
  std::string glyph;
  Tensor bitmap;
  double intensity = 1.0;
  int drow = 0;
  int dcol = 0;
  std::vector<std::pair<int, int>> positions;  // (row,col) origin per frame
};

struct GeneratedSequence {
  ObservedSequence sequence;
  std::vector<GroundTruthObject> objects;
};

/// Built-in 5x5 glyph masks.
const Tensor& glyph_bitmap(const std::string& id);

/// Integer-pixel placement of every object in every frame; rejects
/// out-of-bounds or overlapping supports naming the frame and objects.
GeneratedSequence generate_sequence(const SceneSpec& spec, GaussianRng& rng);

void save_dataset(const std::filesystem::path& path, const GeneratedSequence& data);

struct LoadedDataset {
  ObservedSequence sequence;
  std::vector<GroundTruthObject> ground_truth;  // empty if absent
};

LoadedDataset load_dataset(const std::filesystem::path& path);

}  // namespace liedecomp
