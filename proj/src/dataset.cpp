#include "liedecomp/dataset.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace liedecomp {

namespace {

Tensor bitmap_from_rows(const std::vector<std::string>& rows) {
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows[0].size());
  Tensor t = Tensor::zeros(Shape{h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == '#')
        t.at(r, c) = 1.0;
  return t;
}

}  // namespace

const Tensor& glyph_bitmap(const std::string& id) {
  static const Tensor x = bitmap_from_rows({
      "#...#",
      ".#.#.",
      "..#..",
      ".#.#.",
      "#...#",
  });
  static const Tensor o = bitmap_from_rows({
      ".###.",
      "#...#",
      "#...#",
      "#...#",
      ".###.",
  });
  static const Tensor y = bitmap_from_rows({
      "#...#",
      ".#.#.",
      "..#..",
      "..#..",
      "..#..",
  });
  if (id == "X") return x;
  if (id == "O") return o;
  if (id == "Y") return y;
  throw ValidationError("glyph_bitmap: unknown glyph '" + id + "'");
}

std::string SceneSpec::to_json_string() const {
  json doc;
  doc["H"] = H;
  doc["W"] = W;
  doc["frames"] = frames;
  json objs = json::array();
  for (const SceneObject& o : objects) {
    json oj;
    oj["glyph"] = o.glyph;
    if (o.glyph == "custom") {
      json rows = json::array();
      for (int r = 0; r < o.bitmap.shape.dim(0); ++r) {
        json row = json::array();
        for (int c = 0; c < o.bitmap.shape.dim(1); ++c) row.push_back(o.bitmap.at(r, c));
        rows.push_back(row);
      }
      oj["bitmap"] = rows;
    }
    oj["start"] = {o.row0, o.col0};
    oj["step"] = {o.drow, o.dcol};
    oj["intensity"] = o.intensity;
    objs.push_back(oj);
  }
  doc["objects"] = objs;
  return doc.dump(2) + "\n";
}

SceneSpec SceneSpec::from_json_string(const std::string& text) {
  SceneSpec spec;
  json doc;
  try {
    doc = json::parse(text);
    spec.H = doc.value("H", spec.H);
    spec.W = doc.value("W", spec.W);
    spec.frames = doc.value("frames", spec.frames);
    for (const json& oj : doc.at("objects")) {
      SceneObject o;
      o.glyph = oj.value("glyph", std::string("X"));
      if (o.glyph == "custom") {
        const json& rows = oj.at("bitmap");
        const int h = static_cast<int>(rows.size());
        const int w = static_cast<int>(rows[0].size());
        o.bitmap = Tensor::zeros(Shape{h, w});
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c)
            o.bitmap.at(r, c) =
                rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
      } else {
        o.bitmap = glyph_bitmap(o.glyph);
      }
      o.row0 = oj.at("start")[0].get<int>();
      o.col0 = oj.at("start")[1].get<int>();
      o.drow = oj.at("step")[0].get<int>();
      o.dcol = oj.at("step")[1].get<int>();
      o.intensity = oj.value("intensity", 1.0);
      spec.objects.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("SceneSpec: ") + e.what());
  }
  if (spec.H < 2 || spec.W < 2) throw ValidationError("SceneSpec: H and W must be >= 2");
  if (spec.frames < 2) throw ValidationError("SceneSpec: need at least 2 frames");
  if (spec.objects.empty()) throw ValidationError("SceneSpec: no objects");
  for (const SceneObject& o : spec.objects)
    if (o.intensity <= 0.0 || o.intensity > 1.0)
      throw ValidationError("SceneSpec: intensity must be in (0,1]");
  return spec;
}

GeneratedSequence generate_sequence(const SceneSpec& spec, GaussianRng& rng) {
  (void)rng;  // placement is deterministic; the hook exists for noisy variants
  GeneratedSequence out;
  out.sequence.frame = CoordinateFrame{spec.H, spec.W};

  for (const SceneObject& o : spec.objects) {
    GroundTruthObject gt;
    gt.glyph = o.glyph;
    gt.bitmap = o.glyph == "custom" ? o.bitmap : glyph_bitmap(o.glyph);
    gt.intensity = o.intensity;
    gt.drow = o.drow;
    gt.dcol = o.dcol;
    out.objects.push_back(std::move(gt));
  }

  const int N = spec.frames - 1;
  for (int i = 0; i <= N; ++i) {
    Tensor frame = Tensor::zeros(Shape{spec.H, spec.W});
    std::vector<int> owner(static_cast<std::size_t>(spec.H) * spec.W, -1);
    for (std::size_t oi = 0; oi < spec.objects.size(); ++oi) {
      const SceneObject& o = spec.objects[oi];
      const Tensor& bm = out.objects[oi].bitmap;
      const int r0 = o.row0 + i * o.drow;
      const int c0 = o.col0 + i * o.dcol;
      for (int r = 0; r < bm.shape.dim(0); ++r)
        for (int c = 0; c < bm.shape.dim(1); ++c) {
          if (bm.at(r, c) == 0.0) continue;
          const int rr = r0 + r, cc = c0 + c;
          if (rr < 0 || rr >= spec.H || cc < 0 || cc >= spec.W)
            throw ValidationError("generate_sequence: frame " + std::to_string(i) +
                                  ": object " + std::to_string(oi) + " leaves the canvas");
          const std::size_t idx = static_cast<std::size_t>(rr) * spec.W + cc;
          if (owner[idx] >= 0)
            throw ValidationError("generate_sequence: frame " + std::to_string(i) +
                                  ": objects " + std::to_string(owner[idx]) + " and " +
                                  std::to_string(oi) + " overlap");
          owner[idx] = static_cast<int>(oi);
          frame.at(rr, cc) = o.intensity * bm.at(r, c);
        }
      out.objects[oi].positions.emplace_back(r0, c0);
    }
    out.sequence.frames.push_back(std::move(frame));
  }
  out.sequence.validate();
  return out;
}

void save_dataset(const std::filesystem::path& path, const GeneratedSequence& data) {
  json doc;
  doc["dims"] = {{"H", data.sequence.frame.H},
                 {"W", data.sequence.frame.W},
                 {"N", data.sequence.steps()}};
  json frames = json::array();
  for (const Tensor& f : data.sequence.frames) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < f.numel(); ++i) arr.push_back(f.data[i]);
    frames.push_back(arr);
  }
  doc["frames"] = frames;
  json objs = json::array();
  for (const GroundTruthObject& o : data.objects) {
    json oj;
    oj["glyph"] = o.glyph;
    json rows = json::array();
    for (int r = 0; r < o.bitmap.shape.dim(0); ++r) {
      json row = json::array();
      for (int c = 0; c < o.bitmap.shape.dim(1); ++c) row.push_back(o.bitmap.at(r, c));
      rows.push_back(row);
    }
    oj["bitmap"] = rows;
    oj["intensity"] = o.intensity;
    oj["step"] = {o.drow, o.dcol};
    json pos = json::array();
    for (const auto& [r, c] : o.positions) pos.push_back({r, c});
    oj["positions"] = pos;
    objs.push_back(oj);
  }
  doc["ground_truth"] = {{"objects", objs}};
  atomic_write_text(path, doc.dump() + "\n");
}

LoadedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ValidationError("dataset " + path.string() + ": " + e.what());
  }
  try {
    LoadedDataset out;
    out.sequence.frame.H = doc.at("dims").at("H").get<int>();
    out.sequence.frame.W = doc.at("dims").at("W").get<int>();
    for (const json& fj : doc.at("frames")) {
      Tensor f = Tensor::zeros(Shape{out.sequence.frame.H, out.sequence.frame.W});
      if (static_cast<Eigen::Index>(fj.size()) != f.numel())
        throw ValidationError("dataset: frame size mismatch");
      for (Eigen::Index i = 0; i < f.numel(); ++i)
        f.data[i] = fj[static_cast<std::size_t>(i)].get<double>();
      out.sequence.frames.push_back(std::move(f));
    }
    if (doc.contains("ground_truth")) {
      for (const json& oj : doc["ground_truth"].at("objects")) {
        GroundTruthObject o;
        o.glyph = oj.value("glyph", std::string("custom"));
        const json& rows = oj.at("bitmap");
        const int h = static_cast<int>(rows.size());
        const int w = static_cast<int>(rows[0].size());
        o.bitmap = Tensor::zeros(Shape{h, w});
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c)
            o.bitmap.at(r, c) =
                rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
        o.intensity = oj.value("intensity", 1.0);
        o.drow = oj.at("step")[0].get<int>();
        o.dcol = oj.at("step")[1].get<int>();
        for (const json& p : oj.at("positions"))
          o.positions.emplace_back(p[0].get<int>(), p[1].get<int>());
        out.ground_truth.push_back(std::move(o));
      }
    }
    out.sequence.validate();
    return out;
  } catch (const json::exception& e) {
    throw ValidationError("dataset " + path.string() + ": " + e.what());
  }
}

}  // namespace liedecomp
