#include "liedecomp/render.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "liedecomp/scene.hpp"

using nlohmann::json;

namespace liedecomp {

void write_pgm_strip(const std::filesystem::path& path, const std::vector<Tensor>& frames,
                     bool threshold) {
  if (frames.empty()) throw ValidationError("write_pgm_strip: no frames");
  const int H = frames[0].shape.dim(0);
  const int W = frames[0].shape.dim(1);
  for (const Tensor& f : frames)
    if (f.shape != frames[0].shape)
      throw ValidationError("write_pgm_strip: frames differ in shape");

  const int n = static_cast<int>(frames.size());
  const int width = n * W + (n - 1);
  std::string bytes(static_cast<std::size_t>(H) * width, '\0');
  const unsigned char separator = 128;

  for (int r = 0; r < H; ++r) {
    int col = 0;
    for (int fi = 0; fi < n; ++fi) {
      if (fi > 0) bytes[static_cast<std::size_t>(r) * width + col++] = static_cast<char>(separator);
      for (int c = 0; c < W; ++c) {
        double v = frames[static_cast<std::size_t>(fi)].at(r, c);
        if (threshold) v = v >= 0.5 ? 1.0 : 0.0;
        v = std::clamp(v, 0.0, 1.0);
        bytes[static_cast<std::size_t>(r) * width + col++] =
            static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
    }
  }

  std::ostringstream out;
  out << "P5\n" << width << " " << H << "\n255\n" << bytes;
  atomic_write_text(path, out.str());
}

std::vector<FieldSample> sample_field(const FlowParams& params, int grid_density) {
  if (grid_density < 2) throw ValidationError("sample_field: grid_density must be >= 2");
  std::vector<FieldSample> out;
  out.reserve(static_cast<std::size_t>(grid_density) * grid_density);
  for (int iy = 0; iy < grid_density; ++iy) {
    const double y = 2.0 * iy / (grid_density - 1) - 1.0;
    for (int ix = 0; ix < grid_density; ++ix) {
      const double x = 2.0 * ix / (grid_density - 1) - 1.0;
      const Eigen::Vector2d v = params.A * Eigen::Vector2d(x, y) + params.b;
      out.push_back(FieldSample{x, y, v(0), v(1)});
    }
  }
  return out;
}

void write_field_json(const std::filesystem::path& path,
                      const std::vector<FieldSample>& samples) {
  json arr = json::array();
  for (const FieldSample& s : samples)
    arr.push_back({{"x", s.x}, {"y", s.y}, {"vx", s.vx}, {"vy", s.vy}});
  atomic_write_text(path, arr.dump() + "\n");
}

void write_field_svg(const std::filesystem::path& path,
                     const std::vector<FieldSample>& samples) {
  const double size = 400.0, margin = 20.0;
  const double inner = size - 2.0 * margin;
  const auto px = [&](double x) { return margin + (x + 1.0) / 2.0 * inner; };
  const auto py = [&](double y) { return margin + (y + 1.0) / 2.0 * inner; };

  double maxmag = 0.0;
  for (const FieldSample& s : samples)
    maxmag = std::max(maxmag, std::hypot(s.vx, s.vy));

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
      << size << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  svg << "  <rect width=\"" << size << "\" height=\"" << size
      << "\" fill=\"white\" stroke=\"#888\"/>\n";

  if (maxmag > 1e-15) {
    // arrow length capped at 0.9 of a grid cell at the field maximum
    const int density = static_cast<int>(std::lround(std::sqrt(static_cast<double>(samples.size()))));
    const double cell = inner / std::max(1, density - 1);
    const double scale = 0.9 * cell / maxmag;
    char buf[256];
    for (const FieldSample& s : samples) {
      const double mag = std::hypot(s.vx, s.vy);
      if (mag < 1e-15) continue;
      const double x0 = px(s.x), y0 = py(s.y);
      const double x1 = x0 + s.vx * scale, y1 = y0 + s.vy * scale;
      // head: two short strokes at 150 degrees off the shaft
      const double ang = std::atan2(y1 - y0, x1 - x0);
      const double hl = std::min(6.0, 0.3 * mag * scale);
      const double a1 = ang + 2.617993877991494, a2 = ang - 2.617993877991494;
      std::snprintf(buf, sizeof(buf),
                    "  <path d=\"M %.2f %.2f L %.2f %.2f M %.2f %.2f L %.2f %.2f M %.2f %.2f "
                    "L %.2f %.2f\" stroke=\"#1f6fd0\" stroke-width=\"1.2\" fill=\"none\"/>\n",
                    x0, y0, x1, y1, x1, y1, x1 + hl * std::cos(a1), y1 + hl * std::sin(a1),
                    x1, y1, x1 + hl * std::cos(a2), y1 + hl * std::sin(a2));
      svg << buf;
    }
  }
  svg << "</svg>\n";
  atomic_write_text(path, svg.str());
}

}  // namespace liedecomp
