#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "imagine/core/tensor.hpp"

namespace imagine {

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

/// Minimal self-contained SVG line chart (no plotting dependency).
inline void write_svg_lines(const std::string& path, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel,
                            const std::vector<PlotSeries>& series, int width = 960,
                            int height = 560) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  const double ml = 70, mr = 160, mt = 40, mb = 50;
  const double pw = width - ml - mr, ph = height - mt - mb;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  std::ofstream f(path);
  IM_CHECK(f.good(), "cannot write plot " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
    << height << "' viewBox='0 0 " << width << " " << height << "'>\n";
  f << "<rect width='100%' height='100%' fill='white'/>\n";
  f << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='16'>"
    << title << "</text>\n";
  // axes
  f << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='"
    << mt + ph << "' stroke='black'/>\n";
  f << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + ph
    << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    f << "<text x='" << px(xv) << "' y='" << mt + ph + 18
      << "' text-anchor='middle' font-size='11'>" << xv << "</text>\n";
    f << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
      << "' text-anchor='end' font-size='11'>" << yv << "</text>\n";
    f << "<line x1='" << ml << "' y1='" << py(yv) << "' x2='" << ml + pw << "' y2='"
      << py(yv) << "' stroke='#dddddd'/>\n";
  }
  f << "<text x='" << ml + pw / 2 << "' y='" << height - 10
    << "' text-anchor='middle' font-size='13'>" << xlabel << "</text>\n";
  f << "<text x='18' y='" << mt + ph / 2
    << "' text-anchor='middle' font-size='13' transform='rotate(-90 18 " << mt + ph / 2
    << ")'>" << ylabel << "</text>\n";
  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = palette[i % 8];
    f << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
    for (auto [x, y] : series[i].points) f << px(x) << "," << py(y) << " ";
    f << "'/>\n";
    const double ly = mt + 16 + 18 * static_cast<double>(i);
    f << "<line x1='" << ml + pw + 10 << "' y1='" << ly << "' x2='" << ml + pw + 34
      << "' y2='" << ly << "' stroke='" << color << "' stroke-width='2'/>\n";
    f << "<text x='" << ml + pw + 40 << "' y='" << ly + 4 << "' font-size='12'>"
      << series[i].label << "</text>\n";
  }
  f << "</svg>\n";
}

/// Binary PPM writer for frame strips.
inline void write_ppm(const std::string& path, const Tensor<float>& image) {
  IM_CHECK(image.ndim() == 3 && image.dim(2) == 3, "ppm expects (h,w,3)");
  std::ofstream f(path, std::ios::binary);
  IM_CHECK(f.good(), "cannot write image " + path);
  f << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  for (int y = 0; y < image.dim(0); ++y)
    for (int x = 0; x < image.dim(1); ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image(y, x, ch), 0.0f, 1.0f);
        f.put(static_cast<char>(std::lround(v * 255.0f)));
      }
}

}  // namespace imagine
