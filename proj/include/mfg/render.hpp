// SVG output: simulation frames (particles colored by actuator group,
// colliders, ground) and simple line plots for metric curves.
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "mfg/mpm.hpp"
#include "mfg/tasks.hpp"

namespace mfg {

namespace renderdet {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline const char* actuator_color(int id) {
  static const char* palette[] = {"#e6553a", "#3a7de6", "#3ae67c", "#e6c43a",
                                  "#a23ae6", "#3adfe6", "#e63aa5", "#97b32f"};
  if (id < 0) return "#8a8a8a";
  return palette[id % 8];
}

}  // namespace renderdet

// One simulation frame mapped to a square SVG canvas (unit workspace).
inline std::string render_frame_svg(const std::vector<Vec2>& frame, const SimScene& scene,
                                    double ground_y, int canvas = 640) {
  using renderdet::fmt;
  const double s = canvas;
  auto sx = [&](double x) { return x * s; };
  auto sy = [&](double y) { return (1.0 - y) * s; };  // flip so +y is up
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(canvas) +
         "\" height=\"" + std::to_string(canvas) + "\" viewBox=\"0 0 " +
         std::to_string(canvas) + " " + std::to_string(canvas) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg += "<line x1=\"0\" y1=\"" + fmt(sy(ground_y)) + "\" x2=\"" + fmt(s) + "\" y2=\"" +
         fmt(sy(ground_y)) + "\" stroke=\"#404040\" stroke-width=\"2\"/>\n";
  for (const ColliderBox& box : scene.colliders) {
    svg += "<rect x=\"" + fmt(sx(box.lo.x)) + "\" y=\"" + fmt(sy(box.hi.y)) + "\" width=\"" +
           fmt(sx(box.hi.x - box.lo.x)) + "\" height=\"" + fmt((box.hi.y - box.lo.y) * s) +
           "\" fill=\"#c9c9c9\" stroke=\"#404040\"/>\n";
  }
  const double r = std::max(1.2, 0.0009 * s);
  for (int p = 0; p < scene.size(); ++p) {
    const char* color = scene.glued[p] ? "#303030"
                        : scene.is_object[p] ? "#7a5230"
                                             : renderdet::actuator_color(scene.actuator[p]);
    svg += "<circle cx=\"" + fmt(sx(frame[p].x)) + "\" cy=\"" + fmt(sy(frame[p].y)) +
           "\" r=\"" + fmt(r) + "\" fill=\"" + color + "\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#3a7de6";
};

// Minimal line plot with axes and per-series polylines.
inline std::string render_line_plot_svg(const std::vector<PlotSeries>& series,
                                        const std::string& x_label,
                                        const std::string& y_label, int width = 720,
                                        int height = 480) {
  using renderdet::fmt;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_min = x_max = s.x[i];
        y_min = y_max = s.y[i];
        first = false;
      }
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, s.y[i]);
      y_max = std::max(y_max, s.y[i]);
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;
  const double ml = 70, mr = 20, mt = 20, mb = 50;
  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * (width - ml - mr); };
  auto py = [&](double y) {
    return height - mb - (y - y_min) / (y_max - y_min) * (height - mt - mb);
  };
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(py(y_min)) + "\" x2=\"" + fmt(ml) +
         "\" y2=\"" + fmt(py(y_max)) + "\" stroke=\"#000\"/>\n";
  svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(py(y_min)) + "\" x2=\"" +
         fmt(px(x_max)) + "\" y2=\"" + fmt(py(y_min)) + "\" stroke=\"#000\"/>\n";
  svg += "<text x=\"" + fmt((ml + width - mr) / 2) + "\" y=\"" + fmt(height - 12.0) +
         "\" font-size=\"14\" text-anchor=\"middle\">" + x_label + "</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt((mt + height - mb) / 2) +
         "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt((mt + height - mb) / 2) + ")\">" + y_label + "</text>\n";
  // Axis extremes as tick labels.
  svg += "<text x=\"" + fmt(ml) + "\" y=\"" + fmt(height - mb + 18.0) +
         "\" font-size=\"12\" text-anchor=\"middle\">" + fmt(x_min) + "</text>\n";
  svg += "<text x=\"" + fmt(px(x_max)) + "\" y=\"" + fmt(height - mb + 18.0) +
         "\" font-size=\"12\" text-anchor=\"middle\">" + fmt(x_max) + "</text>\n";
  svg += "<text x=\"" + fmt(ml - 8.0) + "\" y=\"" + fmt(py(y_min) + 4.0) +
         "\" font-size=\"12\" text-anchor=\"end\">" + fmt(y_min) + "</text>\n";
  svg += "<text x=\"" + fmt(ml - 8.0) + "\" y=\"" + fmt(py(y_max) + 4.0) +
         "\" font-size=\"12\" text-anchor=\"end\">" + fmt(y_max) + "</text>\n";
  for (const auto& s : series) {
    std::string pts;
    for (size_t i = 0; i < s.x.size(); ++i)
      pts += fmt(px(s.x[i])) + "," + fmt(py(s.y[i])) + " ";
    svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\" points=\"" +
           pts + "\"/>\n";
    for (size_t i = 0; i < s.x.size(); ++i)
      svg += "<circle cx=\"" + fmt(px(s.x[i])) + "\" cy=\"" + fmt(py(s.y[i])) +
             "\" r=\"3\" fill=\"" + s.color + "\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace mfg
