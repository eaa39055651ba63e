#pragma once

#include <string>
#include <utility>
#include <vector>

namespace rkd {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal deterministic SVG renderers for the report plot bundle.
std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<PlotSeries>& series);
std::string render_bar_chart(const std::string& title, const std::string& y_label,
                             const std::vector<std::pair<std::string, double>>& bars);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace rkd
