#include "robustkd/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "robustkd/errors.hpp"

namespace rkd {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 40, kTop = 50, kBottom = 60;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
        "font-family=\"sans-serif\">" << escape(title) << "</text>\n";
}

void axes(std::ostringstream& os, const std::string& x_label, const std::string& y_label,
          double xmin, double xmax, double ymin, double ymax) {
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
     << kWidth - kRight << "\" y2=\"" << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fy = kHeight - kBottom - t / 4.0 * (kHeight - kTop - kBottom);
    const double vy = ymin + t / 4.0 * (ymax - ymin);
    os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << fmt(fy) << "\" x2=\"" << kLeft
       << "\" y2=\"" << fmt(fy) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << fmt(fy + 4)
       << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(vy)
       << "</text>\n";
    const double fx = kLeft + t / 4.0 * (kWidth - kLeft - kRight);
    const double vx = xmin + t / 4.0 * (xmax - xmin);
    os << "<text x=\"" << fmt(fx) << "\" y=\"" << kHeight - kBottom + 18
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(vx)
       << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 16
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">"
     << escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << (kTop + kHeight - kBottom) / 2
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
        "transform=\"rotate(-90 18 " << (kTop + kHeight - kBottom) / 2 << ")\">"
     << escape(y_label) << "</text>\n";
}

}  // namespace

std::string render_line_chart(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<PlotSeries>& series) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
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
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin = std::max(0.0, ymin - ypad);
  ymax += ypad;

  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kWidth - kLeft - kRight); };
  auto py = [&](double y) {
    return kHeight - kBottom - (y - ymin) / (ymax - ymin) * (kHeight - kTop - kBottom);
  };

  std::ostringstream os;
  header(os, title);
  axes(os, x_label, y_label, xmin, xmax, ymin, ymax);
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % 10];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[s].points) os << fmt(px(x)) << "," << fmt(py(y)) << " ";
    os << "\"/>\n";
    for (const auto& [x, y] : series[s].points)
      os << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"2.5\" fill=\""
         << color << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(s);
    os << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << fmt(ly - 8)
       << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 136 << "\" y=\"" << fmt(ly + 1)
       << "\" font-size=\"11\" font-family=\"sans-serif\">" << escape(series[s].name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_bar_chart(const std::string& title, const std::string& y_label,
                             const std::vector<std::pair<std::string, double>>& bars) {
  double ymax = 0.0;
  for (const auto& [_, v] : bars) ymax = std::max(ymax, v);
  if (ymax <= 0.0) ymax = 1.0;
  ymax *= 1.05;

  std::ostringstream os;
  header(os, title);
  axes(os, "", y_label, 0, static_cast<double>(bars.size()), 0, ymax);
  const double span = kWidth - kLeft - kRight;
  const double slot = span / std::max<size_t>(1, bars.size());
  for (size_t i = 0; i < bars.size(); ++i) {
    const double h = bars[i].second / ymax * (kHeight - kTop - kBottom);
    const double x = kLeft + slot * static_cast<double>(i) + 0.15 * slot;
    os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(kHeight - kBottom - h) << "\" width=\""
       << fmt(0.7 * slot) << "\" height=\"" << fmt(h) << "\" fill=\"" << kPalette[i % 10]
       << "\"/>\n";
    os << "<text x=\"" << fmt(x + 0.35 * slot) << "\" y=\"" << kHeight - kBottom + 30
       << "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">"
       << escape(bars[i].first) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << content;
}

}  // namespace rkd
