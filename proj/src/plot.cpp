#include "emofeed/plot.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "emofeed/common.hpp"

namespace emofeed {

namespace {

constexpr double kWidth = 640.0;
constexpr double kPanelHeight = 200.0;
constexpr double kMargin = 48.0;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::pair<double, double> range_of(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 1.0};
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  double a = *lo, b = *hi;
  if (b - a < 1e-12) {
    a -= 0.5;
    b += 0.5;
  }
  return {a, b};
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::vector<Series>& panels) {
  const double height = kMargin + panels.size() * (kPanelHeight + kMargin);
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n",
      kWidth, height, kMargin, escape(title));
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Series& s = panels[p];
    require(s.x.size() == s.y.size(), "line_chart_svg: x and y differ in length");
    const double top = kMargin + p * (kPanelHeight + kMargin);
    const double left = kMargin, right = kWidth - 16.0;
    auto [x0, x1] = range_of(s.x);
    std::vector<double> finite;
    for (double y : s.y) if (std::isfinite(y)) finite.push_back(y);
    auto [y0, y1] = range_of(finite);
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (right - left); };
    auto py = [&](double y) { return top + kPanelHeight - (y - y0) / (y1 - y0) * kPanelHeight; };

    svg += fmt::format(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        left, top, right - left, kPanelHeight);
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", left + 4, top - 6, escape(s.label));
    svg += fmt::format("<text x=\"4\" y=\"{:.1f}\">{:.3g}</text>\n", top + 10, y1);
    svg += fmt::format("<text x=\"4\" y=\"{:.1f}\">{:.3g}</text>\n", top + kPanelHeight, y0);
    svg += fmt::format("<text x=\"{}\" y=\"{:.1f}\">{:.4g}</text>\n", left, top + kPanelHeight + 14, x0);
    svg += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.4g}</text>\n", right,
                       top + kPanelHeight + 14, x1);
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
    }
    svg += fmt::format(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\" points=\"{}\"/>\n", points);
  }
  svg += "</svg>\n";
  return svg;
}

std::string va_scatter_svg(const std::string& title, const std::vector<VAScore>& targets,
                           const std::vector<VAScore>& predictions) {
  require(targets.size() == predictions.size(), "va_scatter_svg: size mismatch");
  const double side = 420.0;
  const double left = kMargin, top = kMargin;
  auto px = [&](double v) { return left + (v - kScaleMin) / (kScaleMax - kScaleMin) * side; };
  auto py = [&](double a) { return top + side - (a - kScaleMin) / (kScaleMax - kScaleMin) * side; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n"
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n"
      "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">valence</text>\n"
      "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">arousal</text>\n",
      side + 2 * kMargin, side + 2 * kMargin, left, escape(title), left, top, side, side,
      left + side / 2, top + side + 30, top + side / 2, top + side / 2);
  for (int tick = 1; tick <= 9; tick += 2) {
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
                       px(tick), top + side + 14, tick);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{}</text>\n",
                       left - 4, py(tick) + 4, tick);
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    svg += fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#bbb\"/>\n",
        px(targets[i].valence()), py(targets[i].arousal()), px(predictions[i].valence()),
        py(predictions[i].arousal()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    svg += fmt::format(
        "<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"#d62728\" fill-opacity=\"0.6\"/>\n",
        px(predictions[i].valence()), py(predictions[i].arousal()));
    svg += fmt::format(
        "<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"none\" stroke=\"#1f77b4\"/>\n",
        px(targets[i].valence()), py(targets[i].arousal()));
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace emofeed
