#pragma once

#include <string>
#include <vector>

#include "emofeed/emotion.hpp"

namespace emofeed {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// One panel per series, stacked vertically, shared x axis.
std::string line_chart_svg(const std::string& title, const std::vector<Series>& panels);

/// Targets (hollow) and predictions (filled) on the [1, 9]^2 plane, each pair
/// joined by a segment.
std::string va_scatter_svg(const std::string& title, const std::vector<VAScore>& targets,
                           const std::vector<VAScore>& predictions);

}  // namespace emofeed
