#pragma once

#include <string>
#include <vector>

#include "tktr/io/metrics.hpp"

namespace tktr::exp {

struct PlotSeries {
  std::string label;
  std::vector<io::MetricsRow> rows;
};

/// Line chart of test accuracy against wall time, one polyline per series,
/// with a dashed vertical rule wherever a series changes phase.
std::string render_svg(const std::vector<PlotSeries>& series);

}  // namespace tktr::exp
