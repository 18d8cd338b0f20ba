// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace difftune {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

// Minimal self-contained SVG line plot (axes, ticks, legend).
void svg_line_plot(const std::string& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<PlotSeries>& series);

} // namespace difftune
