#pragma once

// Minimal SVG output for line charts and labeled heatmaps.

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psyinn/autodiff.hpp"

namespace psyinn::svg {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

std::string escape(std::string_view s);

void line_plot(std::ostream& out, const std::string& title, const std::string& x_label, const std::string& y_label,
               std::span<const Series> series);

// Cell color runs blue (negative) through white (0) to red (positive),
// scaled by the largest |value|.
void heatmap(std::ostream& out, const std::string& title, const std::vector<std::string>& row_names,
             const std::vector<std::string>& col_names, const ad::Tensor& values);

}  // namespace psyinn::svg
