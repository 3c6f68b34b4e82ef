#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mirrams {

class SvgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Series {
  std::string label;
  std::vector<double> x, y;
};

// Standalone SVG line chart, deterministic bytes for identical inputs.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series);

}  // namespace mirrams
