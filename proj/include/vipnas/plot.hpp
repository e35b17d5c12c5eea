#pragma once

#include <string>
#include <vector>

namespace vipnas::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Point {
  double x = 0.0, y = 0.0;
  bool highlight = false;
};

struct Axes {
  std::string title, x_label, y_label;
  bool log_y = false;
};

// Standalone SVG documents.
std::string lines(const std::vector<Series>& series, const Axes& axes);
std::string scatter(const std::vector<Point>& points, const Axes& axes);

// Trailing moving average, used to smooth noisy loss curves.
std::vector<double> smooth(const std::vector<double>& v, int window);

}  // namespace vipnas::plot
