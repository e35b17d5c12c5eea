#include "vipnas/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace vipnas::plot {

namespace {

constexpr double kW = 640, kH = 400, kL = 70, kR = 20, kT = 40, kB = 50;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

struct Frame {
  double x0, x1, y0, y1;
  bool log_y;

  double fy(double y) const { return log_y ? std::log10(std::max(y, 1e-12)) : y; }
  double px(double x) const { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); }
  double py(double y) const { return kH - kB - (fy(y) - y0) / (y1 - y0) * (kH - kT - kB); }
};

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

Frame fit(const std::vector<double>& xs, const std::vector<double>& ys, bool log_y) {
  Frame f{0, 1, 0, 1, log_y};
  if (xs.empty()) return f;
  auto [xa, xb] = std::minmax_element(xs.begin(), xs.end());
  f.x0 = *xa;
  f.x1 = *xb;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double y : ys) {
    lo = std::min(lo, f.fy(y));
    hi = std::max(hi, f.fy(y));
  }
  f.y0 = lo;
  f.y1 = hi;
  if (f.x1 <= f.x0) f.x1 = f.x0 + 1;
  if (f.y1 <= f.y0) f.y1 = f.y0 + 1;
  const double pad = 0.05 * (f.y1 - f.y0);
  f.y0 -= pad;
  f.y1 += pad;
  return f;
}

void chrome(std::ostringstream& s, const Frame& f, const Axes& a) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(a.title) << "</text>\n"
    << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4, yv = f.y0 + (f.y1 - f.y0) * i / 4;
    const double x = f.px(xv), y = kH - kB - (kH - kT - kB) * i / 4.0;
    s << "<text x=\"" << x << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n"
      << "<text x=\"" << kL - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
      << num(f.log_y ? std::pow(10.0, yv) : yv) << "</text>\n"
      << "<line x1=\"" << kL << "\" y1=\"" << y << "\" x2=\"" << kW - kR << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
  }
  s << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << escape(a.x_label)
    << "</text>\n"
    << "<text transform=\"translate(16," << (kT + kH - kB) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(a.y_label) << "</text>\n";
}

}  // namespace

std::string lines(const std::vector<Series>& series, const Axes& axes) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const Frame f = fit(xs, ys, axes.log_y);
  std::ostringstream s;
  chrome(s, f, axes);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* col = kPalette[i % 6];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < series[i].x.size() && k < series[i].y.size(); ++k)
      s << f.px(series[i].x[k]) << "," << f.py(series[i].y[k]) << " ";
    s << "\"/>\n<text x=\"" << kW - kR - 4 << "\" y=\"" << kT + 14 * (i + 1) << "\" text-anchor=\"end\" fill=\"" << col
      << "\">" << escape(series[i].label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string scatter(const std::vector<Point>& points, const Axes& axes) {
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const Frame f = fit(xs, ys, axes.log_y);
  std::ostringstream s;
  chrome(s, f, axes);
  for (const auto& p : points)
    if (!p.highlight)
      s << "<circle cx=\"" << f.px(p.x) << "\" cy=\"" << f.py(p.y) << "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
  for (const auto& p : points)
    if (p.highlight)
      s << "<circle cx=\"" << f.px(p.x) << "\" cy=\"" << f.py(p.y) << "\" r=\"5\" fill=\"#d62728\"/>\n";
  s << "</svg>\n";
  return s.str();
}

std::vector<double> smooth(const std::vector<double>& v, int window) {
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= static_cast<std::size_t>(window)) sum -= v[i - window];
    out[i] = sum / std::min<std::size_t>(i + 1, window);
  }
  return out;
}

}  // namespace vipnas::plot
