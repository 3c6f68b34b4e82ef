#include "mirrams/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace mirrams {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
constexpr int kPaletteSize = 6;

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 72, kRight = 24, kTop = 48, kBottom = 56;

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// largest of 1/2/5 * 10^k giving at most `want` steps over the span
double tick_step(double span, int want) {
  if (span <= 0) return 1.0;
  const double raw = span / want;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (mag * m >= raw) return mag * m;
  }
  return mag * 10.0;
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series) {
  if (series.empty()) throw SvgError("svg: no series to plot");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw SvgError("svg: series '" + s.label + "' has mismatched x/y lengths");
    if (s.x.empty()) throw SvgError("svg: series '" + s.label + "' is empty");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw SvgError("svg: series '" + s.label + "' has a non-finite point");
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.05;
    ymax += 0.05;
  }
  const double ypad = 0.06 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"26\" font-family=\"sans-serif\" font-size=\"16\" "
      << "text-anchor=\"middle\" fill=\"#222\">" << escape(title) << "</text>\n";

  const double xstep = tick_step(xmax - xmin, 8);
  const double ystep = tick_step(ymax - ymin, 6);
  out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">\n";
  for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-12 * xstep; t += xstep) {
    const double gx = px(t);
    out << "<line x1=\"" << num(gx) << "\" y1=\"" << kTop << "\" x2=\"" << num(gx) << "\" y2=\""
        << kTop + ph << "\" stroke=\"#e0e0e0\"/>\n";
    out << "<text x=\"" << num(gx) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
        << num(t) << "</text>\n";
  }
  for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-12 * ystep; t += ystep) {
    const double gy = py(t);
    out << "<line x1=\"" << kLeft << "\" y1=\"" << num(gy) << "\" x2=\"" << kLeft + pw << "\" y2=\""
        << num(gy) << "\" stroke=\"#e0e0e0\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(gy + 4) << "\" text-anchor=\"end\">" << num(t)
        << "</text>\n";
  }
  out << "</g>\n";

  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#555\"/>\n";
  out << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12
      << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" fill=\"#222\">"
      << escape(xlabel) << "</text>\n";
  out << "<text x=\"18\" y=\"" << kTop + ph / 2
      << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" fill=\"#222\" "
      << "transform=\"rotate(-90 18 " << kTop + ph / 2 << ")\">" << escape(ylabel) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % kPaletteSize];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) out << " ";
      out << num(px(s.x[i])) << "," << num(py(s.y[i]));
    }
    out << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
  }

  const double lx = kLeft + pw - 170, ly = kTop + 10;
  out << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect x=\"" << lx - 8 << "\" y=\"" << ly - 14 << "\" width=\"178\" height=\""
      << 20 * series.size() + 8 << "\" fill=\"white\" fill-opacity=\"0.85\" stroke=\"#bbb\"/>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double ry = ly + 20 * static_cast<double>(si);
    out << "<line x1=\"" << lx << "\" y1=\"" << ry - 4 << "\" x2=\"" << lx + 22 << "\" y2=\"" << ry - 4
        << "\" stroke=\"" << kPalette[si % kPaletteSize] << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << lx + 28 << "\" y=\"" << ry << "\" fill=\"#222\">" << escape(series[si].label)
        << "</text>\n";
  }
  out << "</g>\n</svg>\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw SvgError("svg: cannot write '" + path + "'");
  f << out.str();
  if (!f) throw SvgError("svg: write to '" + path + "' failed");
}

}  // namespace mirrams
