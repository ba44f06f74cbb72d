#include "boxoffice/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace boxoffice {

namespace {

constexpr std::array<const char*, 6> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
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

std::string header(int width, int height, const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{3}</text>\n",
      width, height, width / 2, escape(title));
}

struct Range {
  double lo = 0.0, hi = 1.0;
  double map(double v, double a, double b) const { return hi == lo ? (a + b) / 2 : a + (v - lo) / (hi - lo) * (b - a); }
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (lo == hi) return {lo - 1.0, hi + 1.0};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::string svg_bar_chart(const std::string& title, std::span<const std::pair<std::string, double>> bars) {
  const int row = 22, left = 170, right = 60, top = 40;
  const int width = 640;
  const int height = top + row * static_cast<int>(bars.size()) + 30;
  double lo = 0.0, hi = 0.0;
  for (const auto& [label, v] : bars) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const Range r = hi == lo ? Range{0.0, 1.0} : Range{lo, hi};
  const double zero = r.map(0.0, left, width - right);
  std::string svg = header(width, height, title);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [label, v] = bars[i];
    const int y = top + row * static_cast<int>(i);
    const double end = r.map(v, left, width - right);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", left - 6, y + 14, escape(label));
    svg += fmt::format("<rect x=\"{:.1f}\" y=\"{}\" width=\"{:.1f}\" height=\"{}\" fill=\"{}\"/>\n", std::min(zero, end), y + 3,
                       std::abs(end - zero), row - 6, v < 0 ? kPalette[1] : kPalette[0]);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{}\">{:.3g}</text>\n", std::max(zero, end) + 4, y + 14, v);
  }
  svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"black\"/>\n", zero, top,
                     height - 30);
  return svg + "</svg>\n";
}

std::string svg_strip_chart(const std::string& title, const std::map<std::string, std::vector<double>>& groups) {
  const int row = 26, left = 190, right = 40, top = 40, width = 720;
  const int height = top + row * static_cast<int>(groups.size()) + 40;
  double lo = 0.0, hi = 0.0;
  for (const auto& [k, v] : groups) {
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  const Range r = padded(lo, hi);
  std::string svg = header(width, height, title);
  int i = 0;
  for (const auto& [label, values] : groups) {
    const int y = top + row * i + row / 2;
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{} (n={})</text>\n", left - 6, y + 4, escape(label),
                       values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
      // Deterministic jitter keeps reruns byte-identical.
      const double jitter = (static_cast<double>((k * 7919) % 17) / 16.0 - 0.5) * (row - 10);
      svg += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.4\"/>\n",
                         r.map(values[k], left, width - right), y + jitter, kPalette[0]);
    }
    if (!values.empty()) {
      const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      const double x = r.map(mean, left, width - right);
      svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"{3}\" stroke-width=\"2\"/>\n", x,
                         y - row / 2 + 3, y + row / 2 - 3, kPalette[1]);
    }
    ++i;
  }
  const double zero = r.map(0.0, left, width - right);
  svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n",
                     zero, top, height - 40);
  svg += fmt::format("<text x=\"{}\" y=\"{}\">{:.3g}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", left,
                     height - 20, r.lo, width - right, height - 20, r.hi);
  return svg + "</svg>\n";
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const PlotSeries> series) {
  const int left = 70, right = 150, top = 40, bottom = 50, width = 720, height = 420;
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      const double e = i < s.error.size() ? s.error[i] : 0.0;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i] - e);
      yhi = std::max(yhi, s.y[i] + e);
    }
  }
  const Range rx = padded(xlo, xhi), ry = padded(ylo, yhi);
  auto px = [&](double v) { return rx.map(v, left, width - right); };
  auto py = [&](double v) { return ry.map(v, height - bottom, top); };
  std::string svg = header(width, height, title);
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", left, top,
                     width - left - right, height - top - bottom);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (left + width - right) / 2, height - 12,
                     escape(x_label));
  svg += fmt::format("<text x=\"16\" y=\"{0}\" transform=\"rotate(-90 16 {0})\" text-anchor=\"middle\">{1}</text>\n",
                     (top + height - bottom) / 2, escape(y_label));
  for (double t : {0.0, 0.5, 1.0}) {
    const double xv = rx.lo + t * (rx.hi - rx.lo), yv = ry.lo + t * (ry.hi - ry.lo);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:.4g}</text>\n", px(xv), height - bottom + 16, xv);
    svg += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.4g}</text>\n", left - 4, py(yv) + 4, yv);
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* colour = kPalette[s % kPalette.size()];
    std::string points;
    for (std::size_t i = 0; i < ser.x.size() && i < ser.y.size(); ++i) {
      points += fmt::format("{:.1f},{:.1f} ", px(ser.x[i]), py(ser.y[i]));
      svg += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", px(ser.x[i]), py(ser.y[i]), colour);
      if (i < ser.error.size() && ser.error[i] > 0.0) {
        svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"{3}\"/>\n", px(ser.x[i]),
                           py(ser.y[i] - ser.error[i]), py(ser.y[i] + ser.error[i]), colour);
      }
    }
    svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", points, colour);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", width - right + 10, top + 16 * (static_cast<int>(s) + 1),
                       colour, escape(ser.name));
  }
  return svg + "</svg>\n";
}

}  // namespace boxoffice
