#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace boxoffice {

/// Horizontal bars, one per (label, value), drawn in the given order.
std::string svg_bar_chart(const std::string& title, std::span<const std::pair<std::string, double>> bars);

/// One row of jittered points plus a mean marker per group (coefficient
/// distributions).
std::string svg_strip_chart(const std::string& title, const std::map<std::string, std::vector<double>>& groups);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> error;  // optional half-widths
};

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const PlotSeries> series);

}  // namespace boxoffice
