#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctxtune {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

// Learning-curve SVG: one polyline per series, optionally a mean line with a
// +-standard-error band across series (computed at x values every series
// shares). Pure transform; identical input gives identical bytes.
void write_learning_curve_svg(std::ostream& out, const std::vector<PlotSeries>& series,
                              bool band, const std::string& x_label,
                              const std::string& y_label);

// metrics.csv -> one series per member. Throws parse_error with the
// offending line number on malformed input.
std::vector<PlotSeries> series_from_metrics_csv(std::istream& in);

// Replay report JSON -> one series per seed.
std::vector<PlotSeries> series_from_report_json(const std::string& text);

// Dispatches on the input content (JSON object vs CSV) and writes the SVG.
void emit_plot(const std::string& input_path, const std::string& output_path, bool band);

}  // namespace ctxtune
