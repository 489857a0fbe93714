#include "ctxtune/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "ctxtune/errors.hpp"

namespace ctxtune {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double parse_num(const std::string& field, long line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw parse_error("metrics csv: bad numeric field '" + field + "'", line);
  }
}

long line_of_byte(const std::string& text, std::size_t byte) {
  long line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace

std::vector<PlotSeries> series_from_metrics_csv(std::istream& in) {
  std::string line;
  long line_no = 0;
  bool saw_header = false;
  std::map<long, PlotSeries> by_member;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!saw_header) {
      if (fields.size() < 3 || fields[0] != "step" || fields[1] != "member" ||
          fields[2] != "return")
        throw parse_error("metrics csv: header must start with step,member,return", line_no);
      saw_header = true;
      continue;
    }
    if (fields.size() < 3) throw parse_error("metrics csv: too few fields", line_no);
    const auto step = static_cast<long>(parse_num(fields[0], line_no));
    const auto member = static_cast<long>(parse_num(fields[1], line_no));
    const double ret = parse_num(fields[2], line_no);
    auto& series = by_member[member];
    if (series.label.empty()) series.label = "member " + std::to_string(member);
    series.x.push_back(static_cast<double>(step));
    series.y.push_back(ret);
  }
  if (!saw_header) throw parse_error("metrics csv: missing header", 1);
  std::vector<PlotSeries> out;
  out.reserve(by_member.size());
  for (auto& [member, series] : by_member) out.push_back(std::move(series));
  return out;
}

std::vector<PlotSeries> series_from_report_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(std::string("report json: ") + e.what(), line_of_byte(text, e.byte));
  }
  std::vector<PlotSeries> out;
  const auto& curves = j.at("curves");
  const auto seeds = j.value("seeds", std::vector<std::uint64_t>{});
  for (std::size_t i = 0; i < curves.size(); ++i) {
    PlotSeries s;
    s.label = i < seeds.size() ? "seed " + std::to_string(seeds[i]) : "curve " + std::to_string(i);
    for (const auto& point : curves[i]) {
      s.x.push_back(point.at("step").get<double>());
      s.y.push_back(point.at("return").get<double>());
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_learning_curve_svg(std::ostream& out, const std::vector<PlotSeries>& series,
                              bool band, const std::string& x_label,
                              const std::string& y_label) {
  const double width = 800, height = 500;
  const double ml = 75, mr = 25, mt = 25, mb = 55;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!(xmin < xmax)) {
    xmin = 0;
    xmax = 1;
  }
  if (!(ymin < ymax)) {
    ymin = ymin == ymax ? ymin - 1 : 0;
    ymax = ymin + 2 > ymax ? ymin + 2 : 1;
  }
  const double xpad = 0.02 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double v) { return mt + ph - (v - ymin) / (ymax - ymin) * ph; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  // Axes and ticks.
  out << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt + ph) << "\" x2=\"" << num(ml + pw)
      << "\" y2=\"" << num(mt + ph) << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt) << "\" x2=\"" << num(ml) << "\" y2=\""
      << num(mt + ph) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 5.0;
    const double fy = ymin + (ymax - ymin) * i / 5.0;
    out << "<line x1=\"" << num(sx(fx)) << "\" y1=\"" << num(mt + ph) << "\" x2=\"" << num(sx(fx))
        << "\" y2=\"" << num(mt + ph + 5) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << num(sx(fx)) << "\" y=\"" << num(mt + ph + 20)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << tick_label(fx) << "</text>\n";
    out << "<line x1=\"" << num(ml - 5) << "\" y1=\"" << num(sy(fy)) << "\" x2=\"" << num(ml)
        << "\" y2=\"" << num(sy(fy)) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << num(ml - 8) << "\" y=\"" << num(sy(fy) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << tick_label(fy) << "</text>\n";
  }
  out << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(height - 12)
      << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << num(mt + ph / 2)
      << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << num(mt + ph / 2)
      << ")\">" << y_label << "</text>\n";

  // Mean +- standard error band over the x grid all series share.
  if (band && series.size() > 1 && !series.front().x.empty()) {
    std::vector<double> grid;
    for (double x : series.front().x) {
      bool everywhere = true;
      for (const auto& s : series)
        if (std::find(s.x.begin(), s.x.end(), x) == s.x.end()) everywhere = false;
      if (everywhere) grid.push_back(x);
    }
    if (!grid.empty()) {
      std::vector<double> mean(grid.size()), se(grid.size());
      for (std::size_t g = 0; g < grid.size(); ++g) {
        double sum = 0.0;
        std::vector<double> vals;
        for (const auto& s : series) {
          const auto it = std::find(s.x.begin(), s.x.end(), grid[g]);
          const double v = s.y[static_cast<std::size_t>(it - s.x.begin())];
          vals.push_back(v);
          sum += v;
        }
        mean[g] = sum / static_cast<double>(vals.size());
        double sq = 0.0;
        for (double v : vals) sq += (v - mean[g]) * (v - mean[g]);
        se[g] = std::sqrt(sq / static_cast<double>(vals.size() - 1)) /
                std::sqrt(static_cast<double>(vals.size()));
      }
      out << "<polygon class=\"band\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t g = 0; g < grid.size(); ++g)
        out << num(sx(grid[g])) << ',' << num(sy(mean[g] + se[g])) << ' ';
      for (std::size_t g = grid.size(); g-- > 0;)
        out << num(sx(grid[g])) << ',' << num(sy(mean[g] - se[g])) << ' ';
      out << "\"/>\n";
      out << "<polyline class=\"mean\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2.5\" points=\"";
      for (std::size_t g = 0; g < grid.size(); ++g)
        out << num(sx(grid[g])) << ',' << num(sy(mean[g])) << ' ';
      out << "\"/>\n";
    }
  }

  int color = 0;
  for (const auto& s : series) {
    if (s.x.empty()) continue;
    out << "<polyline class=\"curve\" fill=\"none\" stroke=\"" << kPalette[color % 10]
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << num(sx(s.x[i])) << ',' << num(sy(s.y[i])) << ' ';
    out << "\"/>\n";
    ++color;
  }
  out << "</svg>\n";
}

void emit_plot(const std::string& input_path, const std::string& output_path, bool band) {
  std::ifstream in(input_path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + input_path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::vector<PlotSeries> series;
  std::string x_label = "env steps", y_label = "return";
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    series = series_from_report_json(text);
  } else {
    std::stringstream csv(text);
    series = series_from_metrics_csv(csv);
  }

  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + output_path + "' for writing");
  write_learning_curve_svg(out, series, band, x_label, y_label);
  if (!out) throw io_error("write failed for '" + output_path + "'");
}

}  // namespace ctxtune
