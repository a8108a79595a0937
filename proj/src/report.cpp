// Copyright 2026 The stream-adapt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "stream_adapt/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stream_adapt/error.hpp"

namespace stream_adapt {

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != header_.size())
    throw DimensionError(fmt::format("CSV row has {} cells, header has {}", cells.size(),
                                     header_.size()));
  rows_.push_back(std::move(cells));
}

std::string CsvTable::to_string() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
    return s + "\n";
  };
  std::string out = line(header_);
  for (const auto& r : rows_) out += line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << to_string();
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + " is empty");
  CsvTable t(split(line));
  while (std::getline(is, line))
    if (!line.empty()) t.add_row(split(line));
  return t;
}

std::string fixed6(double x) { return fmt::format("{:.6f}", x); }

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 50, kBottom = 55;

const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo, hi;
  bool log;
  double map(double v, double a, double b) const {
    const double t = log ? (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo))
                         : (v - lo) / (hi - lo);
    return a + t * (b - a);
  }
};

Axis make_axis(const std::vector<const PlotSeries*>& s, bool use_x, bool log) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* p : s)
    for (double v : use_x ? p->x : p->y) {
      if (!std::isfinite(v) || (log && v <= 0)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) {
    const double pad = log ? lo * 0.5 : std::max(1e-3, std::abs(lo) * 0.05);
    lo -= pad;
    hi += pad;
  } else if (!log) {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  return {lo, hi, log};
}

}  // namespace

std::string render_svg(const Plot& plot) {
  std::vector<const PlotSeries*> drawn;
  for (const auto& s : plot.series)
    if (!s.x.empty() && s.x.size() == s.y.size()) drawn.push_back(&s);
  const Axis ax = make_axis(drawn, true, plot.log_x);
  const Axis ay = make_axis(drawn, false, false);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      kWidth, kHeight);
  svg += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth, kHeight);
  svg += fmt::format("<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                     (x0 + x1) / 2, escape(plot.title));
  for (std::size_t i = 0; i < plot.notes.size(); ++i)
    svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"#555\" text-anchor=\"middle\">{}</text>\n",
                       (x0 + x1) / 2, 34 + 12 * i, escape(plot.notes[i]));
  svg += fmt::format(
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n", x0,
      y1, x1 - x0, y0 - y1);
  for (int i = 0; i <= 4; ++i) {
    const double fy = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    const double py = ay.map(fy, y0, y1);
    svg += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"#ddd\"/>\n",
                       x0, py, x1, py);
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.4g}</text>\n", x0 - 4,
                       py + 4, fy);
    const double fx = plot.log_x ? std::pow(10.0, std::log10(ax.lo) +
                                                      (std::log10(ax.hi) - std::log10(ax.lo)) *
                                                          i / 4.0)
                                 : ax.lo + (ax.hi - ax.lo) * i / 4.0;
    const double px = ax.map(fx, x0, x1);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{:.4g}</text>\n", px,
                       y0 + 15, fx);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (x0 + x1) / 2,
                     kHeight - 15, escape(plot.x_label));
  svg += fmt::format(
      "<text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{}</text>\n",
      (y0 + y1) / 2, (y0 + y1) / 2, escape(plot.y_label));

  for (std::size_t k = 0; k < drawn.size(); ++k) {
    const auto& s = *drawn[k];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (plot.log_x && s.x[i] <= 0)) continue;
      const double px = ax.map(s.x[i], x0, x1), py = ay.map(s.y[i], y0, y1);
      pts += fmt::format("{:.2f},{:.2f} ", px, py);
      svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{}\" fill=\"{}\"/>\n", px, py,
                         plot.lines ? 2.5 : 1.8, color(k));
    }
    if (plot.lines && !pts.empty())
      svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                         pts, color(k));
    const double ly = y1 + 14 * k + 8;
    svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", x1 + 10,
                       ly - 9, color(k));
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", x1 + 24, ly, escape(s.name));
  }
  svg += "</svg>\n";
  return svg;
}

int write_plot(const Plot& plot, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  CsvTable csv({"series", "x", "y"});
  int drawn = 0;
  for (const auto& s : plot.series) {
    if (s.x.empty() || s.x.size() != s.y.size()) {
      spdlog::warn("plot '{}': series '{}' has no usable points, skipped", plot.title, s.name);
      continue;
    }
    ++drawn;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      csv.add_row({s.name, fmt::format("{:.17g}", s.x[i]), fmt::format("{:.17g}", s.y[i])});
  }
  csv.write(stem.string() + ".csv");
  std::ofstream os(stem.string() + ".svg", std::ios::binary);
  if (!os) throw Error("cannot write " + stem.string() + ".svg");
  os << render_svg(plot);
  return drawn;
}

}  // namespace stream_adapt
