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

#pragma once

// Report emission: CSV tables with a header row and static SVG plots, each
// plot accompanied by a CSV of the plotted values.

#include <filesystem>
#include <string>
#include <vector>

namespace stream_adapt {

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::string to_string() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Reads a file written by CsvTable::write (no quoting support needed).
CsvTable read_csv(const std::filesystem::path& path);

// Fixed six-decimal formatting used for every rate in the reports.
std::string fixed6(double x);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool lines = true;  // false draws markers only (scatter)
  std::vector<PlotSeries> series;
  std::vector<std::string> notes;  // free text under the title
};

std::string render_svg(const Plot& plot);
// Writes `<stem>.svg` and `<stem>.csv` (series,x,y). Series without points
// are skipped; returns the number of series drawn.
int write_plot(const Plot& plot, const std::filesystem::path& stem);

}  // namespace stream_adapt
