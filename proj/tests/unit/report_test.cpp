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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stream_adapt/error.hpp"
#include "stream_adapt/report.hpp"

namespace sa = stream_adapt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("stream_adapt_report_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Csv, RoundTripKeepsEmptyCells) {
  const auto dir = scratch("csv");
  sa::CsvTable t({"a", "b", "c"});
  t.add_row({"1", "", "x"});
  t.add_row({"2", "y", ""});
  t.write(dir / "sub" / "t.csv");
  const auto r = sa::read_csv(dir / "sub" / "t.csv");
  EXPECT_EQ(r.header(), t.header());
  EXPECT_EQ(r.rows(), t.rows());
  EXPECT_EQ(r.to_string(), "a,b,c\n1,,x\n2,y,\n");
}

TEST(Csv, RejectsWidthMismatchAndEmptyFiles) {
  sa::CsvTable t({"a", "b"});
  EXPECT_THROW(t.add_row({"1"}), sa::DimensionError);
  EXPECT_THROW(t.add_row({"1", "2", "3"}), sa::DimensionError);
  const auto dir = scratch("empty");
  std::ofstream(dir / "e.csv").close();
  EXPECT_THROW(sa::read_csv(dir / "e.csv"), sa::FormatError);
  EXPECT_THROW(sa::read_csv(dir / "missing.csv"), sa::Error);
}

TEST(Csv, Fixed6) {
  EXPECT_EQ(sa::fixed6(0.5), "0.500000");
  EXPECT_EQ(sa::fixed6(1.0 / 3.0), "0.333333");
  EXPECT_EQ(sa::fixed6(2.0), "2.000000");
}

TEST(Plot, SvgContainsSeriesAndEscapesText) {
  sa::Plot p{"a<b & c>d", "x", "y", false, true, {{"s1", {0, 1, 2}, {1, 2, 3}}}, {"note"}};
  const std::string svg = sa::render_svg(p);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("a&lt;b &amp; c&gt;d"), std::string::npos);
  EXPECT_EQ(svg.find("a<b"), std::string::npos);
  EXPECT_NE(svg.find("s1"), std::string::npos);
  EXPECT_NE(svg.find("note"), std::string::npos);
}

TEST(Plot, WritePlotSkipsUnusableSeriesAndWritesSidecar) {
  const auto dir = scratch("plot");
  sa::Plot p{"t", "x", "y", true, false, {}, {}};
  p.series.push_back({"good", {1, 10}, {0.5, 0.25}});
  p.series.push_back({"empty", {}, {}});
  p.series.push_back({"ragged", {1, 2}, {1}});
  EXPECT_EQ(sa::write_plot(p, dir / "plot"), 1);
  ASSERT_TRUE(fs::exists(dir / "plot.svg"));
  const auto csv = sa::read_csv(dir / "plot.csv");
  EXPECT_EQ(csv.header(), (std::vector<std::string>{"series", "x", "y"}));
  ASSERT_EQ(csv.rows().size(), 2u);
  EXPECT_EQ(csv.rows()[1], (std::vector<std::string>{"good", "10", "0.25"}));
  EXPECT_FALSE(slurp(dir / "plot.svg").empty());
}

TEST(Plot, EmptyPlotStillRenders) {
  const auto dir = scratch("noplot");
  sa::Plot p{"nothing", "x", "y", false, true, {}, {}};
  EXPECT_EQ(sa::write_plot(p, dir / "p"), 0);
  EXPECT_NE(slurp(dir / "p.svg").find("</svg>"), std::string::npos);
}
