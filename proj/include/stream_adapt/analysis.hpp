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

// Analyses on top of the pipeline: adaptation data quantity sweep, speaker
// homogeneity of adaptation features, real-time factor of the streaming
// extraction path, one-axis ablations and the multi-seed summary.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stream_adapt/pipeline.hpp"
#include "stream_adapt/report.hpp"

namespace stream_adapt {

// Adaptation subset size for a percentage of n utterances:
// max(1, round(p/100 * n)). Rejects p outside (0, 100].
int sweep_subset_size(double percentage, int n);

// Subset sizes of the 101 homogeneity operating points: one utterance, then
// ceil(p/100 * n) for p = 1..100.
std::vector<int> homogeneity_points(int n);

// Probe speakers: the last `count` speakers of the corpus, held-out first.
std::vector<std::string> probe_speakers(const CorpusData& data, int count);

// Shared 2-D PCA of all speakers' points (rows), whitened per component.
// Components with zero variance map to zero.
std::vector<Matrix> whitened_projection(const std::vector<Matrix>& per_speaker);

// Determinant of the population covariance of 2-column points, clamped at 0.
double covariance_determinant_2d(const Matrix& points);

// Writes sweep.csv, sweep_spread.csv and the sweep plot into `dir`.
void run_sweep(SeedRun& run, const std::filesystem::path& dir);

// Writes homogeneity.csv, homogeneity_points.csv, homogeneity_summary.csv and
// one scatter plot per feature kind into `dir`.
void run_homogeneity(SeedRun& run, const std::filesystem::path& dir);

// Wall-clock columns per report file; every other column is deterministic.
const std::map<std::string, std::vector<std::string>>& wall_clock_columns();

// Times the streaming extraction path (basis extraction plus embedding
// forward) over the whole corpus for every configured window. Writes
// rtf.csv, rtf_repetitions.csv, rtf_ratio.csv, rtf_decode.csv and the RTF
// plot into `dir`.
void bench_rtf(SeedRun& run, const std::filesystem::path& dir);

inline const std::vector<std::string> kAblationAxes{"d", "window", "alpha", "target_dim",
                                                    "reg_inputs"};

// Default grid of an axis; rejects unknown axes.
std::vector<std::string> default_ablation_values(const std::string& axis);

// One pipeline per value on top of `base`, sharing the artifact store under
// `out`. Rows: axis, value, seed, system, group, frames, errors, error_rate.
// target_dim values above the training speaker count minus one are skipped.
CsvTable ablate(const ExperimentConfig& base, const std::filesystem::path& out,
                const std::string& axis, const std::vector<std::string>& values);

// summary.csv (accuracy per seed and system), summary_sweep.csv and
// summary_homogeneity.csv from the published per-seed reports.
void write_summary(const std::filesystem::path& reports, const std::vector<std::uint64_t>& seeds);

}  // namespace stream_adapt
