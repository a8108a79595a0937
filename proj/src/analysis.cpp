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

#include "stream_adapt/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stream_adapt/error.hpp"

namespace stream_adapt {

namespace fs = std::filesystem;

namespace {

std::string num(double x) { return fmt::format("{:.17g}", x); }
std::string pct(double x) { return fmt::format("{:g}", x); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

GroupMetrics& operator+=(GroupMetrics& a, const GroupMetrics& b) {
  a.frames += b.frames;
  a.errors += b.errors;
  return a;
}

// Prefix means of the given rows: row n-1 of the result is the mean of the
// first n rows.
Matrix prefix_means(const Matrix& rows) {
  Matrix out(rows.rows(), rows.cols());
  RowVector acc = RowVector::Zero(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    acc += rows.row(i);
    out.row(i) = acc / static_cast<double>(i + 1);
  }
  return out;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

int sweep_subset_size(double percentage, int n) {
  if (!(percentage > 0.0 && percentage <= 100.0))
    throw ConfigError(fmt::format("sweep percentage {} outside (0, 100]", percentage));
  if (n < 1) throw ConfigError("sweep needs at least one utterance per speaker");
  return std::max(1, static_cast<int>(std::lround(percentage / 100.0 * n)));
}

std::vector<int> homogeneity_points(int n) {
  if (n < 1) throw ConfigError("homogeneity needs at least one utterance per speaker");
  std::vector<int> p{1};
  for (int k = 1; k <= 100; ++k) p.push_back(std::max(1, (k * n + 99) / 100));
  return p;
}

std::vector<std::string> probe_speakers(const CorpusData& data, int count) {
  const auto& sp = data.corpus.speakers;
  if (count < 3 || count > static_cast<int>(sp.size()))
    throw ConfigError(fmt::format("probe speaker count {} outside [3, {}]", count, sp.size()));
  std::vector<std::string> held, rest;
  for (std::size_t i = sp.size() - static_cast<std::size_t>(count); i < sp.size(); ++i)
    (sp[i].held_out ? held : rest).push_back(sp[i].speaker_id);
  held.insert(held.end(), rest.begin(), rest.end());
  return held;
}

std::vector<Matrix> whitened_projection(const std::vector<Matrix>& per_speaker) {
  if (per_speaker.empty()) return {};
  Eigen::Index rows = 0;
  for (const auto& m : per_speaker) rows += m.rows();
  Matrix all(rows, per_speaker.front().cols());
  rows = 0;
  for (const auto& m : per_speaker) {
    all.middleRows(rows, m.rows()) = m;
    rows += m.rows();
  }
  if (all.cols() < 2) throw DimensionError("homogeneity projection needs at least two columns");
  const PcaProjection pca = PcaProjection::fit(all, 2);
  // Variances at rounding level relative to the data scale count as zero.
  const double scale = std::max(1.0, all.squaredNorm() / static_cast<double>(all.size()));
  Vector inv(2);
  for (int j = 0; j < 2; ++j) {
    const double e = pca.eigenvalues()(j);
    inv(j) = e > 1e-20 * scale ? 1.0 / std::sqrt(e) : 0.0;
  }
  std::vector<Matrix> out;
  for (const auto& m : per_speaker) out.push_back(pca.project(m) * inv.asDiagonal());
  return out;
}

double covariance_determinant_2d(const Matrix& p) {
  if (p.cols() != 2) throw DimensionError("expected two-column points");
  if (p.rows() == 0) return 0.0;
  if (((p.rowwise() - p.row(0)).array() == 0.0).all()) return 0.0;
  const RowVector mean = p.colwise().mean();
  const Matrix c = p.rowwise() - mean;
  const Matrix cov = c.transpose() * c / static_cast<double>(p.rows());
  return std::max(0.0, cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0));
}

// ---------------------------------------------------------------------------
// Sweep

void run_sweep(SeedRun& run, const fs::path& dir) {
  const auto& cfg = run.config();
  const auto& data = run.experiment().data();
  const auto& percentages = cfg.sweep_percentages;
  const std::vector<std::string> systems{"lhuc", "sbe", "vrsbe"};
  LhucConfig lc = cfg.lhuc;
  lc.train.seed = stage_seed(run.seed(), "sweep");
  const Matrix& sbe = run.utterance_embeddings(run.sbe_model());
  const Matrix& vr = run.utterance_embeddings(run.vrsbe_model());
  const AcousticModel& sat = run.sat_model();
  const AcousticModel& am_sbe = run.am_model(AmKind::kSbe);
  const AcousticModel& am_vr = run.am_model(AmKind::kVrSbe);

  std::map<std::pair<std::size_t, std::string>, GroupMetrics> pooled;
  std::map<std::size_t, int> adapt_utts;
  for (const auto& s : data.heldout_speakers) {
    const auto utts = data.utts_of(s);
    const int n = static_cast<int>(utts.size());
    const auto si_items = run.am_items(utts, AmKind::kSi);
    for (std::size_t pi = 0; pi < percentages.size(); ++pi) {
      const int m = sweep_subset_size(percentages[pi], n);
      adapt_utts[pi] += m;
      const std::vector<std::size_t> subset(utts.begin(), utts.begin() + m);
      auto score = [&](const std::string& sys, const AcousticModel& am,
                       std::vector<AmItem> items, const Matrix* v) {
        std::vector<DecodeOutput> outs;
        for (const auto& it : items) outs.push_back(decode_frames(am, it, v));
        pooled[{pi, sys}] += evaluate(outs, cfg.corpus.groups).overall;
      };

      const std::vector<AmItem> sub(si_items.begin(), si_items.begin() + m);
      const Matrix v = multipass_adapt(sat, sub, lc).transform.v.transpose();
      auto lhuc_items = si_items;
      for (auto& it : lhuc_items) it.transform = 0;
      score("lhuc", sat, lhuc_items, &v);

      SpeakerAverageTable table;
      table.set(s, select_rows(sbe, subset).colwise().mean().transpose());
      score("sbe", am_sbe, run.am_items(utts, AmKind::kSbe, &table), nullptr);

      const Vector vr_mean = select_rows(vr, subset).colwise().mean().transpose();
      auto vr_items = run.am_items(utts, AmKind::kSi);
      for (auto& it : vr_items) it.aux = vr_mean.transpose().replicate(it.data->frames(), 1);
      score("vrsbe", am_vr, vr_items, nullptr);
    }
  }

  CsvTable table({"percentage", "system", "adaptation_utterances", "frames", "errors",
                  "error_rate", "accuracy"});
  CsvTable spread({"system", "min_accuracy", "max_accuracy", "spread"});
  Plot plot{"Accuracy vs adaptation data", "adaptation data (%)", "frame accuracy", true, true,
            {}, {}};
  for (const auto& sys : systems) {
    PlotSeries series{sys, {}, {}};
    double lo = 1.0, hi = 0.0;
    for (std::size_t pi = 0; pi < percentages.size(); ++pi) {
      const GroupMetrics& g = pooled.at({pi, sys});
      const double acc = 1.0 - g.rate();
      lo = std::min(lo, acc);
      hi = std::max(hi, acc);
      table.add_row({pct(percentages[pi]), sys, std::to_string(adapt_utts[pi]),
                     std::to_string(g.frames), std::to_string(g.errors), fixed6(g.rate()),
                     fixed6(acc)});
      series.x.push_back(percentages[pi]);
      series.y.push_back(acc);
    }
    spread.add_row({sys, fixed6(lo), fixed6(hi), fixed6(hi - lo)});
    plot.series.push_back(std::move(series));
  }
  table.write(dir / "sweep.csv");
  spread.write(dir / "sweep_spread.csv");
  write_plot(plot, dir / "sweep_plot");
}

// ---------------------------------------------------------------------------
// Homogeneity

void run_homogeneity(SeedRun& run, const fs::path& dir) {
  const auto& cfg = run.config();
  const auto& data = run.experiment().data();
  const auto probes = probe_speakers(data, cfg.probe_speakers);
  const Matrix& sbe = run.utterance_embeddings(run.sbe_model());
  const Matrix& vr = run.utterance_embeddings(run.vrsbe_model());
  const int channels = cfg.corpus.frame_spec.n_mels;
  LhucConfig lc = cfg.lhuc;
  lc.train.seed = stage_seed(run.seed(), "homogeneity");

  std::vector<std::string> kinds{"sbe", "vrsbe", "fbank", "flhuc"};
  if (cfg.homogeneity_lhuc) kinds.push_back("lhuc");

  // kind -> per probe speaker: 101 x width feature points
  std::map<std::string, std::vector<Matrix>> points;
  std::vector<std::vector<int>> sizes;
  for (const auto& s : probes) {
    const auto utts = data.utts_of(s);
    const auto pts = homogeneity_points(static_cast<int>(utts.size()));
    sizes.push_back(pts);
    auto take = [&](const Matrix& prefix) {
      Matrix m(static_cast<Eigen::Index>(pts.size()), prefix.cols());
      for (std::size_t k = 0; k < pts.size(); ++k)
        m.row(static_cast<Eigen::Index>(k)) = prefix.row(pts[k] - 1);
      return m;
    };
    points["sbe"].push_back(take(prefix_means(select_rows(sbe, utts))));
    points["vrsbe"].push_back(take(prefix_means(select_rows(vr, utts))));

    Matrix fb(static_cast<Eigen::Index>(utts.size()), channels);
    RowVector acc = RowVector::Zero(channels);
    long frames = 0;
    for (std::size_t k = 0; k < utts.size(); ++k) {
      const Matrix& f = data.frames[utts[k]].features;
      acc += f.leftCols(channels).colwise().sum();
      frames += f.rows();
      fb.row(static_cast<Eigen::Index>(k)) = acc / static_cast<double>(frames);
    }
    points["fbank"].push_back(take(fb));

    std::vector<Matrix> storage;
    const auto items = run.regression_items(utts, storage);
    FlhucPredictor predictor(run.regression_model(), s);
    Matrix fl;
    for (std::size_t k = 0; k < items.size(); ++k) {
      const LhucTransform t = predictor.push(items[k]);
      if (k == 0) fl.resize(static_cast<Eigen::Index>(items.size()), t.width());
      fl.row(static_cast<Eigen::Index>(k)) = t.v.transpose();
    }
    points["flhuc"].push_back(take(fl));

    if (cfg.homogeneity_lhuc) {
      const auto am_items = run.am_items(utts, AmKind::kSi);
      Matrix lh(static_cast<Eigen::Index>(utts.size()), run.sat_model().lhuc_width());
      std::vector<bool> done(utts.size(), false);
      for (int n : pts) {
        if (done[n - 1]) continue;
        const std::vector<AmItem> sub(am_items.begin(), am_items.begin() + n);
        lh.row(n - 1) = estimate_lhuc(run.sat_model(), sub, lc).v.transpose();
        done[n - 1] = true;
      }
      points["lhuc"].push_back(take(lh));
    }
  }

  CsvTable dets({"kind", "speaker", "held_out", "determinant"});
  CsvTable pts_csv({"kind", "speaker", "point", "utterances", "pc1", "pc2"});
  std::map<std::string, std::vector<double>> det_of;
  for (const auto& kind : kinds) {
    const auto proj = whitened_projection(points.at(kind));
    Plot plot{"Speaker homogeneity: " + kind, "pc1", "pc2", false, false, {}, {}};
    plot.notes.push_back("shared whitened 2-D PCA over 101 data quantity points per speaker");
    for (std::size_t s = 0; s < probes.size(); ++s) {
      const double det = covariance_determinant_2d(proj[s]);
      det_of[kind].push_back(det);
      const bool held = data.corpus.speaker(probes[s]).held_out;
      dets.add_row({kind, probes[s], held ? "1" : "0", num(det)});
      PlotSeries series{probes[s], {}, {}};
      for (Eigen::Index k = 0; k < proj[s].rows(); ++k) {
        pts_csv.add_row({kind, probes[s], std::to_string(k),
                         std::to_string(sizes[s][static_cast<std::size_t>(k)]),
                         num(proj[s](k, 0)), num(proj[s](k, 1))});
        series.x.push_back(proj[s](k, 0));
        series.y.push_back(proj[s](k, 1));
      }
      plot.series.push_back(std::move(series));
    }
    write_plot(plot, dir / ("homogeneity_" + kind));
  }

  CsvTable summary({"kind", "speakers", "median_determinant", "lower_than_sbe"});
  for (const auto& kind : kinds) {
    int lower = 0;
    for (std::size_t s = 0; s < probes.size(); ++s)
      lower += det_of[kind][s] < det_of["sbe"][s] ? 1 : 0;
    summary.add_row({kind, std::to_string(probes.size()), num(median(det_of[kind])),
                     std::to_string(lower)});
  }
  dets.write(dir / "homogeneity.csv");
  pts_csv.write(dir / "homogeneity_points.csv");
  summary.write(dir / "homogeneity_summary.csv");
}

// ---------------------------------------------------------------------------
// Real-time factor

const std::map<std::string, std::vector<std::string>>& wall_clock_columns() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"rtf.csv", {"compute_median_s", "rtf_compute", "rtf", "ticks", "resolution_ok"}},
      {"rtf_repetitions.csv", {"compute_s"}},
      {"rtf_ratio.csv", {"value"}},
      {"rtf_decode.csv", {"compute_s", "rtf"}},
      {"rtf_plot.csv", {"y"}},
  };
  return m;
}

void bench_rtf(SeedRun& run, const fs::path& dir) {
  using clock = std::chrono::steady_clock;
  const auto& cfg = run.config();
  const auto& data = run.experiment().data();
  const SbeModel& model = run.vrsbe_model();
  const FrameSpec& fspec = cfg.corpus.frame_spec;
  const double audio = data.corpus.total_seconds();
  const double tick = static_cast<double>(clock::period::num) / clock::period::den;
  fs::create_directories(dir);

  CsvTable table({"window", "features", "audio_s", "wait_s", "compute_median_s", "rtf_compute",
                  "rtf", "ticks", "resolution_ok"});
  CsvTable reps({"window", "repetition", "compute_s"});
  std::map<std::string, std::pair<double, double>> rtf_of;  // label -> (rtf, compute-only)
  Plot plot{"Real-time factor of streaming feature extraction", "window (ms)", "RTF", true, true,
            {}, {}};
  plot.notes.push_back("reference RTF: x-vector (utt) 1.01, VR-SBE (10-20 ms) 0.03");
  PlotSeries total{"rtf", {}, {}}, compute_only{"rtf_compute", {}, {}};
  double mean_ms = 1000.0 * audio / static_cast<double>(data.mels.size());

  volatile double sink = 0.0;
  for (const auto& w : cfg.rtf_windows) {
    const std::string label = w.label();
    long features = 0;
    std::vector<double> times;
    for (int r = 0; r < cfg.rtf_repetitions; ++r) {
      features = 0;
      double acc = 0.0;
      const auto t0 = clock::now();
      for (const auto& mel : data.mels) {
        StreamingBasisExtractor ex(w, cfg.d, fspec);
        for (int t = 0; t < mel.frames(); ++t)
          if (auto f = ex.push(mel.values.col(t))) {
            acc += model.embed_one(f->values)(0);
            ++features;
          }
        if (auto f = ex.finish()) {
          acc += model.embed_one(f->values)(0);
          ++features;
        }
      }
      times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
      sink = sink + acc;
      reps.add_row({label, std::to_string(r + 1), num(times.back())});
    }
    double wait = 0.0;
    for (std::size_t i = 0; i < data.mels.size(); ++i) {
      const double secs = data.audio_seconds(i);
      wait += w.is_whole_utterance() ? secs : std::min(*w.width_ms / 1000.0, secs);
    }
    const double compute = median(times);
    const double ticks = compute / tick;
    const double rtf = (wait + compute) / audio;
    rtf_of[label] = {rtf, compute / audio};
    table.add_row({label, std::to_string(features), num(audio), num(wait), num(compute),
                   num(compute / audio), num(rtf), fmt::format("{:.0f}", ticks),
                   ticks >= 3.0 ? "1" : "0"});
    if (ticks < 3.0) spdlog::warn("window {}: timer resolution too coarse ({:.0f} ticks)", label, ticks);
    const double x = w.is_whole_utterance() ? mean_ms : *w.width_ms;
    total.x.push_back(x);
    total.y.push_back(rtf);
    compute_only.x.push_back(x);
    compute_only.y.push_back(compute / audio);
  }

  CsvTable ratio({"measure", "value"});
  if (rtf_of.count("utt") && rtf_of.count("10")) {
    ratio.add_row({"rtf_utt_over_10ms", num(rtf_of["utt"].first / rtf_of["10"].first)});
    ratio.add_row(
        {"rtf_compute_utt_over_10ms", num(rtf_of["utt"].second / rtf_of["10"].second)});
  }

  // Acoustic model decoding, timed separately from feature extraction.
  std::vector<std::size_t> all(data.frames.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto items = run.am_items(all, AmKind::kSi);
  const AcousticModel& am = run.am_model(AmKind::kSi);
  std::vector<double> decode_times;
  for (int r = 0; r < cfg.rtf_repetitions; ++r) {
    double acc = 0.0;
    const auto t0 = clock::now();
    for (const auto& it : items) acc += am.log_posteriors(it)(0, 0);
    decode_times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    sink = sink + acc;
  }
  CsvTable decode({"model", "audio_s", "compute_s", "rtf"});
  const double dt = median(decode_times);
  decode.add_row({"am-si", num(audio), num(dt), num(dt / audio)});

  plot.series = {total, compute_only};
  table.write(dir / "rtf.csv");
  reps.write(dir / "rtf_repetitions.csv");
  ratio.write(dir / "rtf_ratio.csv");
  decode.write(dir / "rtf_decode.csv");
  write_plot(plot, dir / "rtf_plot");
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<std::string> default_ablation_values(const std::string& axis) {
  if (axis == "d") return {"1", "2", "3", "4", "5", "10", "20", "40"};
  if (axis == "window") return {"utt", "250", "150", "100", "50", "30", "20", "10"};
  if (axis == "alpha") return {"0", "0.1", "0.3", "0.5", "0.7", "0.8", "0.9", "1"};
  if (axis == "target_dim") return {"2", "5", "15", "20", "25", "29"};
  if (axis == "reg_inputs") return {"fbk", "vrsbe", "both"};
  throw ConfigError("unknown ablation axis '" + axis + "' (d, window, alpha, target_dim, reg_inputs)");
}

CsvTable ablate(const ExperimentConfig& base, const fs::path& out, const std::string& axis,
                const std::vector<std::string>& values) {
  default_ablation_values(axis);  // validates the axis
  static const std::map<std::string, std::string> keys{
      {"d", "experiment.d"},
      {"window", "experiment.window"},
      {"alpha", "regression.alpha"},
      {"target_dim", "regression.target_dim"},
      {"reg_inputs", "regression.inputs"}};
  const int max_k = base.corpus.speakers - base.corpus.held_out_speakers - 1;

  // Validate every setting before running any stage.
  std::vector<std::pair<std::string, ExperimentConfig>> settings;
  for (const auto& v : values) {
    if (axis == "target_dim") {
      int k = 0;
      try {
        k = std::stoi(v);
      } catch (const std::exception&) {
        throw ConfigError("target_dim value '" + v + "' is not an integer");
      }
      if (k > max_k) {
        spdlog::warn("target_dim {} exceeds {} training speakers minus one; skipped", k,
                     max_k + 1);
        continue;
      }
    }
    ExperimentConfig cfg = base;
    set_config_value(cfg, keys.at(axis), v);
    cfg.validate();
    settings.emplace_back(v, std::move(cfg));
  }

  CsvTable table({"axis", "value", "seed", "system", "group", "frames", "errors", "error_rate"});
  for (const auto& [value, cfg] : settings) {
    std::string system = "flhuc";
    if (axis == "d") system = "vrsbe";
    if (axis == "window")
      system = cfg.window.is_whole_utterance() ? "vrsbe" : "vrsbe-" + cfg.window.label();
    Experiment exp(cfg, out);
    for (auto seed : cfg.seeds) {
      const SystemOutputs s = exp.seed(seed).decode_system(system);
      auto add = [&](const std::string& group, const GroupMetrics& g) {
        table.add_row({axis, value, std::to_string(seed), system, group,
                       std::to_string(g.frames), std::to_string(g.errors), fixed6(g.rate())});
      };
      add("all", s.metrics.overall);
      for (std::size_t g = 0; g < s.metrics.groups.size(); ++g)
        if (s.metrics.groups[g].frames > 0) add(std::to_string(g), s.metrics.groups[g]);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Summary

void write_summary(const fs::path& reports, const std::vector<std::uint64_t>& seeds) {
  CsvTable acc({"seed", "system", "accuracy"});
  CsvTable sweep({"seed", "system", "spread"});
  CsvTable homo({"seed", "kind", "speakers", "lower_than_sbe"});
  auto col = [](const CsvTable& t, const std::string& name) {
    const auto& h = t.header();
    const auto it = std::find(h.begin(), h.end(), name);
    if (it == h.end()) throw FormatError("report column '" + name + "' missing");
    return static_cast<std::size_t>(it - h.begin());
  };
  for (auto seed : seeds) {
    const fs::path dir = reports / fmt::format("seed-{}", seed);
    const std::string s = std::to_string(seed);
    const CsvTable sys = read_csv(dir / "systems.csv");
    for (const auto& r : sys.rows())
      if (r[col(sys, "group")] == "all") acc.add_row({s, r[col(sys, "system")], r[col(sys, "accuracy")]});
    const CsvTable sp = read_csv(dir / "sweep_spread.csv");
    for (const auto& r : sp.rows()) sweep.add_row({s, r[col(sp, "system")], r[col(sp, "spread")]});
    const CsvTable hs = read_csv(dir / "homogeneity_summary.csv");
    for (const auto& r : hs.rows())
      homo.add_row({s, r[col(hs, "kind")], r[col(hs, "speakers")], r[col(hs, "lower_than_sbe")]});
  }
  acc.write(reports / "summary.csv");
  sweep.write(reports / "summary_sweep.csv");
  homo.write(reports / "summary_homogeneity.csv");
}

}  // namespace stream_adapt
