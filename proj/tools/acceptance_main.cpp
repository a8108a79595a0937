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

// stream-adapt-acceptance: end-to-end acceptance run. Executes the numerical
// oracle suite in process, runs the full pipeline through the stream-adapt
// command for every seed, checks the directional results from the reports
// and compares a fresh rerun of the first seed byte for byte. Prints one
// PASS/FAIL line per criterion; exits 0 only if all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stream_adapt/acoustic_model.hpp"
#include "stream_adapt/analysis.hpp"
#include "stream_adapt/embedding.hpp"
#include "stream_adapt/error.hpp"
#include "stream_adapt/experiment.hpp"
#include "stream_adapt/flhuc.hpp"
#include "stream_adapt/nn/gradcheck.hpp"
#include "stream_adapt/pipeline.hpp"
#include "stream_adapt/report.hpp"
#include "stream_adapt/spectral_basis.hpp"

namespace fs = std::filesystem;
using namespace stream_adapt;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Criterion 1: numerical oracles

double svd_reconstruction_error(const Matrix& o) {
  const auto dec = svd_decompose(o);
  return (dec.reconstruct() - o).norm() / o.norm();
}

double truncation_identity_error(const Matrix& o) {
  const auto dec = svd_decompose(o);
  const int r = dec.rank_bound();
  double worst = 0.0;
  for (int k = 1; k < r; ++k) {
    const Matrix ok = dec.left_vectors.leftCols(k) *
                      dec.singular_values.head(k).asDiagonal() * dec.right_vectors.topRows(k);
    const double lhs = (o - ok).squaredNorm();
    const double rhs = dec.singular_values.tail(r - k).squaredNorm();
    worst = std::max(worst, std::abs(lhs - rhs) / o.squaredNorm());
  }
  return worst;
}

double pca_tail_error(const Matrix& x) {
  double worst = 0.0;
  const double total = (x.rowwise() - x.colwise().mean()).squaredNorm() / x.rows();
  for (int k = 1; k < x.cols(); ++k) {
    const auto pca = PcaProjection::fit(x, k);
    const double residual = (pca.reconstruct(pca.project(x)) - x).squaredNorm() / x.rows();
    const double tail = pca.eigenvalues().tail(pca.eigenvalues().size() - k).sum();
    worst = std::max(worst, std::abs(residual - tail) / total);
  }
  return worst;
}

// Streamed online averaging vs the closed form
// sum_u alpha^(n-u) s_u / sum_u alpha^(n-u) T_u.
double online_average_error(double alpha, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, 9);
  OnlineAverageState state;
  state.alpha = alpha;
  std::vector<Vector> sums;
  std::vector<double> counts;
  double worst = 0.0;
  for (int u = 0; u < 8; ++u) {
    const Matrix rows = nn::random_matrix(len(rng), 4, seed * 100 + u);
    sums.push_back(rows.colwise().sum().transpose());
    counts.push_back(static_cast<double>(rows.rows()));
    const Vector streamed = state.update(rows);
    Vector num = Vector::Zero(4);
    double den = 0.0;
    const int n = static_cast<int>(sums.size());
    for (int k = 0; k < n; ++k) {
      const double w = std::pow(alpha, n - 1 - k);
      num += w * sums[k];
      den += w * counts[k];
    }
    const Vector closed = num / den;
    worst = std::max(worst, (streamed - closed).cwiseAbs().maxCoeff() /
                                std::max(1.0, closed.cwiseAbs().maxCoeff()));
  }
  return worst;
}

double gradient_checks() {
  using namespace nn;
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };

  {  // acoustic model topology with LHUC per row owner
    AmConfig ac;
    ac.classes = 3;
    ac.input_dim = 4;
    ac.aux_dim = 2;
    ac.blocks = 3;
    ac.hidden = 6;
    ac.bottleneck = 3;
    ac.context = {-1, 0, 1};
    Network net(am_network_spec(ac, 11));
    AcousticModel am(net, ac.aux_dim);
    Matrix v = random_matrix(2, am.lhuc_width(), 12, 0.5);
    Matrix dv = Matrix::Zero(2, am.lhuc_width());
    LhucBinding binding{&v, {0, 0, 1, 1, -1, 0, 1}, &dv};
    CheckContext cc;
    cc.segments = {{0, 4}, {4, 3}};
    cc.lhuc = &binding;
    Probe probe;
    probe.heads[net.spec().heads.front().name] = random_matrix(7, 3, 13);
    track(gradient_check(net, random_matrix(7, 6, 14), probe, cc, &v, &dv));
  }
  {  // embedding network: skip connection, bottleneck tap, two heads
    EmbeddingConfig ec;
    ec.hidden = 6;
    Network net(embedding_network_spec(5, ec, 3, 4, 15));
    Probe probe;
    for (const auto& h : net.spec().heads)
      probe.heads[h.name] = random_matrix(6, h.layers.front().out, 16 + probe.heads.size());
    probe.taps[kBottleneckTap] = random_matrix(6, kEmbeddingDim, 19);
    track(gradient_check(net, random_matrix(6, 5, 20), probe, {}));
  }
  {  // regression network with online averaging and carried history
    RegressionConfig rc;
    rc.splice_width = 6;
    rc.bottleneck = 3;
    rc.feedforward = 5;
    Network net(regression_network_spec(4, 2, rc, 21));
    CheckContext cc;
    cc.history.resize(1);
    cc.segments = {{0, 3, 0}, {3, 3, 0}};
    Probe probe;
    probe.taps[net.spec().blocks.back().name] = random_matrix(6, net.output_dim(), 22);
    track(gradient_check(net, random_matrix(6, 4, 23), probe, cc));
  }
  {  // variance-regularized embedding objective
    const Matrix b = random_matrix(5, 3, 24);
    const Matrix t = random_matrix(5, 3, 25);
    Matrix g = random_matrix(5, 2, 26), s = random_matrix(5, 4, 27);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      g.row(i) = g.row(i).array() - std::log(g.row(i).array().exp().sum());
      s.row(i) = s.row(i).array() - std::log(s.row(i).array().exp().sum());
    }
    const std::vector<int> gl{0, 1, 1, 0, 1}, sl{3, 0, 2, 1, 0};
    const LossWeights w{0.5, 0.3, 0.2};
    Matrix db, dg, ds;
    vr_sbe_loss(b, t, &g, gl, &s, sl, w, &db, &dg, &ds);
    auto check = [&](Matrix m, const Matrix& analytic, int which) {
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        auto loss_at = [&](double delta) {
          Matrix mm = m;
          mm.data()[i] += delta;
          const Matrix& bb = which == 0 ? mm : b;
          const Matrix& gg = which == 1 ? mm : g;
          const Matrix& ss = which == 2 ? mm : s;
          return vr_sbe_loss(bb, t, &gg, gl, &ss, sl, w, nullptr, nullptr, nullptr).total;
        };
        const double numeric = (loss_at(h) - loss_at(-h)) / (2 * h);
        track(std::abs(analytic.data()[i] - numeric) / std::max(1e-8, std::abs(numeric)));
      }
    };
    check(b, db, 0);
    check(g, dg, 1);
    check(s, ds, 2);
  }
  return worst;
}

Verdict criterion_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  double svd = 0.0, ey = 0.0;
  std::mt19937_64 rng(1);
  for (int cols : {1, 3, 17, 40, 120}) {
    Matrix o = nn::random_matrix(40, cols, 100 + cols);
    o = (o.array() - 4.0).matrix();  // log-mel-like offset
    svd = std::max(svd, svd_reconstruction_error(o));
    ey = std::max(ey, truncation_identity_error(o));
  }
  Matrix x = nn::random_matrix(200, 12, 7);
  for (int j = 0; j < x.cols(); ++j) x.col(j) *= 1.0 / (1.0 + j);
  const double pca = pca_tail_error(x);
  double avg = 0.0;
  for (double a : {0.0, 0.1, 0.5, 0.9, 1.0}) avg = std::max(avg, online_average_error(a, 3));
  const double grad = gradient_checks();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Verdict v;
  v.pass = svd <= 1e-8 && ey <= 1e-8 && pca <= 1e-8 && avg <= 1e-10 && grad <= 1e-4 &&
           secs <= 120.0;
  v.detail = fmt::format(
      "svd {:.2e}, truncation {:.2e}, pca tail {:.2e}, online average {:.2e}, gradients {:.2e}, "
      "{:.1f} s",
      svd, ey, pca, avg, grad, secs);
  return v;
}

// ---------------------------------------------------------------------------
// Report helpers

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table load(const fs::path& p) {
  const CsvTable t = read_csv(p);
  return {t.header(), t.rows()};
}

// Overall accuracy per system from systems.csv.
std::map<std::string, double> accuracies(const fs::path& dir) {
  const Table t = load(dir / "systems.csv");
  std::map<std::string, double> out;
  for (const auto& r : t.rows)
    if (r[t.col("group")] == "all") {
      const double frames = std::stod(r[t.col("frames")]);
      const double errors = std::stod(r[t.col("errors")]);
      out[r[t.col("system")]] = 1.0 - errors / frames;
    }
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : "; ") + p;
  return s;
}

// Report contents with wall-clock columns blanked.
std::string deterministic_view(const fs::path& p) {
  const auto& wall = wall_clock_columns();
  const auto it = wall.find(p.filename().string());
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  if (it == wall.end()) return ss.str();
  const Table t = load(p);
  std::string out;
  std::vector<bool> drop(t.header.size(), false);
  for (const auto& c : it->second)
    if (auto pos = std::find(t.header.begin(), t.header.end(), c); pos != t.header.end())
      drop[static_cast<std::size_t>(pos - t.header.begin())] = true;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      out += (i ? "," : "") + (drop[i] ? std::string("*") : cells[i]);
    out += "\n";
  };
  emit(t.header);
  for (const auto& r : t.rows) emit(r);
  return out;
}

int run_cli(const std::string& cli, const fs::path& out, std::uint64_t seed) {
  const std::string cmd =
      fmt::format("\"{}\" --out \"{}\" --seed {} run-all", cli, out.string(), seed);
  spdlog::info("running {}", cmd);
  return std::system(cmd.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run of the streaming adaptation toolkit"};
  std::string cli;
  std::string work = "acceptance";
  bool fresh = false;
  std::vector<std::uint64_t> seeds{7, 8, 9};
  app.add_option("--cli", cli, "path of the stream-adapt executable")->required();
  app.add_option("--work", work, "working directory")->capture_default_str();
  app.add_option("--seeds", seeds, "seeds; the first one is rerun for determinism")
      ->delimiter(',');
  app.add_flag("--fresh", fresh, "discard cached artifacts from earlier runs");
  CLI11_PARSE(app, argc, argv);

  std::map<int, Verdict> v;
  auto report = [&](int id) {
    fmt::print("criterion {}: {}  {}\n", id, v[id].pass ? "PASS" : "FAIL", v[id].detail);
    std::fflush(stdout);
  };

  v[1] = criterion_oracles();
  report(1);

  const fs::path dir_a = fs::path(work) / "A";
  const fs::path dir_b = fs::path(work) / "B";
  if (fresh) fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  bool pipeline_ok = true;
  for (auto s : seeds) pipeline_ok = pipeline_ok && run_cli(cli, dir_a, s) == 0;
  pipeline_ok = pipeline_ok && run_cli(cli, dir_b, seeds.front()) == 0;
  if (!pipeline_ok) {
    for (int id = 2; id <= 9; ++id) {
      v[id] = {false, "pipeline run failed"};
      report(id);
    }
    return 1;
  }

  ExperimentConfig cfg = default_config(Profile::kDesk);
  auto reports = [&](std::uint64_t s) { return dir_a / "reports" / fmt::format("seed-{}", s); };
  const int majority = static_cast<int>(seeds.size()) / 2 + 1;

  try {  // 2: LHUC identity
    spdlog::set_level(spdlog::level::warn);
    Experiment exp(cfg, dir_a);
    SeedRun& run = exp.seed(seeds.front());
    const AcousticModel& am = run.am_model(AmKind::kSi);
    const auto& data = exp.data();
    std::vector<std::size_t> all(data.frames.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::mt19937_64 rng(seeds.front());
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(100);
    const Matrix zero = Matrix::Zero(1, am.lhuc_width());
    int identical = 0;
    for (auto& item : run.am_items(all, AmKind::kSi)) {
      const Matrix si = am.log_posteriors(item);
      item.transform = 0;
      const Matrix adapted = am.log_posteriors(item, &zero);
      identical += si.size() == adapted.size() &&
                   std::memcmp(si.data(), adapted.data(), sizeof(double) * si.size()) == 0;
    }
    v[2] = {identical == 100, fmt::format("{}/100 utterances bit-identical", identical)};
  } catch (const std::exception& e) {
    v[2] = {false, e.what()};
  }
  report(2);

  try {  // 3: homogeneity on the first seed
    const Table t = load(reports(seeds.front()) / "homogeneity_summary.csv");
    std::string lower = "?", speakers = "?";
    for (const auto& r : t.rows)
      if (r[t.col("kind")] == "vrsbe") {
        lower = r[t.col("lower_than_sbe")];
        speakers = r[t.col("speakers")];
      }
    v[3] = {lower != "?" && std::stoi(lower) >= 8,
            fmt::format("VR-SBE determinant below SBE for {}/{} probe speakers", lower, speakers)};
  } catch (const std::exception& e) {
    v[3] = {false, e.what()};
  }
  report(3);

  try {  // 4, 5, 6: accuracies
    int gain4 = 0, gain5 = 0, joint5 = 0, stream6 = 0;
    std::vector<std::string> d4, d5, d6;
    const std::string win = "vrsbe-" + cfg.window.label();
    for (auto s : seeds) {
      const auto acc = accuracies(reports(s));
      const double si = acc.at("si"), vr = acc.at("vrsbe"), fl = acc.at("flhuc");
      const double joint = acc.at("joint"), w = acc.at(win);
      gain4 += vr - si >= 0.01;
      gain5 += fl > si;
      joint5 += joint >= std::max(vr, fl);
      stream6 += std::abs(w - vr) <= 0.01;
      d4.push_back(fmt::format("seed {} si {:.4f} vrsbe {:.4f} gain {:+.4f}", s, si, vr, vr - si));
      d5.push_back(fmt::format("seed {} flhuc {:.4f} joint {:.4f} best single {:.4f}", s, fl,
                               joint, std::max(vr, fl)));
      d6.push_back(fmt::format("seed {} {} {:.4f} utt {:.4f} diff {:+.4f}", s, win, w, vr, w - vr));
    }
    v[4] = {gain4 >= majority, join(d4)};
    v[5] = {gain5 >= majority && joint5 >= std::min<int>(2, static_cast<int>(seeds.size())),
            join(d5)};
    v[6] = {stream6 == static_cast<int>(seeds.size()), join(d6)};
  } catch (const std::exception& e) {
    v[4] = v[5] = v[6] = {false, e.what()};
  }
  report(4);
  report(5);
  report(6);

  try {  // 7: latency ratio on the first seed
    const Table t = load(reports(seeds.front()) / "rtf.csv");
    std::map<std::string, std::pair<double, std::string>> rtf;
    for (const auto& r : t.rows)
      rtf[r[t.col("window")]] = {std::stod(r[t.col("rtf")]), r[t.col("resolution_ok")]};
    const double ratio = rtf.at("utt").first / rtf.at("10").first;
    const bool resolved = rtf.at("utt").second == "1" && rtf.at("10").second == "1";
    v[7] = {ratio >= 5.0 && resolved,
            fmt::format("RTF utt {:.4f} / 10 ms {:.4f} = {:.1f}x{}", rtf.at("utt").first,
                        rtf.at("10").first, ratio, resolved ? "" : " (timer too coarse)")};
  } catch (const std::exception& e) {
    v[7] = {false, e.what()};
  }
  report(7);

  try {  // 8: sweep spreads
    int flatter = 0;
    std::vector<std::string> d;
    for (auto s : seeds) {
      const Table t = load(reports(s) / "sweep_spread.csv");
      std::map<std::string, double> spread;
      for (const auto& r : t.rows) spread[r[t.col("system")]] = std::stod(r[t.col("spread")]);
      flatter += spread.at("vrsbe") < spread.at("lhuc");
      d.push_back(fmt::format("seed {} vrsbe {:.4f} lhuc {:.4f}", s, spread.at("vrsbe"),
                              spread.at("lhuc")));
    }
    v[8] = {flatter >= majority, join(d)};
  } catch (const std::exception& e) {
    v[8] = {false, e.what()};
  }
  report(8);

  try {  // 9: determinism of a fresh rerun
    const fs::path ra = reports(seeds.front());
    const fs::path rb = dir_b / "reports" / fmt::format("seed-{}", seeds.front());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(ra))
      if (e.path().extension() == ".csv") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    std::vector<std::string> differ;
    for (const auto& n : names)
      if (!fs::exists(rb / n) || deterministic_view(ra / n) != deterministic_view(rb / n))
        differ.push_back(n);
    for (const auto& e : fs::directory_iterator(rb))
      if (e.path().extension() == ".csv" && !fs::exists(ra / e.path().filename()))
        differ.push_back(e.path().filename().string());
    v[9] = {!names.empty() && differ.empty(),
            differ.empty() ? fmt::format("{} CSV reports identical", names.size())
                           : "differ: " + join(differ)};
  } catch (const std::exception& e) {
    v[9] = {false, e.what()};
  }
  report(9);

  int passed = 0;
  for (const auto& [id, verdict] : v) passed += verdict.pass;
  fmt::print("{}/{} criteria passed\n", passed, v.size());
  return passed == static_cast<int>(v.size()) ? 0 : 1;
}
