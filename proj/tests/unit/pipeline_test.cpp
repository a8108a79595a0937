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
#include <set>

#include "stream_adapt/analysis.hpp"
#include "stream_adapt/error.hpp"
#include "stream_adapt/pipeline.hpp"
#include "stream_adapt/report.hpp"

namespace sa = stream_adapt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("stream_adapt_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

const char* kTinyConfig = R"([corpus]
speakers = 6
held_out_speakers = 2
utts_per_speaker = 4
[experiment]
d = 2
window = 50
seeds = 1,2
[am]
blocks = 3
hidden = 16
bottleneck = 8
epochs = 1
[embedding]
hidden = 16
epochs = 1
window_epochs = 1
[lhuc]
epochs = 1
passes = 1
[regression]
splice_width = 8
bottleneck = 4
feedforward = 8
target_dim = 3
epochs = 1
[finetune]
epochs = 1
[analysis]
sweep_percentages = 50,100
probe_speakers = 3
)";

std::map<std::string, bool> cached_by_name(const std::vector<sa::StageRecord>& h) {
  std::map<std::string, bool> m;
  for (const auto& r : h) m[r.dir.parent_path().filename().string() + "/" + r.name] = r.cached;
  return m;
}

}  // namespace

TEST(StageStore, BuildsOnceThenCaches) {
  const auto root = scratch("store");
  sa::StageStore store(root);
  int calls = 0;
  auto produce = [&](const fs::path& d) {
    ++calls;
    write(d / "a.txt", "alpha");
  };
  const auto a = store.run("shared", "a", "k=1", {}, produce);
  EXPECT_FALSE(a.cached);
  EXPECT_TRUE(sa::manifest_valid(a.dir));
  const auto again = store.run("shared", "a", "k=1", {}, produce);
  EXPECT_TRUE(again.cached);
  EXPECT_EQ(again.checksum, a.checksum);
  EXPECT_EQ(calls, 1);
  // A different key is a different stage directory.
  const auto other = store.run("shared", "a", "k=2", {}, produce);
  EXPECT_NE(other.dir, a.dir);
  EXPECT_EQ(calls, 2);
}

TEST(StageStore, RebuildsTamperedStageAndKeepsIdenticalDownstream) {
  const auto root = scratch("tamper");
  int up_calls = 0, down_calls = 0;
  auto up = [&](const fs::path& d) {
    ++up_calls;
    write(d / "u.txt", "upstream");
  };
  auto down = [&](const fs::path& d) {
    ++down_calls;
    write(d / "d.txt", "downstream");
  };
  {
    sa::StageStore s(root);
    const auto u = s.run("shared", "up", "", {}, up);
    s.run("shared", "down", "", {u}, down);
  }
  fs::remove(sa::StageStore(root).run("shared", "up", "", {}, up).dir / "u.txt");
  sa::StageStore s(root);
  const auto u = s.run("shared", "up", "", {}, up);
  EXPECT_FALSE(u.cached);
  const auto d = s.run("shared", "down", "", {u}, down);
  EXPECT_TRUE(d.cached);
  EXPECT_EQ(up_calls, 2);
  EXPECT_EQ(down_calls, 1);
}

TEST(StageStore, ChangedUpstreamBytesInvalidateDownstream) {
  const auto root = scratch("upstream");
  std::string payload = "v1";
  int down_calls = 0;
  auto up = [&](const fs::path& d) { write(d / "u.txt", payload); };
  auto down = [&](const fs::path& d) {
    ++down_calls;
    write(d / "d.txt", "x");
  };
  sa::StageStore s(root);
  const auto u1 = s.run("shared", "up", "v1", {}, up);
  s.run("shared", "down", "", {u1}, down);
  payload = "v2";
  const auto u2 = s.run("shared", "up", "v2", {}, up);
  EXPECT_NE(u1.checksum, u2.checksum);
  const auto d2 = s.run("shared", "down", "", {u2}, down);
  EXPECT_FALSE(d2.cached);
  EXPECT_EQ(down_calls, 2);
}

TEST(StageStore, ProducerFailureBecomesStageError) {
  const auto root = scratch("fail");
  sa::StageStore s(root);
  const auto u = s.run("shared", "up", "", {}, [](const fs::path& d) { write(d / "u", "1"); });
  try {
    s.run("seed-1", "broken", "", {u}, [](const fs::path&) { throw std::runtime_error("boom"); });
    FAIL() << "expected StageError";
  } catch (const sa::StageError& e) {
    EXPECT_EQ(e.stage(), "broken");
    EXPECT_NE(e.trail().find("up"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
  // Nothing half-built is left behind as a valid stage.
  for (const auto& e : fs::directory_iterator(root / "seed-1"))
    EXPECT_FALSE(sa::manifest_valid(e.path())) << e.path();
  EXPECT_THROW(s.run("seed-1", "cfg", "", {}, [](const fs::path&) { throw sa::ConfigError("bad"); }),
               sa::ConfigError);
}

TEST(StageSeed, DistinctPerStageAndSeed) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s : {1, 2, 3})
    for (const char* st : {"am", "sbe", "vrsbe", "lhuc-sat"}) seen.insert(sa::stage_seed(s, st));
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_EQ(sa::stage_seed(4, "am"), sa::stage_seed(4, "am"));
}

TEST(Pipeline, InvalidConfigIsRejected) {
  auto cfg = sa::parse_config(kTinyConfig, sa::Profile::kDesk);
  cfg.target_dim = 9;
  EXPECT_THROW(sa::Experiment(cfg, scratch("invalid")), sa::ConfigError);
}

TEST(Pipeline, TinyEndToEndIsCachedAndSeedsAreDisjoint) {
  const auto out = scratch("e2e");
  const auto cfg = sa::parse_config(kTinyConfig, sa::Profile::kDesk);
  fs::path sbe_dir;
  {
    sa::Experiment exp(cfg, out);
    for (auto seed : cfg.seeds) {
      auto& r = exp.seed(seed);
      const auto& ev = r.evaluate();
      EXPECT_TRUE(fs::exists(ev.dir / "systems.csv"));
      const auto systems = sa::read_csv(ev.dir / "systems.csv");
      EXPECT_GE(systems.rows().size(), sa::system_names(cfg).size());
    }
    for (const auto& rec : exp.store().history()) EXPECT_FALSE(rec.cached) << rec.name;
    sbe_dir = exp.seed(1).sbe().dir;
  }
  EXPECT_TRUE(fs::exists(out / "seed-1"));
  EXPECT_TRUE(fs::exists(out / "seed-2"));
  int corpus_dirs = 0;
  for (const auto& e : fs::directory_iterator(out / "shared"))
    corpus_dirs += e.path().filename().string().rfind("corpus-", 0) == 0;
  EXPECT_EQ(corpus_dirs, 1);

  {
    sa::Experiment exp(cfg, out);
    for (auto seed : cfg.seeds) exp.seed(seed).evaluate();
    for (const auto& rec : exp.store().history()) EXPECT_TRUE(rec.cached) << rec.name;
  }

  // Deleting one artifact rebuilds only that stage; identical bytes keep the
  // downstream stages cached.
  fs::remove(sbe_dir / "table.tsv");
  {
    sa::Experiment exp(cfg, out);
    exp.seed(1).evaluate();
    const auto cached = cached_by_name(exp.store().history());
    for (const auto& [name, c] : cached) EXPECT_EQ(c, name != "seed-1/sbe") << name;
    EXPECT_FALSE(cached.at("seed-1/sbe"));
  }
}

TEST(Pipeline, TinyAnalysesAreDeterministic) {
  auto cfg = sa::parse_config(kTinyConfig, sa::Profile::kDesk);
  cfg.seeds = {3};
  std::map<std::string, std::string> first;
  for (const char* name : {"det-a", "det-b"}) {
    const auto out = scratch(name);
    sa::Experiment exp(cfg, out);
    auto& r = exp.seed(3);
    r.evaluate();
    r.sweep();
    r.homogeneity();
    r.publish();
    sa::bench_rtf(r, r.report_dir());
    sa::write_summary(out / "reports", cfg.seeds);
    for (const char* f : {"systems.csv", "sweep.csv", "sweep_spread.csv", "homogeneity.csv",
                          "homogeneity_summary.csv", "rtf.csv", "stages.csv"}) {
      ASSERT_TRUE(fs::exists(r.report_dir() / f)) << f;
    }
    ASSERT_TRUE(fs::exists(out / "reports" / "summary.csv"));
    for (const char* f : {"systems.csv", "sweep.csv", "homogeneity.csv"}) {
      const std::string text = sa::read_csv(r.report_dir() / f).to_string();
      if (first.count(f)) EXPECT_EQ(first[f], text) << f;
      first[f] = text;
    }
  }
}
