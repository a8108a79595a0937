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

// Cached experiment pipeline. Every stage owns a directory named after a
// CRC32 key over the stage name, the configuration it depends on and the
// manifest checksums of its inputs. A stage whose MANIFEST still matches the
// files on disk is reused; otherwise it is rebuilt in a scratch directory
// that is renamed into place once complete.
//
//   <out>/shared/corpus-<key>/         synthetic corpus
//   <out>/shared/bases-<key>/          spectral basis features per window
//   <out>/seed-<s>/<stage>-<key>/      models, transforms and evaluations
//   <out>/reports/seed-<s>/            CSV and SVG reports

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stream_adapt/acoustic_model.hpp"
#include "stream_adapt/corpus.hpp"
#include "stream_adapt/embedding.hpp"
#include "stream_adapt/experiment.hpp"
#include "stream_adapt/flhuc.hpp"
#include "stream_adapt/lhuc.hpp"
#include "stream_adapt/spectral_basis.hpp"

namespace stream_adapt {

inline constexpr const char* kManifestName = "MANIFEST";

struct StageRecord {
  std::string name;
  std::filesystem::path dir;
  std::uint32_t key = 0;
  std::uint32_t checksum = 0;  // CRC32 of the manifest text
  bool cached = false;
};

// Manifest text: one "file<TAB>bytes<TAB>crc32" line per regular file under
// `dir` (relative paths, sorted), excluding the manifest itself.
std::string manifest_text(const std::filesystem::path& dir);
// True when `dir` holds a manifest that matches its files.
bool manifest_valid(const std::filesystem::path& dir);

class StageStore {
 public:
  using Producer = std::function<void(const std::filesystem::path& dir)>;

  explicit StageStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  // `area` is the subdirectory ("shared", "seed-7"). Producer exceptions are
  // rethrown as StageError carrying the input checksum trail.
  StageRecord run(const std::string& area, const std::string& name,
                  const std::string& key_text, const std::vector<StageRecord>& inputs,
                  const Producer& produce);

  // Every stage resolved so far, in order.
  const std::vector<StageRecord>& history() const { return history_; }

 private:
  std::filesystem::path root_;
  std::vector<StageRecord> history_;
};

// Seed of one stage's training run, derived from the experiment seed.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage);

struct CorpusData {
  Corpus corpus;
  std::vector<MelSpectrogram> mels;
  std::vector<FrameData> frames;              // parallel to corpus.utterances
  std::vector<std::string> train_speakers;    // held-in, corpus order
  std::vector<std::string> heldout_speakers;  // corpus order
  std::vector<std::size_t> train_utts;        // held-in training split
  std::vector<std::size_t> heldout_utts;      // every utterance of held-out speakers

  std::vector<std::size_t> utts_of(const std::string& speaker) const;
  double audio_seconds(std::size_t utt) const;
};

// Spectral basis features of every utterance for one window setting.
struct BasisSet {
  SlidingWindowSpec window;
  int d = 0;
  int hop_frames = 0;              // 0 for whole utterances
  std::vector<Matrix> features;    // per utterance: n_features x d*C
};

enum class AmKind { kSi, kSbe, kVrSbe, kVrSbeWindow };
const char* am_kind_name(AmKind k);

// Evaluation systems, in report order. The windowed system is named after
// the window, e.g. "vrsbe-10".
std::vector<std::string> system_names(const ExperimentConfig& cfg);

class SeedRun;

class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::filesystem::path out);
  ~Experiment();
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return out_; }
  StageStore& store() { return store_; }

  const StageRecord& corpus_stage();
  const CorpusData& data();
  const StageRecord& bases_stage(const SlidingWindowSpec& window);
  const BasisSet& bases(const SlidingWindowSpec& window);

  SeedRun& seed(std::uint64_t s);

 private:
  ExperimentConfig cfg_;
  std::filesystem::path out_;
  StageStore store_;
  std::optional<StageRecord> corpus_stage_;
  std::unique_ptr<CorpusData> data_;
  std::map<std::string, StageRecord> bases_stages_;
  std::map<std::string, BasisSet> bases_;
  std::map<std::uint64_t, std::unique_ptr<SeedRun>> seeds_;
};

struct SystemOutputs {
  std::string system;
  std::vector<DecodeOutput> outputs;  // one per held-out utterance
  Metrics metrics;
};

class SeedRun {
 public:
  SeedRun(Experiment& exp, std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  const ExperimentConfig& config() const { return exp_.config(); }
  Experiment& experiment() { return exp_; }
  std::string area() const;
  std::filesystem::path report_dir() const;

  const StageRecord& sbe();
  const SbeModel& sbe_model();
  const SpeakerAverageTable& sbe_table();
  const StageRecord& vrsbe();
  const SbeModel& vrsbe_model();
  // Equals the utterance-level model when the configured window is "utt".
  const StageRecord& vrsbe_window();
  const SbeModel& vrsbe_window_model();

  const StageRecord& am(AmKind kind);
  const AcousticModel& am_model(AmKind kind);

  const StageRecord& lhuc_sat();
  const AcousticModel& sat_model();
  const std::vector<LhucTransform>& sat_transforms();

  const StageRecord& regression();
  const RegressionModel& regression_model();
  const StageRecord& flhuc_am();
  const AcousticModel& flhuc_model();

  // Batch adaptation of the held-out speakers: speaker-average SBE and
  // multipass LHUC on the SAT model, both over all of a speaker's data.
  const StageRecord& adapt();
  // Streamed f-LHUC prediction for every held-out utterance.
  const StageRecord& adapt_flhuc();
  const StageRecord& evaluate();
  const StageRecord& sweep();
  const StageRecord& homogeneity();

  // Decodes the held-out utterances with one system, uncached.
  SystemOutputs decode_system(const std::string& system);

  // Per-utterance embeddings (one row per utterance) of a model over the
  // whole-utterance basis features.
  const Matrix& utterance_embeddings(const SbeModel& model);
  // Per-frame auxiliary features of utterance `utt`.
  Matrix utterance_aux(const SbeModel& model, std::size_t utt);
  Matrix window_aux(const SbeModel& model, std::size_t utt);

  // Acoustic model inputs of the given utterances. SBE items take their
  // speaker vector from `sbe`, or from the training table when null.
  std::vector<AmItem> am_items(const std::vector<std::size_t>& utts, AmKind kind,
                               const SpeakerAverageTable* sbe = nullptr);
  // Regression inputs; `storage` keeps the per-frame speaker features alive.
  std::vector<RegressionItem> regression_items(const std::vector<std::size_t>& utts,
                                               std::vector<Matrix>& storage);

  // Copies the evaluation, sweep and homogeneity reports into report_dir().
  void publish();

 private:
  std::string key(const std::string& sections) const;
  Matrix heldout_flhuc_transforms();
  std::map<std::string, LhucTransform> heldout_lhuc_transforms();

  Experiment& exp_;
  std::uint64_t seed_;
  std::map<std::string, StageRecord> stages_;
  std::optional<SbeModel> sbe_model_, vrsbe_model_, vrsbe_window_model_;
  std::optional<SpeakerAverageTable> sbe_table_;
  std::map<AmKind, AcousticModel> ams_;
  std::optional<AcousticModel> sat_model_, flhuc_model_;
  std::vector<LhucTransform> sat_transforms_;
  std::optional<RegressionModel> regression_model_;
  std::map<const SbeModel*, Matrix> utterance_embeddings_;
};

}  // namespace stream_adapt
