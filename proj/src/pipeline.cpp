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

#include "stream_adapt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stream_adapt/analysis.hpp"
#include "stream_adapt/checkpoint.hpp"
#include "stream_adapt/error.hpp"
#include "stream_adapt/feature_io.hpp"
#include "stream_adapt/report.hpp"

namespace stream_adapt {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw Error("cannot write " + p.string());
}

std::string hex8(std::uint32_t v) { return fmt::format("{:08x}", v); }

std::string trail_of(const std::vector<StageRecord>& inputs) {
  std::string t;
  for (const auto& in : inputs) {
    if (!t.empty()) t += ", ";
    t += in.name + "=" + hex8(in.checksum);
  }
  return t;
}

// "section.key = value" lines of the canonical config text whose key starts
// with one of the prefixes.
std::string config_lines(const ExperimentConfig& cfg, const std::vector<std::string>& prefixes) {
  std::istringstream is(cfg.to_text());
  std::string line, section, out;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line[0] == '[') {
      section = line.substr(1, line.find(']') - 1);
      continue;
    }
    const std::string dotted = section + "." + line;
    for (const auto& p : prefixes)
      if (dotted.compare(0, p.size(), p) == 0) {
        out += dotted + "\n";
        break;
      }
  }
  return out;
}

void write_curve(const fs::path& path, const std::vector<double>& curve) {
  CsvTable t({"epoch", "loss"});
  for (std::size_t i = 0; i < curve.size(); ++i)
    t.add_row({std::to_string(i + 1), fmt::format("{:.17g}", curve[i])});
  t.write(path);
}

Matrix broadcast(const Vector& v, int rows) { return v.transpose().replicate(rows, 1); }

EmbeddingDataset embedding_dataset(const CorpusData& data, const BasisSet& bases,
                                   const std::vector<std::size_t>& utts, int groups) {
  EmbeddingDataset ds;
  ds.groups = groups;
  ds.speaker_ids = data.train_speakers;
  std::map<std::string, int> index;
  for (std::size_t s = 0; s < ds.speaker_ids.size(); ++s)
    index[ds.speaker_ids[s]] = static_cast<int>(s);
  Eigen::Index rows = 0;
  for (auto i : utts) rows += bases.features[i].rows();
  if (rows == 0) throw Error("no basis features for embedding training");
  ds.inputs.resize(rows, bases.features[utts.front()].cols());
  Eigen::Index r = 0;
  for (auto i : utts) {
    const Matrix& f = bases.features[i];
    ds.inputs.middleRows(r, f.rows()) = f;
    r += f.rows();
    for (Eigen::Index k = 0; k < f.rows(); ++k) {
      ds.speaker.push_back(index.at(data.frames[i].speaker_id));
      ds.group.push_back(data.frames[i].group);
    }
  }
  return ds;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage store

std::string manifest_text(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == kManifestName) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files)
    out += fmt::format("{}\t{}\t{}\n", f, fs::file_size(dir / f), hex8(crc32_of_file(dir / f)));
  return out;
}

bool manifest_valid(const fs::path& dir) {
  const fs::path m = dir / kManifestName;
  if (!fs::is_regular_file(m)) return false;
  try {
    return read_file(m) == manifest_text(dir);
  } catch (const std::exception&) {
    return false;
  }
}

StageRecord StageStore::run(const std::string& area, const std::string& name,
                            const std::string& key_text, const std::vector<StageRecord>& inputs,
                            const Producer& produce) {
  std::string full = "stage " + name + "\n" + key_text;
  for (const auto& in : inputs) full += "input " + in.name + " " + hex8(in.checksum) + "\n";
  StageRecord rec;
  rec.name = name;
  rec.key = crc32_of(full);
  rec.dir = root_ / area / (name + "-" + hex8(rec.key));

  if (manifest_valid(rec.dir)) {
    rec.cached = true;
    rec.checksum = crc32_of(read_file(rec.dir / kManifestName));
    spdlog::info("[{}] {} cached", area, name);
    history_.push_back(rec);
    return rec;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const fs::path tmp = root_ / area / (".tmp-" + name + "-" + hex8(rec.key));
  const std::string trail = trail_of(inputs);
  try {
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write_file(tmp / "KEY", full);
    produce(tmp);
    const std::string manifest = manifest_text(tmp);
    write_file(tmp / kManifestName, manifest);
    fs::remove_all(rec.dir);
    fs::rename(tmp, rec.dir);
    rec.checksum = crc32_of(manifest);
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, trail, e.what());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("[{}] {} built in {:.1f} s", area, name, secs);
  history_.push_back(rec);
  return rec;
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  return seed * 1000003ULL + crc32_of(stage);
}

// ---------------------------------------------------------------------------
// Shared data

std::vector<std::size_t> CorpusData::utts_of(const std::string& speaker) const {
  return corpus.utterances_of(speaker);
}

double CorpusData::audio_seconds(std::size_t utt) const {
  return static_cast<double>(corpus.utterances.at(utt).samples.size()) /
         corpus.config.frame_spec.sample_rate;
}

const char* am_kind_name(AmKind k) {
  switch (k) {
    case AmKind::kSi: return "am-si";
    case AmKind::kSbe: return "am-sbe";
    case AmKind::kVrSbe: return "am-vrsbe";
    case AmKind::kVrSbeWindow: return "am-vrsbe-window";
  }
  return "am";
}

std::vector<std::string> system_names(const ExperimentConfig& cfg) {
  std::vector<std::string> s{"si", "sbe", "vrsbe"};
  if (!cfg.window.is_whole_utterance()) s.push_back("vrsbe-" + cfg.window.label());
  for (const char* n : {"lhuc", "flhuc", "joint"}) s.push_back(n);
  return s;
}

Experiment::Experiment(ExperimentConfig cfg, fs::path out)
    : cfg_(std::move(cfg)), out_(std::move(out)), store_(out_) {
  cfg_.validate();
}

Experiment::~Experiment() = default;

const StageRecord& Experiment::corpus_stage() {
  if (!corpus_stage_) {
    const auto& cc = cfg_.corpus;
    const std::uint64_t seed = cfg_.corpus_seed;
    corpus_stage_ = store_.run("shared", "corpus", config_lines(cfg_, {"corpus."}), {},
                               [&](const fs::path& dir) { generate_corpus(cc, seed, dir / "corpus"); });
  }
  return *corpus_stage_;
}

const CorpusData& Experiment::data() {
  if (data_) return *data_;
  const fs::path root = corpus_stage().dir / "corpus";
  auto d = std::make_unique<CorpusData>();
  d->corpus = read_corpus(root);
  const auto& fs_spec = d->corpus.config.frame_spec;
  for (const auto& s : d->corpus.speakers)
    (s.held_out ? d->heldout_speakers : d->train_speakers).push_back(s.speaker_id);
  d->mels.reserve(d->corpus.utterances.size());
  d->frames.reserve(d->corpus.utterances.size());
  for (std::size_t i = 0; i < d->corpus.utterances.size(); ++i) {
    const auto& u = d->corpus.utterances[i];
    d->mels.push_back(mel_spectrogram(u, fs_spec));
    FrameData f;
    f.utt_id = u.utt_id;
    f.speaker_id = u.speaker_id;
    f.group = d->corpus.speaker(u.speaker_id).group_label;
    f.features = am_input_features(d->mels.back());
    f.labels = u.frame_labels;
    if (static_cast<int>(f.labels.size()) != f.frames())
      throw DimensionError("labels and frames disagree for " + u.utt_id);
    d->frames.push_back(std::move(f));
    const bool held_out = d->corpus.speaker(u.speaker_id).held_out;
    if (held_out)
      d->heldout_utts.push_back(i);
    else if (d->corpus.splits[i] == Split::kTrain)
      d->train_utts.push_back(i);
  }
  data_ = std::move(d);
  return *data_;
}

const StageRecord& Experiment::bases_stage(const SlidingWindowSpec& window) {
  const std::string label = window.label();
  auto it = bases_stages_.find(label);
  if (it != bases_stages_.end()) return it->second;
  const int d = cfg_.d;
  const std::string key = fmt::format("d = {}\nwindow = {}\n", d, label);
  const auto& corpus = corpus_stage();
  auto rec = store_.run("shared", "bases", key, {corpus}, [&](const fs::path& dir) {
    const auto& data = this->data();
    CheckpointWriter w;
    for (std::size_t i = 0; i < data.mels.size(); ++i) {
      const auto feats = streaming_extract(data.mels[i], window, d);
      Matrix m(static_cast<Eigen::Index>(feats.size()), feats.front().values.size());
      for (std::size_t k = 0; k < feats.size(); ++k)
        m.row(static_cast<Eigen::Index>(k)) = feats[k].values.transpose();
      w.add_matrix(data.frames[i].utt_id, m);
    }
    w.write(dir / "bases.ckpt");
  });
  return bases_stages_.emplace(label, rec).first->second;
}

const BasisSet& Experiment::bases(const SlidingWindowSpec& window) {
  const std::string label = window.label();
  auto it = bases_.find(label);
  if (it != bases_.end()) return it->second;
  const auto& rec = bases_stage(window);
  const auto& data = this->data();
  CheckpointReader r(rec.dir / "bases.ckpt");
  BasisSet b;
  b.window = window;
  b.d = cfg_.d;
  b.hop_frames = window.is_whole_utterance() ? 0 : window.hop_frames(cfg_.corpus.frame_spec);
  for (const auto& f : data.frames) b.features.push_back(r.matrix(f.utt_id));
  return bases_.emplace(label, std::move(b)).first->second;
}

SeedRun& Experiment::seed(std::uint64_t s) {
  auto it = seeds_.find(s);
  if (it == seeds_.end()) it = seeds_.emplace(s, std::make_unique<SeedRun>(*this, s)).first;
  return *it->second;
}

// ---------------------------------------------------------------------------
// Per-seed stages

SeedRun::SeedRun(Experiment& exp, std::uint64_t seed) : exp_(exp), seed_(seed) {}

std::string SeedRun::area() const { return fmt::format("seed-{}", seed_); }

fs::path SeedRun::report_dir() const { return exp_.out() / "reports" / area(); }

std::string SeedRun::key(const std::string& sections) const {
  return fmt::format("seed = {}\n", seed_) + sections;
}

const StageRecord& SeedRun::sbe() {
  if (auto it = stages_.find("sbe"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  const SlidingWindowSpec utt = SlidingWindowSpec::whole_utterance();
  const auto& in = exp_.bases_stage(utt);
  auto rec = exp_.store().run(
      area(), "sbe", key(config_lines(cfg, {"embedding.", "experiment.mode"})), {in},
      [&](const fs::path& dir) {
        const auto& data = exp_.data();
        const auto ds = embedding_dataset(data, exp_.bases(utt), data.train_utts, cfg.corpus.groups);
        EmbeddingConfig ec = cfg.embedding;
        ec.mode = cfg.mode;
        ec.train.seed = stage_seed(seed_, "sbe");
        std::vector<double> curve;
        const SbeModel m = train_sbe(ds, ec, &curve);
        m.save(dir / "sbe.ckpt");
        average_speaker_embeddings(m, ds).write(dir / "table.tsv");
        write_curve(dir / "curve.csv", curve);
      });
  return stages_.emplace("sbe", rec).first->second;
}

const SbeModel& SeedRun::sbe_model() {
  if (!sbe_model_) sbe_model_ = SbeModel::load(sbe().dir / "sbe.ckpt");
  return *sbe_model_;
}

const SpeakerAverageTable& SeedRun::sbe_table() {
  if (!sbe_table_) sbe_table_ = SpeakerAverageTable::read(sbe().dir / "table.tsv");
  return *sbe_table_;
}

const StageRecord& SeedRun::vrsbe() {
  if (auto it = stages_.find("vrsbe"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  const SlidingWindowSpec utt = SlidingWindowSpec::whole_utterance();
  const std::vector<StageRecord> inputs{exp_.bases_stage(utt), sbe()};
  auto rec = exp_.store().run(
      area(), "vrsbe", key(config_lines(cfg, {"embedding.", "experiment.mode"})), inputs,
      [&](const fs::path& dir) {
        const auto& data = exp_.data();
        const auto ds = embedding_dataset(data, exp_.bases(utt), data.train_utts, cfg.corpus.groups);
        EmbeddingConfig ec = cfg.embedding;
        ec.mode = cfg.mode;
        ec.train.seed = stage_seed(seed_, "vrsbe");
        std::vector<double> curve;
        const SbeModel m = train_vr_sbe(ds, sbe_table(), cfg.weights, ec, &curve, &sbe_model());
        m.save(dir / "vrsbe.ckpt");
        write_curve(dir / "curve.csv", curve);
      });
  return stages_.emplace("vrsbe", rec).first->second;
}

const SbeModel& SeedRun::vrsbe_model() {
  if (!vrsbe_model_) vrsbe_model_ = SbeModel::load(vrsbe().dir / "vrsbe.ckpt");
  return *vrsbe_model_;
}

const StageRecord& SeedRun::vrsbe_window() {
  const auto& cfg = config();
  if (cfg.window.is_whole_utterance()) return vrsbe();
  if (auto it = stages_.find("vrsbe-window"); it != stages_.end()) return it->second;
  const std::vector<StageRecord> inputs{exp_.bases_stage(cfg.window), sbe()};
  auto rec = exp_.store().run(
      area(), "vrsbe-window",
      key(config_lines(cfg, {"embedding.", "experiment.mode", "experiment.window"})), inputs,
      [&](const fs::path& dir) {
        const auto& data = exp_.data();
        const auto ds =
            embedding_dataset(data, exp_.bases(cfg.window), data.train_utts, cfg.corpus.groups);
        EmbeddingConfig ec = cfg.embedding;
        ec.mode = cfg.mode;
        ec.train.seed = stage_seed(seed_, "vrsbe-window");
        ec.train.epochs = cfg.window_embedding_epochs;
        ec.train.batch_size = cfg.window_embedding_batch;
        std::vector<double> curve;
        // Window features differ in distribution from whole-utterance ones,
        // so this model starts fresh and only shares the speaker table.
        const SbeModel m = train_vr_sbe(ds, sbe_table(), cfg.weights, ec, &curve);
        m.save(dir / "vrsbe.ckpt");
        write_curve(dir / "curve.csv", curve);
      });
  return stages_.emplace("vrsbe-window", rec).first->second;
}

const SbeModel& SeedRun::vrsbe_window_model() {
  if (config().window.is_whole_utterance()) return vrsbe_model();
  if (!vrsbe_window_model_)
    vrsbe_window_model_ = SbeModel::load(vrsbe_window().dir / "vrsbe.ckpt");
  return *vrsbe_window_model_;
}

const Matrix& SeedRun::utterance_embeddings(const SbeModel& model) {
  auto it = utterance_embeddings_.find(&model);
  if (it != utterance_embeddings_.end()) return it->second;
  const auto& b = exp_.bases(SlidingWindowSpec::whole_utterance());
  Matrix in(static_cast<Eigen::Index>(b.features.size()), b.features.front().cols());
  for (std::size_t i = 0; i < b.features.size(); ++i)
    in.row(static_cast<Eigen::Index>(i)) = b.features[i].row(0);
  return utterance_embeddings_.emplace(&model, model.embed(in)).first->second;
}

Matrix SeedRun::utterance_aux(const SbeModel& model, std::size_t utt) {
  const Matrix& e = utterance_embeddings(model);
  return broadcast(e.row(static_cast<Eigen::Index>(utt)).transpose(),
                   exp_.data().frames[utt].frames());
}

Matrix SeedRun::window_aux(const SbeModel& model, std::size_t utt) {
  const auto& cfg = config();
  if (cfg.window.is_whole_utterance()) return utterance_aux(model, utt);
  const auto& b = exp_.bases(cfg.window);
  const Matrix e = model.embed(b.features[utt]);
  const int frames = exp_.data().frames[utt].frames();
  Matrix aux(frames, e.cols());
  for (int t = 0; t < frames; ++t)
    aux.row(t) = e.row(feature_index_for_frame(t, b.hop_frames, static_cast<int>(e.rows())));
  return aux;
}

std::vector<AmItem> SeedRun::am_items(const std::vector<std::size_t>& utts, AmKind kind,
                                      const SpeakerAverageTable* sbe) {
  const auto& data = exp_.data();
  std::vector<AmItem> items;
  items.reserve(utts.size());
  for (auto i : utts) {
    AmItem it;
    it.data = &data.frames[i];
    switch (kind) {
      case AmKind::kSi: break;
      case AmKind::kSbe: {
        const auto& table = sbe ? *sbe : sbe_table();
        it.aux = broadcast(table.at(it.data->speaker_id), it.data->frames());
        break;
      }
      case AmKind::kVrSbe: it.aux = utterance_aux(vrsbe_model(), i); break;
      case AmKind::kVrSbeWindow: it.aux = window_aux(vrsbe_window_model(), i); break;
    }
    items.push_back(std::move(it));
  }
  return items;
}

const StageRecord& SeedRun::am(AmKind kind) {
  const auto& cfg = config();
  if (kind == AmKind::kVrSbeWindow && cfg.window.is_whole_utterance()) return am(AmKind::kVrSbe);
  const std::string name = am_kind_name(kind);
  if (auto it = stages_.find(name); it != stages_.end()) return it->second;
  std::vector<StageRecord> inputs{exp_.corpus_stage()};
  if (kind == AmKind::kSbe) inputs.push_back(sbe());
  if (kind == AmKind::kVrSbe) {
    inputs.push_back(exp_.bases_stage(SlidingWindowSpec::whole_utterance()));
    inputs.push_back(vrsbe());
  }
  if (kind == AmKind::kVrSbeWindow) {
    inputs.push_back(exp_.bases_stage(cfg.window));
    inputs.push_back(vrsbe_window());
  }
  auto rec = exp_.store().run(area(), name, key(config_lines(cfg, {"am."})), inputs,
                              [&](const fs::path& dir) {
    const auto items = am_items(exp_.data().train_utts, kind);
    AmConfig ac = cfg.am;
    ac.aux_dim = kind == AmKind::kSi ? 0 : kEmbeddingDim;
    ac.train.seed = stage_seed(seed_, "am");
    std::vector<double> curve;
    AcousticModel m = train_am(items, ac, &curve);
    m.provenance = name + " " + trail_of(inputs);
    m.save(dir / "am.ckpt");
    write_curve(dir / "curve.csv", curve);
  });
  return stages_.emplace(name, rec).first->second;
}

const AcousticModel& SeedRun::am_model(AmKind kind) {
  if (kind == AmKind::kVrSbeWindow && config().window.is_whole_utterance())
    return am_model(AmKind::kVrSbe);
  auto it = ams_.find(kind);
  if (it == ams_.end())
    it = ams_.emplace(kind, AcousticModel::load(am(kind).dir / "am.ckpt")).first;
  return it->second;
}

const StageRecord& SeedRun::lhuc_sat() {
  if (auto it = stages_.find("lhuc-sat"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  const std::vector<StageRecord> inputs{exp_.corpus_stage()};
  auto rec = exp_.store().run(area(), "lhuc-sat", key(config_lines(cfg, {"am."})), inputs,
                              [&](const fs::path& dir) {
    const auto& data = exp_.data();
    auto items = am_items(data.train_utts, AmKind::kSi);
    std::map<std::string, int> index;
    for (std::size_t s = 0; s < data.train_speakers.size(); ++s)
      index[data.train_speakers[s]] = static_cast<int>(s);
    for (auto& it : items) it.transform = index.at(it.data->speaker_id);
    AmConfig ac = cfg.am;
    ac.aux_dim = 0;
    ac.train.seed = stage_seed(seed_, "lhuc-sat");
    SatResult r = lhuc_sat_train(items, data.train_speakers, ac);
    r.model.provenance = "lhuc-sat " + trail_of(inputs);
    r.model.save(dir / "am.ckpt");
    fs::create_directories(dir / "transforms");
    for (const auto& t : r.transforms) t.write(dir / "transforms" / (t.speaker_id + ".txt"));
    write_curve(dir / "curve.csv", r.curve);
  });
  return stages_.emplace("lhuc-sat", rec).first->second;
}

const AcousticModel& SeedRun::sat_model() {
  if (!sat_model_) sat_model_ = AcousticModel::load(lhuc_sat().dir / "am.ckpt");
  return *sat_model_;
}

const std::vector<LhucTransform>& SeedRun::sat_transforms() {
  if (sat_transforms_.empty()) {
    const fs::path dir = lhuc_sat().dir / "transforms";
    for (const auto& s : exp_.data().train_speakers)
      sat_transforms_.push_back(LhucTransform::read(dir / (s + ".txt")));
  }
  return sat_transforms_;
}

std::vector<RegressionItem> SeedRun::regression_items(const std::vector<std::size_t>& utts,
                                                      std::vector<Matrix>& storage) {
  const auto& data = exp_.data();
  const bool speaker = config().regression.inputs != RegressionInputs::kFbank;
  storage.clear();
  storage.reserve(utts.size());
  std::vector<RegressionItem> items;
  for (auto i : utts) {
    RegressionItem it;
    it.data = &data.frames[i];
    if (speaker) {
      storage.push_back(utterance_aux(vrsbe_model(), i));
      it.speaker_features = &storage.back();
    }
    items.push_back(it);
  }
  return items;
}

const StageRecord& SeedRun::regression() {
  if (auto it = stages_.find("regression"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  const std::vector<StageRecord> inputs{exp_.corpus_stage(),
                                        exp_.bases_stage(SlidingWindowSpec::whole_utterance()),
                                        vrsbe(), lhuc_sat()};
  auto rec = exp_.store().run(area(), "regression", key(config_lines(cfg, {"regression."})),
                              inputs, [&](const fs::path& dir) {
    std::vector<Matrix> storage;
    const auto items = regression_items(exp_.data().train_utts, storage);
    const PcaTargets targets = build_pca_targets(sat_transforms(), cfg.target_dim);
    RegressionConfig rc = cfg.regression;
    rc.train.seed = stage_seed(seed_, "regression");
    std::vector<double> curve;
    train_regression(items, targets, rc, &curve).save(dir / "regression.ckpt");
    write_curve(dir / "curve.csv", curve);
  });
  return stages_.emplace("regression", rec).first->second;
}

const RegressionModel& SeedRun::regression_model() {
  if (!regression_model_)
    regression_model_ = RegressionModel::load(regression().dir / "regression.ckpt");
  return *regression_model_;
}

const StageRecord& SeedRun::flhuc_am() {
  if (auto it = stages_.find("flhuc-am"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  const std::vector<StageRecord> inputs{regression(), am(AmKind::kVrSbe)};
  auto rec = exp_.store().run(area(), "flhuc-am", key(config_lines(cfg, {"finetune."})), inputs,
                              [&](const fs::path& dir) {
    const auto& utts = exp_.data().train_utts;
    std::vector<Matrix> storage;
    const auto predicted = predict_flhuc(regression_model(), regression_items(utts, storage));
    auto items = am_items(utts, AmKind::kVrSbe);
    Matrix transforms(static_cast<Eigen::Index>(predicted.size()), predicted.front().width());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      transforms.row(static_cast<Eigen::Index>(i)) = predicted[i].v.transpose();
      items[i].transform = static_cast<int>(i);
    }
    AcousticModel m = am_model(AmKind::kVrSbe);
    nn::TrainingConfig ft = cfg.finetune;
    ft.seed = stage_seed(seed_, "flhuc-am");
    const auto curve = am_finetune_with_flhuc(m, items, transforms, ft);
    m.provenance = "flhuc-am " + trail_of(inputs);
    m.save(dir / "am.ckpt");
    write_curve(dir / "curve.csv", curve);
  });
  return stages_.emplace("flhuc-am", rec).first->second;
}

const AcousticModel& SeedRun::flhuc_model() {
  if (!flhuc_model_) flhuc_model_ = AcousticModel::load(flhuc_am().dir / "am.ckpt");
  return *flhuc_model_;
}

const StageRecord& SeedRun::adapt() {
  if (auto it = stages_.find("adapt"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  const std::vector<StageRecord> inputs{sbe(), lhuc_sat()};
  auto rec = exp_.store().run(area(), "adapt", key(config_lines(cfg, {"lhuc."})), inputs,
                              [&](const fs::path& dir) {
    const auto& data = exp_.data();
    // Batch SBE: speaker-level average over all of the speaker's utterances.
    const Matrix& sbe_emb = utterance_embeddings(sbe_model());
    SpeakerAverageTable table;
    for (const auto& s : data.heldout_speakers) {
      Vector acc = Vector::Zero(sbe_emb.cols());
      const auto utts = data.utts_of(s);
      for (auto i : utts) acc += sbe_emb.row(static_cast<Eigen::Index>(i)).transpose();
      table.set(s, acc / static_cast<double>(utts.size()));
    }
    table.write(dir / "sbe_heldout.tsv");

    // Batch LHUC: unsupervised multipass estimation on the SAT model.
    LhucConfig lc = cfg.lhuc;
    lc.train.seed = stage_seed(seed_, "adapt");
    fs::create_directories(dir / "lhuc");
    CsvTable passes({"speaker", "pass", "label_accuracy"});
    for (const auto& s : data.heldout_speakers) {
      const auto items = am_items(data.utts_of(s), AmKind::kSi);
      const MultipassResult r = multipass_adapt(sat_model(), items, lc);
      LhucTransform t = r.transform;
      t.speaker_id = s;
      t.write(dir / "lhuc" / (s + ".txt"));
      for (std::size_t p = 0; p < r.label_accuracy.size(); ++p)
        passes.add_row({s, std::to_string(p + 1), fixed6(r.label_accuracy[p])});
    }
    passes.write(dir / "multipass.csv");
  });
  return stages_.emplace("adapt", rec).first->second;
}

const StageRecord& SeedRun::adapt_flhuc() {
  if (auto it = stages_.find("adapt-flhuc"); it != stages_.end()) return it->second;
  const std::vector<StageRecord> inputs{vrsbe(), regression()};
  auto rec = exp_.store().run(area(), "adapt-flhuc", key(""), inputs, [&](const fs::path& dir) {
    const auto& data = exp_.data();
    std::vector<Matrix> storage;
    const auto predicted =
        predict_flhuc(regression_model(), regression_items(data.heldout_utts, storage));
    Matrix v(static_cast<Eigen::Index>(predicted.size()), predicted.front().width());
    std::string ids;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      v.row(static_cast<Eigen::Index>(i)) = predicted[i].v.transpose();
      ids += data.frames[data.heldout_utts[i]].utt_id + "\n";
    }
    CheckpointWriter w;
    w.add_matrix("transforms", v);
    w.add_text("utts", ids);
    w.write(dir / "flhuc.ckpt");
  });
  return stages_.emplace("adapt-flhuc", rec).first->second;
}

Matrix SeedRun::heldout_flhuc_transforms() {
  CheckpointReader r(adapt_flhuc().dir / "flhuc.ckpt");
  Matrix v = r.matrix("transforms");
  if (v.rows() != static_cast<Eigen::Index>(exp_.data().heldout_utts.size()))
    throw DimensionError("f-LHUC transforms do not match the held-out utterances");
  return v;
}

std::map<std::string, LhucTransform> SeedRun::heldout_lhuc_transforms() {
  std::map<std::string, LhucTransform> out;
  for (const auto& s : exp_.data().heldout_speakers)
    out.emplace(s, LhucTransform::read(adapt().dir / "lhuc" / (s + ".txt")));
  return out;
}

SystemOutputs SeedRun::decode_system(const std::string& system) {
  const auto& cfg = config();
  const auto& data = exp_.data();
  const auto& utts = data.heldout_utts;
  SystemOutputs out;
  out.system = system;
  auto run = [&](const AcousticModel& m, const std::vector<AmItem>& items, const Matrix* t) {
    for (const auto& it : items) out.outputs.push_back(decode_frames(m, it, t));
  };
  if (system == "si") {
    run(am_model(AmKind::kSi), am_items(utts, AmKind::kSi), nullptr);
  } else if (system == "sbe") {
    const auto table = SpeakerAverageTable::read(adapt().dir / "sbe_heldout.tsv");
    run(am_model(AmKind::kSbe), am_items(utts, AmKind::kSbe, &table), nullptr);
  } else if (system == "vrsbe") {
    run(am_model(AmKind::kVrSbe), am_items(utts, AmKind::kVrSbe), nullptr);
  } else if (!cfg.window.is_whole_utterance() && system == "vrsbe-" + cfg.window.label()) {
    run(am_model(AmKind::kVrSbeWindow), am_items(utts, AmKind::kVrSbeWindow), nullptr);
  } else if (system == "lhuc") {
    const auto transforms = heldout_lhuc_transforms();
    Matrix v(static_cast<Eigen::Index>(data.heldout_speakers.size()),
             sat_model().lhuc_width());
    std::map<std::string, int> index;
    for (std::size_t s = 0; s < data.heldout_speakers.size(); ++s) {
      const auto& id = data.heldout_speakers[s];
      v.row(static_cast<Eigen::Index>(s)) = transforms.at(id).v.transpose();
      index[id] = static_cast<int>(s);
    }
    auto items = am_items(utts, AmKind::kSi);
    for (auto& it : items) it.transform = index.at(it.data->speaker_id);
    run(sat_model(), items, &v);
  } else if (system == "flhuc") {
    const Matrix v = heldout_flhuc_transforms();
    auto items = am_items(utts, AmKind::kVrSbe);
    for (std::size_t i = 0; i < items.size(); ++i) items[i].transform = static_cast<int>(i);
    run(flhuc_model(), items, &v);
  } else if (system == "joint") {
    const auto a = decode_system("vrsbe");
    const auto b = decode_system("flhuc");
    for (std::size_t i = 0; i < a.outputs.size(); ++i)
      out.outputs.push_back(joint_decode(a.outputs[i], b.outputs[i]));
  } else {
    throw ConfigError("unknown system '" + system + "'");
  }
  out.metrics = stream_adapt::evaluate(out.outputs, cfg.corpus.groups);
  return out;
}

const StageRecord& SeedRun::evaluate() {
  if (auto it = stages_.find("evaluate"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  std::vector<StageRecord> inputs{am(AmKind::kSi), am(AmKind::kSbe), am(AmKind::kVrSbe)};
  if (!cfg.window.is_whole_utterance()) inputs.push_back(am(AmKind::kVrSbeWindow));
  inputs.push_back(flhuc_am());
  inputs.push_back(adapt());
  inputs.push_back(adapt_flhuc());
  auto rec = exp_.store().run(area(), "evaluate", key(config_lines(cfg, {"experiment.window"})),
                              inputs, [&](const fs::path& dir) {
    CsvTable systems({"system", "group", "frames", "errors", "error_rate", "accuracy"});
    for (const auto& name : system_names(cfg)) {
      const SystemOutputs s = decode_system(name);
      write_metrics_csv(dir / ("metrics_" + name + ".csv"), s.metrics);
      write_decode_text(dir / ("decode_" + name + ".txt"), s.outputs);
      Eigen::Index rows = 0;
      for (const auto& o : s.outputs) rows += o.log_posteriors.rows();
      Matrix post(rows, s.outputs.front().log_posteriors.cols());
      rows = 0;
      for (const auto& o : s.outputs) {
        post.middleRows(rows, o.log_posteriors.rows()) = o.log_posteriors;
        rows += o.log_posteriors.rows();
      }
      write_feature_dump(dir / ("posteriors_" + name + ".sbfx"), post);
      auto add = [&](const std::string& group, const GroupMetrics& g) {
        systems.add_row({name, group, std::to_string(g.frames), std::to_string(g.errors),
                         fixed6(g.rate()), fixed6(1.0 - g.rate())});
      };
      add("all", s.metrics.overall);
      for (std::size_t g = 0; g < s.metrics.groups.size(); ++g)
        if (s.metrics.groups[g].frames > 0) add(std::to_string(g), s.metrics.groups[g]);
    }
    systems.write(dir / "systems.csv");
  });
  return stages_.emplace("evaluate", rec).first->second;
}

const StageRecord& SeedRun::sweep() {
  if (auto it = stages_.find("sweep"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  const std::vector<StageRecord> inputs{am(AmKind::kSbe), am(AmKind::kVrSbe), lhuc_sat()};
  auto rec = exp_.store().run(
      area(), "sweep", key(config_lines(cfg, {"lhuc.", "analysis.sweep_percentages"})), inputs,
      [&](const fs::path& dir) { run_sweep(*this, dir); });
  return stages_.emplace("sweep", rec).first->second;
}

const StageRecord& SeedRun::homogeneity() {
  if (auto it = stages_.find("homogeneity"); it != stages_.end()) return it->second;
  const auto& cfg = config();
  std::vector<StageRecord> inputs{sbe(), vrsbe(), regression()};
  if (cfg.homogeneity_lhuc) inputs.push_back(lhuc_sat());
  auto rec = exp_.store().run(
      area(), "homogeneity",
      key(config_lines(cfg, {"analysis.probe_speakers", "analysis.homogeneity_lhuc", "lhuc."})),
      inputs, [&](const fs::path& dir) { run_homogeneity(*this, dir); });
  return stages_.emplace("homogeneity", rec).first->second;
}

void SeedRun::publish() {
  const fs::path out = report_dir();
  fs::create_directories(out);
  auto copy_reports = [&](const fs::path& dir) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto ext = e.path().extension();
      const auto name = e.path().filename().string();
      if (ext != ".csv" && ext != ".svg") continue;
      if (name == "curve.csv") continue;
      fs::copy_file(e.path(), out / name, fs::copy_options::overwrite_existing);
    }
  };
  for (const auto* rec : {&evaluate(), &sweep(), &homogeneity()}) copy_reports(rec->dir);
  CsvTable stages({"stage", "directory", "checksum"});
  for (const auto& [name, rec] : stages_)
    stages.add_row({name, fs::relative(rec.dir, exp_.out()).generic_string(), hex8(rec.checksum)});
  stages.write(out / "stages.csv");
}

}  // namespace stream_adapt
