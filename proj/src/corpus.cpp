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

#include "stream_adapt/corpus.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

#include "stream_adapt/binary_io.hpp"
#include "stream_adapt/error.hpp"

namespace stream_adapt {

namespace fs = std::filesystem;

namespace {

constexpr int kWaveVersion = 1;
constexpr double kPcmScale = 32767.0;
constexpr int kFftSize = 512;
constexpr int kFormantsPerClass = 3;
constexpr int kCarrierPartials = 40;
constexpr double kTiltReferenceHz = 500.0;
constexpr double kCarrierLowHz = 200.0;
constexpr double kCarrierHighHz = 7600.0;

double tilt_gain(double tilt_db_per_octave, double hz) {
  return std::pow(10.0, tilt_db_per_octave * std::log2(hz / kTiltReferenceHz) /
                            20.0);
}

struct Formant {
  double hz;
  double amplitude;
};

// Formant layout of class k. Classes 2p and 2p+1 share positions and differ
// in slope.
std::array<Formant, kFormantsPerClass> class_formants(int k,
                                                      const CorpusConfig& cfg) {
  const int pattern = k / 2;
  const double slope = (k % 2 == 0) ? -cfg.class_slope : cfg.class_slope;
  std::mt19937_64 rng(0x5eedf0u + static_cast<std::uint64_t>(pattern));
  const double lo = hz_to_mel(300.0), hi = hz_to_mel(5500.0);
  std::uniform_real_distribution<double> pos(lo, hi);
  std::array<double, kFormantsPerClass> mels{};
  // Rejection keeps formants at least one band-width apart.
  const double min_gap = (hi - lo) / 12.0;
  for (int j = 0; j < kFormantsPerClass; ++j) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      mels[j] = pos(rng);
      bool ok = true;
      for (int i = 0; i < j; ++i)
        if (std::abs(mels[i] - mels[j]) < min_gap) ok = false;
      if (ok) break;
    }
  }
  std::sort(mels.begin(), mels.end());
  std::array<Formant, kFormantsPerClass> out{};
  for (int j = 0; j < kFormantsPerClass; ++j) {
    const double hz = mel_to_hz(mels[j]);
    out[j] = {hz, std::pow(10.0, slope * std::log2(hz / 1000.0) / 20.0)};
  }
  return out;
}

double carrier_hz(int j) {
  const double t = static_cast<double>(j) / (kCarrierPartials - 1);
  return kCarrierLowHz * std::pow(kCarrierHighHz / kCarrierLowHz, t);
}

// Fixed normalization so the loudest admissible speaker stays inside [-1, 1]
// and volume_gain remains a pure output multiplier.
double amplitude_normalizer(const CorpusConfig& cfg) {
  double worst = 0.0;
  for (double tilt : {cfg.spectral_tilt.lo, cfg.spectral_tilt.hi}) {
    double formants = 0.0;
    for (int k = 0; k < cfg.classes; ++k) {
      double s = 0.0;
      for (const auto& f : class_formants(k, cfg))
        s += 1.25 * f.amplitude * tilt_gain(tilt, f.hz * 1.03);
      formants = std::max(formants, s);
    }
    double carrier = 0.0;
    for (int j = 0; j < kCarrierPartials; ++j)
      carrier += cfg.carrier_level * tilt_gain(tilt, carrier_hz(j));
    worst = std::max(worst, formants + carrier);
  }
  worst += 5.0 * cfg.noise_floor.hi;
  return 0.95 / worst;
}

std::uint64_t utterance_stream_seed(std::uint64_t speaker_seed, int utt_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(speaker_seed),
                    static_cast<std::uint32_t>(speaker_seed >> 32),
                    static_cast<std::uint32_t>(utt_index), 0x517eu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void check_range(const TraitRange& r, const char* name, bool positive) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
    throw ConfigError(fmt::format("trait range {} is invalid [{}, {}]", name,
                                  r.lo, r.hi));
  if (positive && r.lo <= 0.0)
    throw ConfigError(
        fmt::format("trait range {} must be positive, got lower bound {}",
                    name, r.lo));
}

struct FftPlan {
  fftw_plan plan = nullptr;
  double* in = nullptr;
  fftw_complex* out = nullptr;
};

// Plan creation is not thread-safe in FFTW; executing with new arrays is.
const FftPlan& shared_plan() {
  static std::once_flag once;
  static FftPlan p;
  std::call_once(once, [] {
    p.in = fftw_alloc_real(kFftSize);
    p.out = fftw_alloc_complex(kFftSize / 2 + 1);
    p.plan = fftw_plan_dft_r2c_1d(kFftSize, p.in, p.out, FFTW_ESTIMATE);
  });
  return p;
}

std::string cfg_line(const std::string& k, const std::string& v) {
  return k + " = " + v + "\n";
}

std::string range_str(const TraitRange& r) {
  return fmt::format("{},{}", r.lo, r.hi);
}

TraitRange parse_range(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw FormatError("bad range: " + s);
  return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, '\t')) out.push_back(cell);
  return out;
}

}  // namespace

int FrameSpec::frame_length_samples() const {
  return static_cast<int>(std::lround(sample_rate * frame_length_ms / 1000.0));
}

int FrameSpec::hop_samples() const {
  return static_cast<int>(std::lround(sample_rate * frame_hop_ms / 1000.0));
}

int FrameSpec::frame_count(std::size_t n_samples) const {
  const auto len = static_cast<std::size_t>(frame_length_samples());
  if (n_samples < len) return 0;
  return 1 + static_cast<int>((n_samples - len) /
                              static_cast<std::size_t>(hop_samples()));
}

std::size_t FrameSpec::samples_for_frames(int n_frames) const {
  if (n_frames <= 0) return 0;
  return static_cast<std::size_t>(frame_length_samples()) +
         static_cast<std::size_t>(n_frames - 1) * hop_samples();
}

double FrameSpec::frames_to_seconds(int n_frames) const {
  return static_cast<double>(samples_for_frames(n_frames)) / sample_rate;
}

void FrameSpec::validate() const {
  if (sample_rate <= 0 || frame_length_ms <= 0 || frame_hop_ms <= 0 ||
      n_mels < 1 || hop_samples() < 1 || frame_length_samples() > kFftSize)
    throw ConfigError("invalid frame spec");
}

void CorpusConfig::validate() const {
  if (speakers < 1 || utts_per_speaker < 1 || classes < 2 || groups < 1)
    throw ConfigError("corpus needs >=1 speaker, >=1 utterance, >=2 classes");
  if (held_out_speakers < 0 || held_out_speakers >= speakers)
    throw ConfigError("held_out_speakers must leave at least one training speaker");
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("test_fraction must be in [0, 1)");
  check_range(volume_gain, "volume_gain", true);
  if (volume_gain.hi > 1.0) throw ConfigError("volume_gain must lie in (0, 1]");
  check_range(spectral_tilt, "spectral_tilt", false);
  check_range(rate_factor, "rate_factor", true);
  check_range(noise_floor, "noise_floor", false);
  if (noise_floor.lo < 0.0) throw ConfigError("noise_floor must be >= 0");
  if (segments_min < 1 || segments_max < segments_min ||
      segment_frames_min < 1 || segment_frames_max < segment_frames_min)
    throw ConfigError("invalid segment layout");
  frame_spec.validate();
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split '" + s + "'");
}

const SpeakerProfile& Corpus::speaker(const std::string& id) const {
  for (const auto& s : speakers)
    if (s.speaker_id == id) return s;
  throw MissingSpeakerError("unknown speaker " + id);
}

std::vector<std::size_t> Corpus::utterances_of(const std::string& id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (utterances[i].speaker_id == id) out.push_back(i);
  return out;
}

double Corpus::total_seconds() const {
  double s = 0.0;
  for (const auto& u : utterances)
    s += static_cast<double>(u.samples.size()) / config.frame_spec.sample_rate;
  return s;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

double mel_band_center_hz(const FrameSpec& spec, int band) {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(spec.sample_rate / 2.0);
  const double step = (hi - lo) / (spec.n_mels + 1);
  return mel_to_hz(lo + step * (band + 1));
}

Matrix mel_filterbank(const FrameSpec& spec, int fft_size) {
  const int bins = fft_size / 2 + 1;
  Matrix fb = Matrix::Zero(spec.n_mels, bins);
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(spec.sample_rate / 2.0);
  const double step = (hi - lo) / (spec.n_mels + 1);
  for (int b = 0; b < spec.n_mels; ++b) {
    const double left = lo + step * b;
    const double center = left + step;
    const double right = center + step;
    for (int k = 0; k < bins; ++k) {
      const double mel =
          hz_to_mel(static_cast<double>(k) * spec.sample_rate / fft_size);
      if (mel > left && mel < right)
        fb(b, k) = mel <= center ? (mel - left) / (center - left)
                                 : (right - mel) / (right - center);
    }
  }
  return fb;
}

int group_for_traits(double volume_gain, double spectral_tilt,
                     const CorpusConfig& cfg) {
  auto unit = [](double v, const TraitRange& r) {
    if (r.hi <= r.lo) return 0.0;
    return std::clamp((v - r.lo) / (r.hi - r.lo), 0.0, 1.0);
  };
  const double severity = 0.5 * (1.0 - unit(volume_gain, cfg.volume_gain)) +
                          0.5 * (1.0 - unit(spectral_tilt, cfg.spectral_tilt));
  return std::min(cfg.groups - 1,
                  static_cast<int>(std::floor(severity * cfg.groups)));
}

std::vector<SpeakerProfile> make_profiles(const CorpusConfig& cfg,
                                          std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto lerp = [](const TraitRange& r, double t) {
    return r.lo + (r.hi - r.lo) * std::clamp(t, 0.0, 1.0);
  };
  std::vector<SpeakerProfile> out;
  out.reserve(cfg.speakers);
  for (int i = 0; i < cfg.speakers; ++i) {
    SpeakerProfile p;
    p.speaker_id = fmt::format("spk{:02d}", i);
    // A latent severity drives volume, tilt and noise together, with
    // independent jitter on each trait.
    const double severity = unit(rng);
    p.volume_gain = lerp(cfg.volume_gain, 1.0 - severity + 0.3 * (unit(rng) - 0.5));
    p.spectral_tilt =
        lerp(cfg.spectral_tilt, 1.0 - severity + 0.3 * (unit(rng) - 0.5));
    p.rate_factor = lerp(cfg.rate_factor, unit(rng));
    p.noise_floor = lerp(cfg.noise_floor, 0.5 * severity + 0.5 * unit(rng));
    p.seed = rng();
    p.group_label = group_for_traits(p.volume_gain, p.spectral_tilt, cfg);
    p.held_out = i >= cfg.speakers - cfg.held_out_speakers;
    out.push_back(std::move(p));
  }
  return out;
}

Utterance synthesize_utterance(const SpeakerProfile& profile,
                               const CorpusConfig& cfg, int utt_index) {
  if (profile.rate_factor <= 0.0)
    throw ConfigError("rate_factor must be positive for " + profile.speaker_id);
  std::mt19937_64 rng(utterance_stream_seed(profile.seed, utt_index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> n_seg_dist(cfg.segments_min,
                                                cfg.segments_max);
  std::uniform_int_distribution<int> class_dist(0, cfg.classes - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Utterance utt;
  utt.speaker_id = profile.speaker_id;
  utt.utt_id = fmt::format("{}_u{:03d}", profile.speaker_id, utt_index);

  struct Segment {
    int label;
    int frames;
    std::array<Formant, kFormantsPerClass> formants;
  };
  std::vector<Segment> segments;
  const int n_seg = n_seg_dist(rng);
  int prev = -1;
  for (int s = 0; s < n_seg; ++s) {
    int label = class_dist(rng);
    if (label == prev) label = (label + 1) % cfg.classes;
    prev = label;
    const double base = cfg.segment_frames_min +
                        unit(rng) * (cfg.segment_frames_max - cfg.segment_frames_min);
    const int frames = std::max(1, static_cast<int>(std::lround(base * profile.rate_factor)));
    auto formants = class_formants(label, cfg);
    for (auto& f : formants) {
      f.hz *= 1.0 + 0.03 * (2.0 * unit(rng) - 1.0);
      f.amplitude *= 1.0 + 0.25 * (2.0 * unit(rng) - 1.0);
    }
    segments.push_back({label, frames, formants});
    for (int t = 0; t < frames; ++t) utt.frame_labels.push_back(label);
  }

  const FrameSpec& fs = cfg.frame_spec;
  const int n_frames = static_cast<int>(utt.frame_labels.size());
  const std::size_t n_samples = fs.samples_for_frames(n_frames);
  const int len = fs.frame_length_samples();
  const int hop = fs.hop_samples();
  const double two_pi = 2.0 * std::numbers::pi;
  const double norm = amplitude_normalizer(cfg);

  std::vector<std::complex<double>> carrier_z(kCarrierPartials);
  std::vector<std::complex<double>> carrier_w(kCarrierPartials);
  std::vector<double> carrier_amp(kCarrierPartials);
  for (int j = 0; j < kCarrierPartials; ++j) {
    const double hz = carrier_hz(j) * (1.0 + 0.01 * (2.0 * unit(rng) - 1.0));
    carrier_z[j] = std::polar(1.0, two_pi * unit(rng));
    carrier_w[j] = std::polar(1.0, two_pi * hz / fs.sample_rate);
    carrier_amp[j] = cfg.carrier_level * tilt_gain(profile.spectral_tilt, hz);
  }
  std::array<std::complex<double>, kFormantsPerClass> formant_z{};
  std::array<std::complex<double>, kFormantsPerClass> formant_w{};
  std::array<double, kFormantsPerClass> formant_amp{};
  for (auto& z : formant_z) z = std::polar(1.0, two_pi * unit(rng));

  // frame index -> segment index
  std::vector<int> seg_of_frame;
  seg_of_frame.reserve(n_frames);
  for (int s = 0; s < static_cast<int>(segments.size()); ++s)
    for (int t = 0; t < segments[s].frames; ++t) seg_of_frame.push_back(s);

  utt.samples.resize(n_samples);
  int active = -1;
  for (std::size_t n = 0; n < n_samples; ++n) {
    // Sample n belongs to the frame whose hop-wide center region covers it.
    const long idx = (static_cast<long>(n) - len / 2 + hop / 2) / hop;
    const int frame = static_cast<int>(std::clamp<long>(idx, 0, n_frames - 1));
    const int seg = seg_of_frame[frame];
    if (seg != active) {
      active = seg;
      for (int j = 0; j < kFormantsPerClass; ++j) {
        const auto& f = segments[seg].formants[j];
        formant_w[j] = std::polar(1.0, two_pi * f.hz / fs.sample_rate);
        formant_amp[j] = f.amplitude * tilt_gain(profile.spectral_tilt, f.hz);
      }
    }
    double x = 0.0;
    for (int j = 0; j < kFormantsPerClass; ++j) {
      x += formant_amp[j] * formant_z[j].imag();
      formant_z[j] *= formant_w[j];
    }
    for (int j = 0; j < kCarrierPartials; ++j) {
      x += carrier_amp[j] * carrier_z[j].imag();
      carrier_z[j] *= carrier_w[j];
    }
    x += profile.noise_floor * gauss(rng);
    utt.samples[n] = profile.volume_gain * norm * x;
  }
  return utt;
}

Corpus synthesize_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  Corpus corpus;
  corpus.config = cfg;
  corpus.seed = seed;
  corpus.speakers = make_profiles(cfg, seed);
  const int n_test = static_cast<int>(std::lround(cfg.utts_per_speaker * cfg.test_fraction));
  for (const auto& p : corpus.speakers) {
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      corpus.utterances.push_back(synthesize_utterance(p, cfg, u));
      const bool test = p.held_out || u >= cfg.utts_per_speaker - n_test;
      corpus.splits.push_back(test ? Split::kTest : Split::kTrain);
    }
  }
  return corpus;
}

void write_waveform(const fs::path& path, std::span<const double> samples,
                    int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  bin::put_magic(os, "SYNW", 4);
  bin::put<std::uint32_t>(os, kWaveVersion);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(sample_rate));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(samples.size()));
  for (double x : samples) {
    const double q = std::clamp(std::round(x * kPcmScale), -32768.0, 32767.0);
    bin::put<std::int16_t>(os, static_cast<std::int16_t>(q));
  }
}

std::vector<double> read_waveform(const fs::path& path, int* sample_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  bin::expect_magic(is, "SYNW", 4, path.string());
  const auto version = bin::get<std::uint32_t>(is, path.string());
  if (version != kWaveVersion)
    throw UnsupportedVersionError(
        fmt::format("{}: waveform version {} unsupported", path.string(), version));
  const auto rate = bin::get<std::uint32_t>(is, path.string());
  const auto length = bin::get<std::uint32_t>(is, path.string());
  if (sample_rate) *sample_rate = static_cast<int>(rate);
  std::vector<double> out(length);
  for (auto& x : out) x = bin::get<std::int16_t>(is, path.string()) / kPcmScale;
  return out;
}

namespace {

void write_config(const Corpus& c, const fs::path& path) {
  const auto& cfg = c.config;
  std::ofstream os(path);
  os << "[corpus]\n";
  os << cfg_line("seed", std::to_string(c.seed));
  os << cfg_line("speakers", std::to_string(cfg.speakers));
  os << cfg_line("utts_per_speaker", std::to_string(cfg.utts_per_speaker));
  os << cfg_line("classes", std::to_string(cfg.classes));
  os << cfg_line("groups", std::to_string(cfg.groups));
  os << cfg_line("held_out_speakers", std::to_string(cfg.held_out_speakers));
  os << cfg_line("test_fraction", fmt::format("{}", cfg.test_fraction));
  os << cfg_line("volume_gain", range_str(cfg.volume_gain));
  os << cfg_line("spectral_tilt", range_str(cfg.spectral_tilt));
  os << cfg_line("rate_factor", range_str(cfg.rate_factor));
  os << cfg_line("noise_floor", range_str(cfg.noise_floor));
  os << cfg_line("segments", fmt::format("{},{}", cfg.segments_min, cfg.segments_max));
  os << cfg_line("segment_frames",
                 fmt::format("{},{}", cfg.segment_frames_min, cfg.segment_frames_max));
  os << cfg_line("carrier_level", fmt::format("{}", cfg.carrier_level));
  os << cfg_line("class_slope", fmt::format("{}", cfg.class_slope));
  const auto& f = cfg.frame_spec;
  os << cfg_line("sample_rate", std::to_string(f.sample_rate));
  os << cfg_line("frame_length_ms", fmt::format("{}", f.frame_length_ms));
  os << cfg_line("frame_hop_ms", fmt::format("{}", f.frame_hop_ms));
  os << cfg_line("n_mels", std::to_string(f.n_mels));
  os << cfg_line("log_floor", fmt::format("{}", f.log_floor));
}

std::pair<CorpusConfig, std::uint64_t> read_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("missing corpus config " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '[' || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto at = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("corpus config lacks " + k);
    return it->second;
  };
  CorpusConfig cfg;
  cfg.speakers = std::stoi(at("speakers"));
  cfg.utts_per_speaker = std::stoi(at("utts_per_speaker"));
  cfg.classes = std::stoi(at("classes"));
  cfg.groups = std::stoi(at("groups"));
  cfg.held_out_speakers = std::stoi(at("held_out_speakers"));
  cfg.test_fraction = std::stod(at("test_fraction"));
  cfg.volume_gain = parse_range(at("volume_gain"));
  cfg.spectral_tilt = parse_range(at("spectral_tilt"));
  cfg.rate_factor = parse_range(at("rate_factor"));
  cfg.noise_floor = parse_range(at("noise_floor"));
  auto seg = parse_range(at("segments"));
  cfg.segments_min = static_cast<int>(seg.lo);
  cfg.segments_max = static_cast<int>(seg.hi);
  auto sf = parse_range(at("segment_frames"));
  cfg.segment_frames_min = static_cast<int>(sf.lo);
  cfg.segment_frames_max = static_cast<int>(sf.hi);
  cfg.carrier_level = std::stod(at("carrier_level"));
  cfg.class_slope = std::stod(at("class_slope"));
  cfg.frame_spec.sample_rate = std::stoi(at("sample_rate"));
  cfg.frame_spec.frame_length_ms = std::stod(at("frame_length_ms"));
  cfg.frame_spec.frame_hop_ms = std::stod(at("frame_hop_ms"));
  cfg.frame_spec.n_mels = std::stoi(at("n_mels"));
  cfg.frame_spec.log_floor = std::stod(at("log_floor"));
  return {cfg, std::stoull(at("seed"))};
}

}  // namespace

CorpusManifest write_corpus(const Corpus& corpus, const fs::path& root) {
  fs::create_directories(root);
  write_config(corpus, root / "config.txt");
  {
    std::ofstream os(root / "manifest.tsv");
    os << "speaker_id\tgroup\tvolume_gain\tspectral_tilt\trate_factor\t"
          "noise_floor\tseed\theld_out\tutterances\n";
    for (const auto& p : corpus.speakers) {
      os << fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", p.speaker_id,
                        p.group_label, p.volume_gain, p.spectral_tilt,
                        p.rate_factor, p.noise_floor, p.seed,
                        p.held_out ? 1 : 0,
                        corpus.utterances_of(p.speaker_id).size());
    }
  }
  std::ofstream utt_table(root / "utterances.tsv");
  utt_table << "utt_id\tspeaker_id\tsplit\tsamples\tframes\n";
  std::map<std::string, std::ofstream> labels;
  for (const auto& p : corpus.speakers) {
    fs::create_directories(root / p.speaker_id);
    labels.emplace(p.speaker_id, std::ofstream(root / p.speaker_id / "labels.txt"));
  }
  const int rate = corpus.config.frame_spec.sample_rate;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    write_waveform(root / u.speaker_id / (u.utt_id + ".synw"), u.samples, rate);
    auto& lab = labels.at(u.speaker_id);
    lab << u.utt_id;
    for (int l : u.frame_labels) lab << ' ' << l;
    lab << '\n';
    utt_table << fmt::format("{}\t{}\t{}\t{}\t{}\n", u.utt_id, u.speaker_id,
                             split_name(corpus.splits[i]), u.samples.size(),
                             u.frame_labels.size());
  }
  return {root, corpus.speakers, corpus.utterances.size()};
}

CorpusManifest generate_corpus(const CorpusConfig& cfg, std::uint64_t seed,
                               const fs::path& root) {
  return write_corpus(synthesize_corpus(cfg, seed), root);
}

Corpus read_corpus(const fs::path& root) {
  Corpus corpus;
  std::tie(corpus.config, corpus.seed) = read_config(root / "config.txt");
  std::ifstream man(root / "manifest.tsv");
  if (!man) throw FormatError("missing manifest in " + root.string());
  std::string line;
  std::getline(man, line);
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    const auto c = split_tabs(line);
    if (c.size() != 9) throw FormatError("bad manifest row: " + line);
    SpeakerProfile p;
    p.speaker_id = c[0];
    p.group_label = std::stoi(c[1]);
    p.volume_gain = std::stod(c[2]);
    p.spectral_tilt = std::stod(c[3]);
    p.rate_factor = std::stod(c[4]);
    p.noise_floor = std::stod(c[5]);
    p.seed = std::stoull(c[6]);
    p.held_out = c[7] == "1";
    corpus.speakers.push_back(p);
  }
  std::map<std::string, std::vector<int>> labels;
  for (const auto& p : corpus.speakers) {
    std::ifstream is(root / p.speaker_id / "labels.txt");
    if (!is) throw FormatError("missing labels for " + p.speaker_id);
    while (std::getline(is, line)) {
      std::istringstream ss(line);
      std::string id;
      ss >> id;
      std::vector<int> v;
      for (int l; ss >> l;) v.push_back(l);
      labels[id] = std::move(v);
    }
  }
  std::ifstream ut(root / "utterances.tsv");
  if (!ut) throw FormatError("missing utterances.tsv in " + root.string());
  std::getline(ut, line);
  while (std::getline(ut, line)) {
    if (line.empty()) continue;
    const auto c = split_tabs(line);
    if (c.size() != 5) throw FormatError("bad utterance row: " + line);
    Utterance u;
    u.utt_id = c[0];
    u.speaker_id = c[1];
    u.samples = read_waveform(root / u.speaker_id / (u.utt_id + ".synw"));
    auto it = labels.find(u.utt_id);
    if (it == labels.end()) throw FormatError("no labels for " + u.utt_id);
    u.frame_labels = it->second;
    corpus.utterances.push_back(std::move(u));
    corpus.splits.push_back(parse_split(c[2]));
  }
  return corpus;
}

MelSpectrogram mel_spectrogram(std::span<const double> samples,
                               const FrameSpec& spec) {
  spec.validate();
  const int n_frames = spec.frame_count(samples.size());
  if (samples.empty() || n_frames < 1)
    throw TooShortError(fmt::format("{} samples is shorter than one {} ms frame",
                                    samples.size(), spec.frame_length_ms));
  const int len = spec.frame_length_samples();
  const int hop = spec.hop_samples();
  // Window and filterbank depend only on the spec; cache the default one.
  thread_local FrameSpec cached_spec{};
  thread_local Matrix fb;
  thread_local std::vector<double> window;
  if (fb.size() == 0 || cached_spec.sample_rate != spec.sample_rate ||
      cached_spec.n_mels != spec.n_mels ||
      static_cast<int>(window.size()) != len) {
    fb = mel_filterbank(spec, kFftSize);
    window.resize(len);
    for (int i = 0; i < len; ++i)
      window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (len - 1));
    cached_spec = spec;
  }
  const FftPlan& plan = shared_plan();
  double* in = fftw_alloc_real(kFftSize);
  fftw_complex* out = fftw_alloc_complex(kFftSize / 2 + 1);
  const int bins = kFftSize / 2 + 1;
  Vector mag(bins);
  MelSpectrogram mel;
  mel.frame_spec = spec;
  mel.values.resize(spec.n_mels, n_frames);
  const double floor_amp = std::exp(spec.log_floor);
  for (int t = 0; t < n_frames; ++t) {
    const std::size_t off = static_cast<std::size_t>(t) * hop;
    for (int i = 0; i < kFftSize; ++i)
      in[i] = i < len ? samples[off + i] * window[i] : 0.0;
    fftw_execute_dft_r2c(plan.plan, in, out);
    for (int k = 0; k < bins; ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
    const Vector bands = fb * mag;
    for (int b = 0; b < spec.n_mels; ++b)
      mel.values(b, t) = bands[b] > floor_amp ? std::log(bands[b]) : spec.log_floor;
  }
  fftw_free(in);
  fftw_free(out);
  return mel;
}

Matrix add_deltas(const Matrix& c) {
  const Eigen::Index T = c.rows(), C = c.cols();
  Matrix out(T, 2 * C);
  out.leftCols(C) = c;
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index ch = 0; ch < C; ++ch) {
      double acc = 0.0;
      for (int n = 1; n <= 2; ++n) {
        const Eigen::Index fwd = std::min(t + n, T - 1);
        const Eigen::Index back = std::max<Eigen::Index>(t - n, 0);
        acc += n * (c(fwd, ch) - c(back, ch));
      }
      out(t, C + ch) = acc / 10.0;
    }
  }
  return out;
}

Matrix am_input_features(const MelSpectrogram& mel) {
  return add_deltas(mel.values.transpose());
}

Matrix am_input_features(const Utterance& utt, const FrameSpec& spec) {
  return am_input_features(mel_spectrogram(utt, spec));
}

}  // namespace stream_adapt
