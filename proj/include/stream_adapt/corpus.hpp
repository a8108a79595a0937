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

// Synthetic multi-speaker corpus and the mel filterbank frontend.
//
// Speakers are parameterized tone/noise sources. Every speaker's signal
// passes through the same "channel": a spectral tilt, additive noise and a
// final volume gain. Frame classes are formant patterns; pairs of classes
// share formant positions and differ only in formant slope, so the speaker's
// own tilt is confusable with class identity unless the speaker is known.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stream_adapt/types.hpp"

namespace stream_adapt {

struct FrameSpec {
  int sample_rate = 16000;
  double frame_length_ms = 25.0;
  double frame_hop_ms = 10.0;
  int n_mels = 40;
  double log_floor = -20.0;

  int frame_length_samples() const;
  int hop_samples() const;
  // 1 + floor((n - L) / H), or 0 when shorter than one frame.
  int frame_count(std::size_t n_samples) const;
  // Inverse of frame_count: the sample count that yields exactly n frames.
  std::size_t samples_for_frames(int n_frames) const;
  double frames_to_seconds(int n_frames) const;
  void validate() const;
};

struct SpeakerProfile {
  std::string speaker_id;
  int group_label = 0;  // 0 = mildest tier, groups-1 = severest
  double volume_gain = 1.0;
  double spectral_tilt = 0.0;  // dB per octave relative to 1 kHz
  double rate_factor = 1.0;
  double noise_floor = 0.0;
  std::uint64_t seed = 0;
  bool held_out = false;  // held-out speakers only appear in the test split
};

struct Utterance {
  std::string speaker_id;
  std::string utt_id;
  std::vector<double> samples;
  std::vector<int> frame_labels;
};

struct MelSpectrogram {
  Matrix values;  // n_mels x frames
  FrameSpec frame_spec;

  int channels() const { return static_cast<int>(values.rows()); }
  int frames() const { return static_cast<int>(values.cols()); }
};

struct TraitRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct CorpusConfig {
  int speakers = 30;
  int utts_per_speaker = 40;
  int classes = 10;
  int groups = 4;
  int held_out_speakers = 6;
  double test_fraction = 0.2;  // per held-in speaker
  TraitRange volume_gain{0.1, 1.0};
  TraitRange spectral_tilt{-10.0, 0.0};
  TraitRange rate_factor{0.8, 1.3};
  TraitRange noise_floor{0.002, 0.2};
  int segments_min = 6;
  int segments_max = 9;
  int segment_frames_min = 3;
  int segment_frames_max = 7;
  // Level of the speaker's broadband carrier relative to the formants.
  double carrier_level = 0.005;
  // Extra formant slope (dB/octave) separating the two members of a class pair.
  double class_slope = 3.0;
  FrameSpec frame_spec;

  void validate() const;
};

enum class Split { kTrain, kTest };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct Corpus {
  CorpusConfig config;
  std::uint64_t seed = 0;
  std::vector<SpeakerProfile> speakers;
  std::vector<Utterance> utterances;
  std::vector<Split> splits;  // parallel to utterances

  const SpeakerProfile& speaker(const std::string& id) const;
  std::vector<std::size_t> utterances_of(const std::string& speaker_id) const;
  double total_seconds() const;
};

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<SpeakerProfile> speakers;
  std::size_t utterance_count = 0;
};

// Severity tier from the two traits that carry it. Quieter and more strongly
// tilted speakers land in higher tiers.
int group_for_traits(double volume_gain, double spectral_tilt,
                     const CorpusConfig& cfg);

std::vector<SpeakerProfile> make_profiles(const CorpusConfig& cfg,
                                          std::uint64_t seed);

Utterance synthesize_utterance(const SpeakerProfile& profile,
                               const CorpusConfig& cfg, int utt_index);

Corpus synthesize_corpus(const CorpusConfig& cfg, std::uint64_t seed);

// On-disk layout: <root>/manifest.tsv, <root>/utterances.tsv,
// <root>/config.txt and one directory per speaker with <utt_id>.synw
// waveforms and labels.txt.
CorpusManifest write_corpus(const Corpus& corpus,
                            const std::filesystem::path& root);
CorpusManifest generate_corpus(const CorpusConfig& cfg, std::uint64_t seed,
                               const std::filesystem::path& root);
// Samples come back quantized to 16 bits.
Corpus read_corpus(const std::filesystem::path& root);

void write_waveform(const std::filesystem::path& path,
                    std::span<const double> samples, int sample_rate);
std::vector<double> read_waveform(const std::filesystem::path& path,
                                  int* sample_rate = nullptr);

MelSpectrogram mel_spectrogram(std::span<const double> samples,
                               const FrameSpec& spec);
inline MelSpectrogram mel_spectrogram(const Utterance& utt,
                                      const FrameSpec& spec) {
  return mel_spectrogram(utt.samples, spec);
}

// Triangular filters on the HTK mel scale, n_mels x (fft_size/2+1).
Matrix mel_filterbank(const FrameSpec& spec, int fft_size);
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Center frequency of mel band b (0-based).
double mel_band_center_hz(const FrameSpec& spec, int band);

// Per-frame log mel values followed by their deltas: frames x 2C.
Matrix add_deltas(const Matrix& fbank_frames_by_channels);
Matrix am_input_features(const Utterance& utt, const FrameSpec& spec);
Matrix am_input_features(const MelSpectrogram& mel);

}  // namespace stream_adapt
