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

// Spectral subspace decomposition of log mel spectrograms and the spectral
// basis features derived from it.

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "stream_adapt/corpus.hpp"
#include "stream_adapt/types.hpp"

namespace stream_adapt {

// Thin SVD O = U diag(s) V^T with r = min(C, T).
struct SpectralDecomposition {
  Matrix left_vectors;    // C x r, orthonormal columns (spectral bases)
  Vector singular_values;  // r, nonincreasing, >= 0
  Matrix right_vectors;   // r x T (rows are temporal bases)

  int rank_bound() const { return static_cast<int>(singular_values.size()); }
  Matrix reconstruct() const;
};

// One-sided Jacobi SVD. Each left vector is sign-normalized so that its
// largest-magnitude entry (lowest index on ties) is nonnegative; the paired
// right vector flips with it. Throws NumericError on non-finite input.
SpectralDecomposition svd_decompose(const Matrix& spectrogram);
inline SpectralDecomposition svd_decompose(const MelSpectrogram& mel) {
  return svd_decompose(mel.values);
}

struct SpectralBasisFeature {
  Vector values;  // d*C: basis 1 fully, then basis 2, ...
  int d = 0;
  int start_frame = 0;  // window span [start_frame, end_frame)
  int end_frame = 0;
};

// Flattens the top d spectral bases. Columns beyond the decomposition rank
// bound are zero. Requires 1 <= d <= C.
SpectralBasisFeature select_top_bases(const SpectralDecomposition& dec, int d);

struct SlidingWindowSpec {
  // Width in ms; nullopt means the whole utterance.
  std::optional<double> width_ms;
  // Hop in ms; nullopt means hop = width.
  std::optional<double> hop_ms;

  static SlidingWindowSpec whole_utterance() { return {}; }
  static SlidingWindowSpec of_ms(double width, std::optional<double> hop = {}) {
    return {width, hop};
  }
  bool is_whole_utterance() const { return !width_ms.has_value(); }
  int width_frames(const FrameSpec& fs) const;
  int hop_frames(const FrameSpec& fs) const;
  void validate(const FrameSpec& fs) const;
  // "utt" or the width in ms, e.g. "10".
  std::string label() const;
  static SlidingWindowSpec parse(const std::string& label);
};

// Causal sliding-window extractor for a single utterance. Frames are pushed
// in time order; a feature is produced whenever a window fills.
class StreamingBasisExtractor {
 public:
  StreamingBasisExtractor(SlidingWindowSpec window, int d, FrameSpec frame_spec);

  std::optional<SpectralBasisFeature> push(const Eigen::Ref<const Vector>& frame);
  // Flushes at end of stream. Emits the whole-utterance feature, or a single
  // partial-window feature if no window ever filled; otherwise nothing.
  std::optional<SpectralBasisFeature> finish();

  int frames_seen() const { return frames_seen_; }
  int features_emitted() const { return emitted_; }

 private:
  SpectralBasisFeature emit_buffer();

  SlidingWindowSpec window_;
  int d_;
  int width_ = 0;
  int hop_ = 0;
  std::deque<Vector> buffer_;
  int buffer_start_ = 0;
  int frames_seen_ = 0;
  int emitted_ = 0;
};

std::vector<SpectralBasisFeature> streaming_extract(const MelSpectrogram& mel,
                                                    const SlidingWindowSpec& window,
                                                    int d);

// Which streamed feature covers frame t: the latest window that starts at or
// before t.
int feature_index_for_frame(int t, int hop_frames, int n_features);

}  // namespace stream_adapt
