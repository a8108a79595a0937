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

#include "stream_adapt/spectral_basis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stream_adapt/error.hpp"

namespace stream_adapt {

namespace {

constexpr int kMaxSweeps = 80;

// Hestenes one-sided Jacobi: rotates the columns of w (m x n, n <= m) until
// they are mutually orthogonal, accumulating the rotations into v (n x n).
void orthogonalize_columns(Matrix& w, Matrix& v) {
  const Eigen::Index n = w.cols();
  v = Matrix::Identity(n, n);
  const double eps = std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (auto* m : {&w, &v}) {
          for (Eigen::Index i = 0; i < m->rows(); ++i) {
            const double a = (*m)(i, p), b = (*m)(i, q);
            (*m)(i, p) = c * a - s * b;
            (*m)(i, q) = s * a + c * b;
          }
        }
      }
    }
    if (!rotated) break;
  }
}

// Normalizes columns with usable norm and completes the rest into an
// orthonormal set with Gram-Schmidt over the standard basis.
Matrix unit_columns(const Matrix& w, const Vector& sigma, double cutoff) {
  const Eigen::Index m = w.rows(), n = w.cols();
  Matrix u = Matrix::Zero(m, n);
  std::vector<bool> valid(n, false);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (sigma[j] > cutoff) {
      u.col(j) = w.col(j) / sigma[j];
      valid[j] = true;
    }
  }
  Eigen::Index probe = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (valid[j]) continue;
    while (probe < m) {
      Vector cand = Vector::Unit(m, probe++);
      for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index k = 0; k < n; ++k)
          if (valid[k]) cand -= u.col(k).dot(cand) * u.col(k);
      const double norm = cand.norm();
      if (norm > 0.5) {
        u.col(j) = cand / norm;
        valid[j] = true;
        break;
      }
    }
  }
  return u;
}

}  // namespace

Matrix SpectralDecomposition::reconstruct() const {
  return left_vectors * singular_values.asDiagonal() * right_vectors;
}

SpectralDecomposition svd_decompose(const Matrix& a) {
  if (a.rows() < 1 || a.cols() < 1)
    throw DimensionError("svd_decompose needs a non-empty matrix");
  if (!a.allFinite()) throw NumericError("svd_decompose: non-finite input");
  const bool tall = a.rows() >= a.cols();
  Matrix w = tall ? a : Matrix(a.transpose());
  Matrix v;
  orthogonalize_columns(w, v);
  const Eigen::Index r = w.cols();

  Vector sigma(r);
  for (Eigen::Index j = 0; j < r; ++j) sigma[j] = w.col(j).norm();
  std::vector<Eigen::Index> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto x, auto y) { return sigma[x] > sigma[y]; });
  Matrix ws(w.rows(), r), vs(v.rows(), r);
  Vector ss(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    ws.col(j) = w.col(order[j]);
    vs.col(j) = v.col(order[j]);
    ss[j] = sigma[order[j]];
  }
  const double cutoff =
      std::max(ss.size() ? ss[0] : 0.0, 1.0) * 1e-13 * static_cast<double>(w.rows());
  const Matrix units = unit_columns(ws, ss, cutoff);

  SpectralDecomposition dec;
  dec.singular_values = ss;
  if (tall) {
    dec.left_vectors = units;
    dec.right_vectors = vs.transpose();
  } else {
    dec.left_vectors = vs;
    dec.right_vectors = units.transpose();
  }
  for (Eigen::Index j = 0; j < r; ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < dec.left_vectors.rows(); ++i) {
      const double mag = std::abs(dec.left_vectors(i, j));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (dec.left_vectors(arg, j) < 0.0) {
      dec.left_vectors.col(j) *= -1.0;
      dec.right_vectors.row(j) *= -1.0;
    }
  }
  return dec;
}

SpectralBasisFeature select_top_bases(const SpectralDecomposition& dec, int d) {
  const auto c = static_cast<int>(dec.left_vectors.rows());
  if (d < 1 || d > c)
    throw ConfigError(fmt::format("basis count d={} must lie in [1, {}]", d, c));
  SpectralBasisFeature f;
  f.d = d;
  f.values = Vector::Zero(static_cast<Eigen::Index>(d) * c);
  const int available = std::min<int>(d, static_cast<int>(dec.left_vectors.cols()));
  for (int j = 0; j < available; ++j)
    f.values.segment(static_cast<Eigen::Index>(j) * c, c) = dec.left_vectors.col(j);
  f.end_frame = static_cast<int>(dec.right_vectors.cols());
  return f;
}

int SlidingWindowSpec::width_frames(const FrameSpec& fs) const {
  if (!width_ms) return 0;
  return std::max(1, static_cast<int>(std::lround(*width_ms / fs.frame_hop_ms)));
}

int SlidingWindowSpec::hop_frames(const FrameSpec& fs) const {
  if (!hop_ms) return width_frames(fs);
  return std::max(1, static_cast<int>(std::lround(*hop_ms / fs.frame_hop_ms)));
}

void SlidingWindowSpec::validate(const FrameSpec& fs) const {
  if (width_ms && *width_ms < fs.frame_hop_ms)
    throw ConfigError(fmt::format("window width {} ms is below the {} ms frame hop",
                                  *width_ms, fs.frame_hop_ms));
  if (hop_ms && *hop_ms < fs.frame_hop_ms)
    throw ConfigError(fmt::format("window hop {} ms is below the {} ms frame hop",
                                  *hop_ms, fs.frame_hop_ms));
  if (!width_ms && hop_ms)
    throw ConfigError("whole-utterance window cannot carry a hop");
}

std::string SlidingWindowSpec::label() const {
  if (!width_ms) return "utt";
  std::string s = fmt::format("{}", *width_ms);
  if (hop_ms) s += fmt::format("h{}", *hop_ms);
  return s;
}

SlidingWindowSpec SlidingWindowSpec::parse(const std::string& label) {
  if (label == "utt" || label == "whole") return whole_utterance();
  try {
    const auto h = label.find('h');
    if (h == std::string::npos) return of_ms(std::stod(label));
    return of_ms(std::stod(label.substr(0, h)), std::stod(label.substr(h + 1)));
  } catch (const std::exception&) {
    throw ConfigError("bad window label '" + label + "'");
  }
}

StreamingBasisExtractor::StreamingBasisExtractor(SlidingWindowSpec window, int d,
                                                 FrameSpec frame_spec)
    : window_(window), d_(d) {
  window_.validate(frame_spec);
  if (d < 1 || d > frame_spec.n_mels)
    throw ConfigError(fmt::format("basis count d={} must lie in [1, {}]", d,
                                  frame_spec.n_mels));
  width_ = window_.width_frames(frame_spec);
  hop_ = window_.hop_frames(frame_spec);
}

SpectralBasisFeature StreamingBasisExtractor::emit_buffer() {
  Matrix block(buffer_.front().size(), static_cast<Eigen::Index>(buffer_.size()));
  for (std::size_t i = 0; i < buffer_.size(); ++i)
    block.col(static_cast<Eigen::Index>(i)) = buffer_[i];
  auto f = select_top_bases(svd_decompose(block), d_);
  f.start_frame = buffer_start_;
  f.end_frame = buffer_start_ + static_cast<int>(buffer_.size());
  ++emitted_;
  return f;
}

std::optional<SpectralBasisFeature> StreamingBasisExtractor::push(
    const Eigen::Ref<const Vector>& frame) {
  if (!buffer_.empty() && frame.size() != buffer_.front().size())
    throw DimensionError("streamed frame width changed mid-utterance");
  ++frames_seen_;
  buffer_.emplace_back(frame);
  if (window_.is_whole_utterance()) return std::nullopt;
  if (static_cast<int>(buffer_.size()) < width_) return std::nullopt;
  auto f = emit_buffer();
  for (int i = 0; i < hop_ && !buffer_.empty(); ++i) {
    buffer_.pop_front();
    ++buffer_start_;
  }
  return f;
}

std::optional<SpectralBasisFeature> StreamingBasisExtractor::finish() {
  if (buffer_.empty()) return std::nullopt;
  if (window_.is_whole_utterance() || emitted_ == 0) {
    auto f = emit_buffer();
    buffer_.clear();
    return f;
  }
  return std::nullopt;
}

std::vector<SpectralBasisFeature> streaming_extract(const MelSpectrogram& mel,
                                                    const SlidingWindowSpec& window,
                                                    int d) {
  StreamingBasisExtractor ex(window, d, mel.frame_spec);
  std::vector<SpectralBasisFeature> out;
  for (int t = 0; t < mel.frames(); ++t)
    if (auto f = ex.push(mel.values.col(t))) out.push_back(std::move(*f));
  if (auto f = ex.finish()) out.push_back(std::move(*f));
  return out;
}

int feature_index_for_frame(int t, int hop_frames, int n_features) {
  if (n_features <= 0) throw DimensionError("no streamed features available");
  if (hop_frames <= 0) return 0;
  return std::min(t / hop_frames, n_features - 1);
}

}  // namespace stream_adapt
