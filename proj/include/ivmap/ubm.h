// ivmap/ubm.h

// Copyright 2026  ivmap authors

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

#ifndef IVMAP_UBM_H_
#define IVMAP_UBM_H_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ivmap/common.h"

namespace ivmap {

/// One utterance worth of acoustic feature frames (rows) with optional
/// per-frame energies for voice activity detection.
struct FeatureSequence {
  std::string utterance_id;
  Matrix frames;    // T x D
  Vector energies;  // T entries, or empty when absent

  Eigen::Index NumFrames() const { return frames.rows(); }
  Eigen::Index Dim() const { return frames.cols(); }
  bool HasEnergies() const { return energies.size() == frames.rows(); }
};

/// Per-frame speech/non-speech decisions for one utterance.
struct VadMask {
  std::vector<std::uint8_t> speech;  // length T, nonzero = speech frame

  Eigen::Index NumFrames() const {
    return static_cast<Eigen::Index>(speech.size());
  }
  Eigen::Index NumSpeechFrames() const {
    Eigen::Index n = 0;
    for (auto s : speech) n += (s != 0);
    return n;
  }
  static VadMask AllSpeech(Eigen::Index num_frames) {
    VadMask m;
    m.speech.assign(static_cast<std::size_t>(num_frames), 1);
    return m;
  }
};

/// Gaussian mixture with full (or diagonal-restricted) covariances.
struct FullGmm {
  Vector weights;                   // C, sums to 1
  Matrix means;                     // C x D
  std::vector<Matrix> covariances;  // C matrices D x D
  bool diagonal = false;            // covariances restricted to diagonal

  Eigen::Index NumComponents() const { return weights.size(); }
  Eigen::Index Dim() const { return means.cols(); }
  /// Checks weight normalization and covariance positive definiteness.
  void Validate(double eigenvalue_floor = 0.0) const;
};

/// Frame-level component posteriors for a set of utterances, in a fixed
/// utterance order.  The source tag records where the alignments came from:
/// the trained GMM itself, an external senone classifier, or the synthetic
/// provider used in tests.
struct PosteriorArchive {
  enum class Source : std::uint8_t { kGmm = 0, kExternalSenone = 1, kSynthetic = 2 };

  Source source = Source::kGmm;
  std::vector<std::string> utterance_ids;
  std::vector<Matrix> posteriors;  // per utterance: T x C, rows sum to 1

  const Matrix &Find(const std::string &utterance_id) const;
  bool Has(const std::string &utterance_id) const;
};

struct GmmTrainOptions {
  int num_components = 64;
  int diag_iters = 4;  // diagonal-covariance EM iterations, then
  int full_iters = 4;  // full-covariance EM iterations
  std::uint64_t seed = 0;
  // Covariance eigenvalue floor = floor_scale x mean per-dimension variance
  // of the training data.
  double floor_scale = 1e-4;
  int kmeans_rounds = 5;
};

struct GmmTrainResult {
  FullGmm gmm;
  // Total data log-likelihood evaluated at each E-step plus once after the
  // final M-step; non-decreasing within relative slack 1e-8.
  std::vector<double> log_likelihoods;
  std::vector<std::string> warnings;
  double covariance_floor = 0.0;  // the absolute floor that was applied
};

/// Trains the UBM with k-means seeding followed by diagonal-covariance EM
/// and then full-covariance EM.  Deterministic for a given seed.
GmmTrainResult TrainGmmEm(const std::vector<FeatureSequence> &corpus,
                          const GmmTrainOptions &opts);

/// Per-frame component posteriors (T x C, rows sum to 1), computed in the
/// log domain with log-sum-exp normalization.
Matrix GmmPosteriors(const FullGmm &gmm, const FeatureSequence &utterance);

/// Total log-likelihood of all frames under the mixture.
double GmmLogLikelihood(const FullGmm &gmm,
                        const std::vector<FeatureSequence> &corpus);

/// Energy-based VAD: speech iff energy > threshold_fraction x mean energy.
VadMask EnergyVad(const FeatureSequence &utterance, double threshold_fraction);

// ---- File formats (see README for byte-level layout) ----

// Feature archive "FEA1": f32 frames and optional energies per record.
void SaveFeatureArchive(const std::vector<FeatureSequence> &utterances,
                        const std::filesystem::path &path);
std::vector<FeatureSequence> LoadFeatureArchive(
    const std::filesystem::path &path);

// Posterior archive "POS1": f32 rows; row sums validated on load.
void SavePosteriorArchive(const PosteriorArchive &archive,
                          const std::filesystem::path &path);
PosteriorArchive LoadPosteriorArchive(const std::filesystem::path &path);

// GMM model file "GMM1": f64 parameters.
void SaveGmm(const FullGmm &gmm, const std::filesystem::path &path);
FullGmm LoadGmm(const std::filesystem::path &path);

}  // namespace ivmap

#endif  // IVMAP_UBM_H_
