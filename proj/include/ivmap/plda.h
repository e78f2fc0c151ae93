// ivmap/plda.h

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

#ifndef IVMAP_PLDA_H_
#define IVMAP_PLDA_H_

#include <filesystem>
#include <string>
#include <vector>

#include "ivmap/common.h"
#include "ivmap/tv.h"

namespace ivmap {

/// I-vector preprocessing state: corpus mean subtraction, optional LDA
/// projection, then length normalization.
struct Preprocessing {
  Vector mean;  // input-space corpus mean
  Matrix lda;   // input_dim x out_dim, or empty when no LDA

  bool HasLda() const { return lda.size() > 0; }
  Eigen::Index OutputDim() const {
    return HasLda() ? lda.cols() : mean.size();
  }
};

/// Simplified G-PLDA: w = mean + U x + eps, x ~ N(0, I_Q),
/// eps ~ N(0, residual).
struct PldaModel {
  Vector mean;      // r, model-space
  Matrix between;   // U: R x Q
  Matrix residual;  // Sigma': R x R, SPD
  Preprocessing preprocessing;

  Eigen::Index Dim() const { return mean.size(); }
  Eigen::Index SpeakerRank() const { return between.cols(); }
};

struct Trial {
  std::string enroll_id;
  std::string test_id;
  bool target = false;
};

struct TrialSet {
  std::vector<Trial> trials;
};

/// Mean-subtract (fit: compute and store; apply: use stored), optionally
/// project with LDA, then scale to unit Euclidean norm.  Errors with
/// ZERO_VECTOR naming the utterance whose vector vanishes.
IvectorSet Preprocess(const IvectorSet &input, bool fit, Preprocessing *prep);

/// Fisher LDA: columns are the leading generalized eigenvectors of
/// (S_w, S_b); out_dim must not exceed min(dim, num_speakers - 1).
Matrix TrainLda(const IvectorSet &ivectors,
                const std::vector<std::string> &speakers, int out_dim,
                std::vector<std::string> *warnings = nullptr);

struct PldaTrainOptions {
  int speaker_rank = 32;  // Q
  int iters = 10;
  std::uint64_t seed = 0;
};

struct PldaTrainResult {
  PldaModel model;  // preprocessing left empty; caller fills it in
  // Exact marginal data log-likelihood per iteration plus a final value;
  // non-decreasing under EM.
  std::vector<double> log_likelihoods;
};

/// EM for the speaker factor model on already-preprocessed vectors.
PldaTrainResult TrainPldaEm(const IvectorSet &ivectors,
                            const std::vector<std::string> &speakers,
                            const PldaTrainOptions &opts);

/// Evaluates the same objective TrainPldaEm reports, for a given model.
double PldaLogLikelihood(const IvectorSet &ivectors,
                         const std::vector<std::string> &speakers,
                         const PldaModel &model);

/// Precomputed two-covariance LLR scorer.  Both vectors must already be
/// preprocessed with the model's stored preprocessing.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel &model);
  double Score(const Vector &enroll, const Vector &test) const;

 private:
  struct GaussianTerm {
    Matrix chol;     // lower Cholesky of the covariance
    double log_norm; // -0.5 (dim log 2pi + logdet)
    double LogDensity(const Vector &centered) const;
  };
  Vector mean_;
  GaussianTerm total_;     // U U' + Sigma'
  GaussianTerm sum_;       // U U' + Sigma' + U U' (rotated sum coordinate)
  GaussianTerm diff_;      // Sigma' (rotated difference coordinate)
};

/// Convenience wrapper constructing a scorer per call (tests, small jobs).
double ScoreLlr(const PldaModel &model, const Vector &enroll,
                const Vector &test);

// ---- Files ----

// PLDA model file "PLD1".
void SavePldaModel(const PldaModel &model, const std::filesystem::path &path);
PldaModel LoadPldaModel(const std::filesystem::path &path);

// Trial list: `enroll<TAB>test<TAB>target|nontarget` per line.
void SaveTrialSet(const TrialSet &trials, const std::filesystem::path &path);
TrialSet LoadTrialSet(const std::filesystem::path &path);

// Score file: `enroll<TAB>test<TAB>score` with 17 significant digits.
struct ScoredTrialFile {
  std::vector<Trial> trials;  // target flag not stored in score files
  std::vector<double> scores;
};
void SaveScoreFile(const std::vector<Trial> &trials,
                   const std::vector<double> &scores,
                   const std::filesystem::path &path);
ScoredTrialFile LoadScoreFile(const std::filesystem::path &path);

// LDA matrix file "LDA1".
void SaveLdaMatrix(const Matrix &lda, const std::filesystem::path &path);
Matrix LoadLdaMatrix(const std::filesystem::path &path);

// Labels file: `utterance_id<TAB>speaker_id` per line.
void SaveLabels(const std::vector<std::pair<std::string, std::string>> &labels,
                const std::filesystem::path &path);
std::vector<std::pair<std::string, std::string>> LoadLabels(
    const std::filesystem::path &path);

}  // namespace ivmap

#endif  // IVMAP_PLDA_H_
