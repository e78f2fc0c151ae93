// ivmap/tv.h

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

#ifndef IVMAP_TV_H_
#define IVMAP_TV_H_

#include <filesystem>
#include <string>
#include <vector>

#include "ivmap/common.h"
#include "ivmap/ubm.h"

namespace ivmap {

/// Zeroth / first order Baum-Welch statistics for one utterance.
struct SuffStats {
  std::string utterance_id;
  Vector zeroth;  // C, soft frame counts per component
  Matrix first;   // C x D, soft frame sums per component
  bool centered = false;  // UBM means already subtracted from `first`

  Eigen::Index NumComponents() const { return zeroth.size(); }
  Eigen::Index Dim() const { return first.cols(); }
};

/// Low-rank total variability matrix with the UBM context needed for
/// extraction (means for centering checks, covariances as the supervector
/// residual covariance).
struct TotalVariabilityModel {
  Matrix T;                             // (C*D) x R
  Matrix ubm_means;                     // C x D
  std::vector<Matrix> ubm_covariances;  // C of D x D
  bool diagonal_covariances = false;

  Eigen::Index NumComponents() const { return ubm_means.rows(); }
  Eigen::Index Dim() const { return ubm_means.cols(); }
  Eigen::Index Rank() const { return T.cols(); }
  Eigen::Block<const Matrix> ComponentBlock(Eigen::Index c) const {
    return T.block(c * Dim(), 0, Dim(), Rank());
  }
};

struct IVector {
  std::string utterance_id;
  Vector mean;                  // R
  Matrix posterior_covariance;  // R x R, or empty when not requested
};

/// Soft-count statistics over speech frames only (mask applied to both the
/// posterior rows and the frames).  Uses compensated summation so that stats
/// over a concatenation equal the sum of the parts to ~1e-12.
SuffStats AccumulateStats(const Matrix &posteriors,
                          const FeatureSequence &utterance,
                          const VadMask &mask);

/// F_c <- F_c - N_c * mu_c.  Rejects already-centered stats.
SuffStats CenterStats(const SuffStats &stats, const FullGmm &ubm);

struct TvTrainOptions {
  int rank = 64;
  int iters = 5;
  std::uint64_t seed = 0;
  double init_scale = 0.1;   // stddev of the Gaussian init of T
  double ridge = 1e-6;       // added to a singular per-component accumulator
};

struct TvTrainResult {
  TotalVariabilityModel model;
  // Marginal log-likelihood (up to a T-independent constant) at each E-step
  // plus once after the final update; non-decreasing under EM.
  std::vector<double> objectives;
  std::vector<std::string> warnings;
};

/// EM training of T with the UBM covariances held fixed.
TvTrainResult TrainTvEm(const std::vector<SuffStats> &centered_stats,
                        const FullGmm &ubm, const TvTrainOptions &opts);

/// MAP posterior of the i-vector: mean = L^{-1} T' Sigma^{-1} vec(F),
/// covariance = L^{-1} with L = I + sum_c N_c T_c' Sigma_c^{-1} T_c.
IVector ExtractIvector(const SuffStats &centered_stats,
                       const TotalVariabilityModel &model,
                       bool with_covariance = false);

/// Evaluates the same objective TrainTvEm reports, for a given model.
double TvObjective(const std::vector<SuffStats> &centered_stats,
                   const TotalVariabilityModel &model);

// ---- Archives ----

/// Named i-vector set; rows of `vectors` align with `ids`.
struct IvectorSet {
  std::vector<std::string> ids;
  Matrix vectors;  // N x R

  Eigen::Index Count() const { return vectors.rows(); }
  Eigen::Index Dim() const { return vectors.cols(); }
};

// Stats archive "STA1".
void SaveStatsArchive(const std::vector<SuffStats> &stats,
                      const std::filesystem::path &path);
std::vector<SuffStats> LoadStatsArchive(const std::filesystem::path &path);

// I-vector archive "IVX1" (means only; posterior covariances are not
// persisted).
void SaveIvectorSet(const IvectorSet &set, const std::filesystem::path &path);
IvectorSet LoadIvectorSet(const std::filesystem::path &path);

// TV model file "TVM1".
void SaveTvModel(const TotalVariabilityModel &model,
                 const std::filesystem::path &path);
TotalVariabilityModel LoadTvModel(const std::filesystem::path &path);

}  // namespace ivmap

#endif  // IVMAP_TV_H_
