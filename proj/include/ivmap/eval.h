// ivmap/eval.h

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

#ifndef IVMAP_EVAL_H_
#define IVMAP_EVAL_H_

#include <string>
#include <vector>

#include "ivmap/common.h"
#include "ivmap/tv.h"

namespace ivmap {

/// Parallel score/label arrays for a scored trial list.
struct ScoredTrials {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // nonzero = target

  std::size_t Count() const { return scores.size(); }
};

struct DcfParams {
  double c_miss = 10.0;
  double c_fa = 1.0;
  double p_target = 0.01;
};

/// One operating point of the threshold sweep.
struct DetPoint {
  double p_fa = 0.0;
  double p_miss = 0.0;
};

/// Equal error rate in [0, 1].  Thresholds are placed at midpoints between
/// distinct scores plus below-all / above-all endpoints (a decision accepts
/// when score > threshold); the EER is linearly interpolated between the
/// two adjacent operating points where P_miss crosses P_fa.  Equal scores
/// collapse into a single threshold.
double ComputeEer(const ScoredTrials &trials);

/// Minimum normalized detection cost over the same threshold sweep,
/// including the accept-all and reject-all endpoints.
double ComputeMinDcf(const ScoredTrials &trials, const DcfParams &params);

/// One (P_fa, P_miss) point per threshold, ordered by rising threshold
/// (P_fa non-increasing).
std::vector<DetPoint> DetPoints(const ScoredTrials &trials);

/// 100 * (baseline - current) / baseline.
double RelativeImprovement(double baseline_eer, double new_eer);

/// sigma_mean: mean over speakers of the average squared distance of a
/// speaker's vectors from their speaker mean.
double MeanVariance(const IvectorSet &ivectors,
                    const std::vector<std::string> &speakers);

/// Average squared Euclidean distance over (short, long) vector pairs
/// given as two row-aligned matrices.
double AverageSquaredDistance(const Matrix &a, const Matrix &b);

/// J = Tr((S_b + S_w)^{-1} S_b) with S_w the mean per-speaker covariance
/// and S_b the mean outer product of centered speaker means.  A relative
/// ridge is added when S_b + S_w is near-singular.
double JRatio(const IvectorSet &ivectors,
              const std::vector<std::string> &speakers);

}  // namespace ivmap

#endif  // IVMAP_EVAL_H_
