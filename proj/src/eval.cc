// ivmap/eval.cc

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

#include "ivmap/eval.h"

#include <algorithm>
#include <map>
#include <numeric>

namespace ivmap {

namespace {

void CheckBothClasses(const ScoredTrials &trials) {
  if (trials.scores.size() != trials.labels.size())
    throw Error(err::kDimension, "score/label arrays differ in length");
  std::size_t targets = 0;
  for (auto l : trials.labels) targets += (l != 0);
  if (targets == 0 || targets == trials.labels.size())
    throw Error(err::kMetricOneClass,
                "need at least one target and one nontarget trial");
  for (double s : trials.scores)
    if (!std::isfinite(s))
      throw Error(err::kNonFinite, "non-finite trial score");
}

// Operating points for thresholds below all scores and at each midpoint
// between distinct scores; the last entry is the reject-all point.
std::vector<DetPoint> SweepPoints(const ScoredTrials &trials) {
  std::size_t n = trials.Count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return trials.scores[a] < trials.scores[b];
  });
  double num_targets = 0, num_nontargets = 0;
  for (auto l : trials.labels) (l ? num_targets : num_nontargets) += 1.0;

  std::vector<DetPoint> points;
  points.push_back({1.0, 0.0});  // accept everything
  double targets_below = 0, nontargets_below = 0;
  std::size_t i = 0;
  while (i < n) {
    double score = trials.scores[order[i]];
    // Consume the whole tie group: equal scores share one threshold.
    while (i < n && trials.scores[order[i]] == score) {
      (trials.labels[order[i]] ? targets_below : nontargets_below) += 1.0;
      ++i;
    }
    points.push_back({(num_nontargets - nontargets_below) / num_nontargets,
                      targets_below / num_targets});
  }
  return points;
}

}  // namespace

double ComputeEer(const ScoredTrials &trials) {
  CheckBothClasses(trials);
  std::vector<DetPoint> points = SweepPoints(trials);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    double diff1 = points[i].p_miss - points[i].p_fa;
    double diff2 = points[i + 1].p_miss - points[i + 1].p_fa;
    if (diff1 > 0.0) continue;  // already past the crossing
    if (diff2 < 0.0) continue;
    if (diff1 == 0.0) return points[i].p_miss;
    // diff1 < 0 <= diff2: interpolate along the segment.
    double m1 = points[i].p_miss, f1 = points[i].p_fa;
    double m2 = points[i + 1].p_miss, f2 = points[i + 1].p_fa;
    double denom = (m2 - m1) - (f2 - f1);
    if (denom == 0.0) return points[i + 1].p_miss;
    double t = (f1 - m1) / denom;
    return m1 + t * (m2 - m1);
  }
  return points.back().p_miss - points.back().p_fa == 0.0
             ? points.back().p_miss
             : points.back().p_fa;  // unreachable for two-class input
}

double ComputeMinDcf(const ScoredTrials &trials, const DcfParams &params) {
  CheckBothClasses(trials);
  if (params.p_target <= 0.0 || params.p_target >= 1.0 ||
      params.c_miss <= 0.0 || params.c_fa <= 0.0)
    throw Error(err::kPrecondition, "invalid DCF parameters");
  double norm = std::min(params.c_miss * params.p_target,
                         params.c_fa * (1.0 - params.p_target));
  double best = std::numeric_limits<double>::infinity();
  for (const DetPoint &p : SweepPoints(trials)) {
    double cost = params.c_miss * p.p_miss * params.p_target +
                  params.c_fa * p.p_fa * (1.0 - params.p_target);
    best = std::min(best, cost / norm);
  }
  return best;
}

std::vector<DetPoint> DetPoints(const ScoredTrials &trials) {
  CheckBothClasses(trials);
  return SweepPoints(trials);
}

double RelativeImprovement(double baseline_eer, double new_eer) {
  if (baseline_eer <= 0.0)
    throw Error(err::kPrecondition, "baseline EER must be positive");
  return 100.0 * (baseline_eer - new_eer) / baseline_eer;
}

double MeanVariance(const IvectorSet &ivectors,
                    const std::vector<std::string> &speakers) {
  if (ivectors.Count() == 0) throw Error(err::kEmpty, "no i-vectors supplied");
  if (static_cast<Eigen::Index>(speakers.size()) != ivectors.Count())
    throw Error(err::kDimension, "speaker labels do not match i-vector count");
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < ivectors.Count(); ++i)
    groups[speakers[static_cast<std::size_t>(i)]].push_back(i);
  double total = 0.0;
  for (const auto &[speaker, rows] : groups) {
    Vector mean = Vector::Zero(ivectors.Dim());
    for (Eigen::Index r : rows) mean += ivectors.vectors.row(r).transpose();
    mean /= static_cast<double>(rows.size());
    double scatter = 0.0;
    for (Eigen::Index r : rows)
      scatter += (ivectors.vectors.row(r).transpose() - mean).squaredNorm();
    total += scatter / static_cast<double>(rows.size());
  }
  return total / static_cast<double>(groups.size());
}

double AverageSquaredDistance(const Matrix &a, const Matrix &b) {
  if (a.rows() == 0) throw Error(err::kEmpty, "no vector pairs supplied");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(err::kDimension, "paired matrices differ in shape");
  return (a - b).rowwise().squaredNorm().mean();
}

double JRatio(const IvectorSet &ivectors,
              const std::vector<std::string> &speakers) {
  if (static_cast<Eigen::Index>(speakers.size()) != ivectors.Count())
    throw Error(err::kDimension, "speaker labels do not match i-vector count");
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < ivectors.Count(); ++i)
    groups[speakers[static_cast<std::size_t>(i)]].push_back(i);
  if (groups.size() < 2)
    throw Error(err::kSingleSpeaker, "J-ratio needs at least 2 speakers");
  Eigen::Index dim = ivectors.Dim();
  double num_speakers = static_cast<double>(groups.size());

  Matrix within = Matrix::Zero(dim, dim);
  Matrix speaker_means(static_cast<Eigen::Index>(groups.size()), dim);
  Eigen::Index g = 0;
  for (const auto &[speaker, rows] : groups) {
    Vector mean = Vector::Zero(dim);
    for (Eigen::Index r : rows) mean += ivectors.vectors.row(r).transpose();
    mean /= static_cast<double>(rows.size());
    speaker_means.row(g++) = mean.transpose();
    Matrix cov = Matrix::Zero(dim, dim);
    for (Eigen::Index r : rows) {
      Vector d = ivectors.vectors.row(r).transpose() - mean;
      cov += d * d.transpose();
    }
    within += cov / static_cast<double>(rows.size());
  }
  within /= num_speakers;
  Vector overall = speaker_means.colwise().mean().transpose();
  Matrix between = Matrix::Zero(dim, dim);
  for (Eigen::Index s = 0; s < speaker_means.rows(); ++s) {
    Vector d = speaker_means.row(s).transpose() - overall;
    between += d * d.transpose();
  }
  between /= num_speakers;

  Matrix total = between + within;
  double trace = total.trace();
  if (trace <= 0.0) return 0.0;  // all vectors identical: S_b = 0
  Eigen::SelfAdjointEigenSolver<Matrix> eig(total);
  if (eig.eigenvalues().minCoeff() <= 1e-12 * eig.eigenvalues().maxCoeff())
    total += (1e-8 * trace / static_cast<double>(dim)) *
             Matrix::Identity(dim, dim);
  Eigen::LDLT<Matrix> ldlt(total);
  return ldlt.solve(between).trace();
}

}  // namespace ivmap
