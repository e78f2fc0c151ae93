// tests/eval_test.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "ivmap/eval.h"
#include "test_util.h"

using namespace ivmap;

namespace {

ScoredTrials MakeTrials(std::vector<double> scores,
                        std::vector<std::uint8_t> labels) {
  ScoredTrials t;
  t.scores = std::move(scores);
  t.labels = std::move(labels);
  return t;
}

// Brute-force sweep shared by the EER and minDCF oracles: evaluates
// (P_fa, P_miss) at every midpoint threshold plus both endpoints by direct
// counting over all trials.
std::vector<DetPoint> BruteForcePoints(const ScoredTrials &trials) {
  std::set<double> distinct(trials.scores.begin(), trials.scores.end());
  std::vector<double> thresholds;
  thresholds.push_back(*distinct.begin() - 1.0);
  for (auto it = distinct.begin(); std::next(it) != distinct.end(); ++it)
    thresholds.push_back(0.5 * (*it + *std::next(it)));
  thresholds.push_back(*distinct.rbegin() + 1.0);

  double num_targets = 0, num_nontargets = 0;
  for (auto l : trials.labels) (l ? num_targets : num_nontargets) += 1.0;
  std::vector<DetPoint> points;
  for (double threshold : thresholds) {
    double miss = 0, fa = 0;
    for (std::size_t i = 0; i < trials.scores.size(); ++i) {
      bool accept = trials.scores[i] > threshold;
      if (trials.labels[i] && !accept) miss += 1.0;
      if (!trials.labels[i] && accept) fa += 1.0;
    }
    points.push_back({fa / num_nontargets, miss / num_targets});
  }
  return points;
}

double BruteForceEer(const ScoredTrials &trials) {
  std::vector<DetPoint> points = BruteForcePoints(trials);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    double d1 = points[i].p_miss - points[i].p_fa;
    double d2 = points[i + 1].p_miss - points[i + 1].p_fa;
    if (d1 > 0.0 || d2 < 0.0) continue;
    if (d1 == 0.0) return points[i].p_miss;
    double m1 = points[i].p_miss, f1 = points[i].p_fa;
    double m2 = points[i + 1].p_miss, f2 = points[i + 1].p_fa;
    double denom = (m2 - m1) - (f2 - f1);
    if (denom == 0.0) return points[i + 1].p_miss;
    double t = (f1 - m1) / denom;
    return m1 + t * (m2 - m1);
  }
  return 1.0;
}

double BruteForceMinDcf(const ScoredTrials &trials, const DcfParams &p) {
  double best = std::numeric_limits<double>::infinity();
  double norm = std::min(p.c_miss * p.p_target, p.c_fa * (1.0 - p.p_target));
  for (const DetPoint &point : BruteForcePoints(trials))
    best = std::min(best, (p.c_miss * point.p_miss * p.p_target +
                           p.c_fa * point.p_fa * (1.0 - p.p_target)) /
                              norm);
  return best;
}

ScoredTrials RandomTrials(int n, Rng *rng) {
  ScoredTrials t;
  for (int i = 0; i < n; ++i) {
    bool target = rng->Uniform() < 0.4;
    t.labels.push_back(target ? 1 : 0);
    t.scores.push_back(rng->Gaussian() + (target ? 0.8 : 0.0));
  }
  if (std::count(t.labels.begin(), t.labels.end(), 1) == 0) t.labels[0] = 1;
  if (std::count(t.labels.begin(), t.labels.end(), 0) ==
      static_cast<long>(t.labels.size()))
    t.labels[1] = 0;
  return t;
}

}  // namespace

TEST_CASE("EER: perfect separation, forced 0.5, and the n^2 sweep oracle") {
  CHECK(ComputeEer(MakeTrials({3.0, 4.0, 1.0, 2.0}, {1, 1, 0, 0})) == 0.0);
  // Scores {1,2,3,4} labeled T,N,T,N cross exactly at 0.5.
  CHECK(ComputeEer(MakeTrials({1.0, 2.0, 3.0, 4.0}, {1, 0, 1, 0})) ==
        doctest::Approx(0.5).epsilon(1e-15));
  Rng rng(1);
  for (int round = 0; round < 5; ++round) {
    ScoredTrials t = RandomTrials(200, &rng);
    CHECK(std::abs(ComputeEer(t) - BruteForceEer(t)) < 1e-12);
  }
}

TEST_CASE("EER handles tied scores as a single threshold") {
  ScoredTrials t = MakeTrials({1.0, 1.0, 1.0, 2.0, 2.0, 0.5},
                              {1, 0, 1, 1, 0, 0});
  CHECK(std::abs(ComputeEer(t) - BruteForceEer(t)) < 1e-12);
}

TEST_CASE("minDCF: perfect separation scores 0, always bounded by 1") {
  DcfParams dcf08{10.0, 1.0, 0.01};
  CHECK(ComputeMinDcf(MakeTrials({3.0, 1.0}, {1, 0}), dcf08) == 0.0);
  Rng rng(2);
  for (int round = 0; round < 5; ++round) {
    ScoredTrials t = RandomTrials(150, &rng);
    double dcf = ComputeMinDcf(t, dcf08);
    CHECK(dcf <= 1.0 + 1e-12);
    CHECK(std::abs(dcf - BruteForceMinDcf(t, dcf08)) < 1e-12);
    DcfParams dcf10{1.0, 1.0, 0.001};
    CHECK(std::abs(ComputeMinDcf(t, dcf10) - BruteForceMinDcf(t, dcf10)) <
          1e-12);
  }
}

TEST_CASE("metric preconditions: both classes required") {
  CHECK_THROWS_AS(ComputeEer(MakeTrials({1.0, 2.0}, {1, 1})), Error);
  CHECK_THROWS_AS(ComputeMinDcf(MakeTrials({1.0, 2.0}, {0, 0}), {}), Error);
  CHECK_THROWS_AS(DetPoints(MakeTrials({1.0}, {1})), Error);
}

TEST_CASE("DET points: enumerated two-trial case and monotonicity") {
  std::vector<DetPoint> points =
      DetPoints(MakeTrials({2.0, 1.0}, {1, 0}));  // target higher
  REQUIRE(points.size() == 3);
  CHECK(points[0].p_fa == 1.0);
  CHECK(points[0].p_miss == 0.0);
  CHECK(points[1].p_fa == 0.0);
  CHECK(points[1].p_miss == 0.0);
  CHECK(points[2].p_fa == 0.0);
  CHECK(points[2].p_miss == 1.0);

  Rng rng(3);
  ScoredTrials t = RandomTrials(100, &rng);
  std::vector<DetPoint> sweep = DetPoints(t);
  std::set<double> distinct(t.scores.begin(), t.scores.end());
  CHECK(sweep.size() <= distinct.size() + 1);
  for (std::size_t i = 1; i < sweep.size(); ++i)
    CHECK(sweep[i].p_fa <= sweep[i - 1].p_fa);
}

TEST_CASE("relative improvement reproduces the reference arithmetic") {
  CHECK(RelativeImprovement(12.2, 9.5) == doctest::Approx(22.13).epsilon(2e-4));
  CHECK(RelativeImprovement(10.2, 7.7) == doctest::Approx(24.51).epsilon(2e-4));
  CHECK(RelativeImprovement(7.5, 7.5) == 0.0);
  CHECK_THROWS_AS(RelativeImprovement(0.0, 1.0), Error);
}

TEST_CASE("sigma_mean: degenerate cases and the double-loop oracle") {
  IvectorSet identical;
  identical.ids = {"a", "b", "c", "d"};
  identical.vectors = Matrix::Ones(4, 3);
  CHECK(MeanVariance(identical, {"s1", "s1", "s2", "s2"}) == 0.0);

  IvectorSet pair;
  pair.ids = {"a", "b"};
  pair.vectors.resize(2, 2);
  pair.vectors << 1.0, 2.0, -1.0, -2.0;  // +-v, speaker mean at origin
  CHECK(MeanVariance(pair, {"s", "s"}) == doctest::Approx(5.0).epsilon(1e-15));

  Rng rng(4);
  IvectorSet random;
  std::vector<std::string> speakers;
  random.vectors = test::RandomMatrix(40, 5, &rng);
  for (int i = 0; i < 40; ++i) {
    random.ids.push_back(StrCat("u", i));
    speakers.push_back(StrCat("spk", i % 7));
  }
  double fast = MeanVariance(random, speakers);
  // Direct oracle.
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < 40; ++i) groups[speakers[static_cast<std::size_t>(i)]].push_back(i);
  double total = 0.0;
  for (const auto &[spk, rows] : groups) {
    Vector mean = Vector::Zero(5);
    for (int r : rows) mean += random.vectors.row(r).transpose();
    mean /= static_cast<double>(rows.size());
    double s = 0.0;
    for (int r : rows)
      s += (random.vectors.row(r).transpose() - mean).squaredNorm();
    total += s / static_cast<double>(rows.size());
  }
  CHECK(std::abs(fast - total / static_cast<double>(groups.size())) < 1e-10);
}

TEST_CASE("pair distance: trivial values and the direct oracle") {
  Matrix a = Matrix::Zero(1, 2), b = Matrix::Ones(1, 2);
  CHECK(AverageSquaredDistance(a, a) == 0.0);
  CHECK(AverageSquaredDistance(a, b) == 2.0);
  Rng rng(5);
  Matrix x = test::RandomMatrix(30, 4, &rng), y = test::RandomMatrix(30, 4, &rng);
  long double oracle = 0.0L;
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index d = 0; d < 4; ++d) {
      long double diff = static_cast<long double>(x(i, d)) - y(i, d);
      oracle += diff * diff;
    }
  oracle /= 30.0L;
  CHECK(std::abs(AverageSquaredDistance(x, y) - static_cast<double>(oracle)) <
        1e-12);
  CHECK_THROWS_AS(AverageSquaredDistance(Matrix(0, 2), Matrix(0, 2)), Error);
}

TEST_CASE("J-ratio: degenerate cases and the direct matrix oracle") {
  IvectorSet same_means;
  same_means.ids = {"a", "b", "c", "d"};
  same_means.vectors.resize(4, 2);
  same_means.vectors << 1, 0, -1, 0, 1, 0, -1, 0;  // both speaker means at 0
  CHECK(std::abs(JRatio(same_means, {"s1", "s1", "s2", "s2"})) < 1e-12);

  IvectorSet crisp;
  crisp.ids = {"a", "b", "c", "d"};
  crisp.vectors.resize(4, 3);
  crisp.vectors << 1, 2, 3, 1, 2, 3, -1, 0, 1, -1, 0, 1;  // zero within-class
  double j = JRatio(crisp, {"s1", "s1", "s2", "s2"});
  CHECK(j == doctest::Approx(1.0).epsilon(1e-6));  // rank(S_b) = 1

  Rng rng(6);
  IvectorSet random;
  std::vector<std::string> speakers;
  random.vectors = test::RandomMatrix(60, 4, &rng);
  for (int i = 0; i < 60; ++i) {
    random.ids.push_back(StrCat("u", i));
    speakers.push_back(StrCat("spk", i % 5));
  }
  double fast = JRatio(random, speakers);
  // Direct oracle with explicit inverse.
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < 60; ++i) groups[speakers[static_cast<std::size_t>(i)]].push_back(i);
  Matrix s_w = Matrix::Zero(4, 4);
  Matrix means(static_cast<Eigen::Index>(groups.size()), 4);
  Eigen::Index g = 0;
  for (const auto &[spk, rows] : groups) {
    Vector mean = Vector::Zero(4);
    for (int r : rows) mean += random.vectors.row(r).transpose();
    mean /= static_cast<double>(rows.size());
    means.row(g++) = mean.transpose();
    Matrix cov = Matrix::Zero(4, 4);
    for (int r : rows) {
      Vector d = random.vectors.row(r).transpose() - mean;
      cov += d * d.transpose();
    }
    s_w += cov / static_cast<double>(rows.size());
  }
  s_w /= static_cast<double>(groups.size());
  Vector overall = means.colwise().mean().transpose();
  Matrix s_b = Matrix::Zero(4, 4);
  for (Eigen::Index s = 0; s < means.rows(); ++s) {
    Vector d = means.row(s).transpose() - overall;
    s_b += d * d.transpose();
  }
  s_b /= static_cast<double>(means.rows());
  double oracle = ((s_b + s_w).inverse() * s_b).trace();
  CHECK(std::abs(fast - oracle) < 1e-8);

  CHECK_THROWS_AS(JRatio(same_means, {"s", "s", "s", "s"}), Error);
}

TEST_CASE("EER and minDCF are invariant under strictly increasing transforms") {
  Rng rng(7);
  ScoredTrials t = RandomTrials(120, &rng);
  double eer = ComputeEer(t);
  DcfParams dcf{10.0, 1.0, 0.01};
  double mindcf = ComputeMinDcf(t, dcf);
  ScoredTrials warped = t;
  for (auto &s : warped.scores) s = std::exp(s);
  CHECK(std::abs(ComputeEer(warped) - eer) < 1e-12);
  CHECK(std::abs(ComputeMinDcf(warped, dcf) - mindcf) < 1e-12);
}

TEST_CASE("scatter metrics are invariant under global translation / linear maps") {
  Rng rng(8);
  IvectorSet set;
  std::vector<std::string> speakers;
  set.vectors = test::RandomMatrix(50, 4, &rng);
  for (int i = 0; i < 50; ++i) {
    set.ids.push_back(StrCat("u", i));
    speakers.push_back(StrCat("spk", i % 6));
  }
  Vector shift = test::RandomVector(4, &rng, 3.0);
  IvectorSet moved = set;
  moved.vectors.rowwise() += shift.transpose();
  CHECK(std::abs(MeanVariance(moved, speakers) - MeanVariance(set, speakers)) <
        1e-10);

  Matrix other = test::RandomMatrix(50, 4, &rng);
  Matrix other_moved = other.rowwise() + shift.transpose();
  CHECK(std::abs(AverageSquaredDistance(set.vectors, other) -
                 AverageSquaredDistance(moved.vectors, other_moved)) < 1e-10);

  // J-ratio: translation plus a well-conditioned linear map.
  Matrix map = test::RandomSpd(4, &rng, 0.5);
  IvectorSet mapped = set;
  mapped.vectors = (set.vectors * map.transpose()).rowwise() + shift.transpose();
  CHECK(std::abs(JRatio(mapped, speakers) - JRatio(set, speakers)) < 1e-8);
}
