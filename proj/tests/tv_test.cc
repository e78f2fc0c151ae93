// tests/tv_test.cc

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

#include <functional>

#include "ivmap/corpus.h"
#include "ivmap/tv.h"
#include "ivmap/ubm.h"
#include "test_util.h"

using namespace ivmap;

namespace {

FeatureSequence MakeUtterance(const std::string &id, const Matrix &frames) {
  FeatureSequence utt;
  utt.utterance_id = id;
  utt.frames = frames;
  return utt;
}

// Frame-level auxiliary objective for a candidate i-vector w:
//   sum_t sum_c gamma_tc log N(y_t; mu_c + T_c w, Sigma_c) - 0.5 ||w||^2.
// Built directly from frames and posteriors; never forms N/F statistics.
double PosteriorObjective(const Matrix &frames, const Matrix &posteriors,
                          const FullGmm &gmm, const Matrix &T,
                          const Vector &w) {
  Eigen::Index C = gmm.NumComponents(), D = gmm.Dim();
  double total = -0.5 * w.squaredNorm();
  for (Eigen::Index c = 0; c < C; ++c) {
    Matrix cov = gmm.covariances[static_cast<std::size_t>(c)];
    Eigen::LLT<Matrix> llt(cov);
    double logdet = 0.0;
    Matrix l = llt.matrixL();
    for (Eigen::Index d = 0; d < D; ++d) logdet += 2.0 * std::log(l(d, d));
    double lognorm =
        -0.5 * (static_cast<double>(D) * std::log(2.0 * M_PI) + logdet);
    Vector shifted_mean =
        gmm.means.row(c).transpose() + T.block(c * D, 0, D, T.cols()) * w;
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
      Vector diff = frames.row(t).transpose() - shifted_mean;
      double quad = llt.matrixL().solve(diff).squaredNorm();
      total += posteriors(t, c) * (lognorm - 0.5 * quad);
    }
  }
  return total;
}

// Newton ascent with finite-difference gradient and Hessian.  The objective
// is exactly quadratic in w, so central differences are exact up to
// round-off and a few steps converge.
Vector MaximizeByNewton(const std::function<double(const Vector &)> &f,
                        Eigen::Index dim) {
  Vector w = Vector::Zero(dim);
  double h = 1e-4;
  for (int step = 0; step < 4; ++step) {
    Vector grad(dim);
    Matrix hess(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      Vector ei = Vector::Zero(dim);
      ei[i] = h;
      grad[i] = (f(w + ei) - f(w - ei)) / (2.0 * h);
      for (Eigen::Index j = 0; j <= i; ++j) {
        Vector ej = Vector::Zero(dim);
        ej[j] = h;
        double fpp = f(w + ei + ej), fpm = f(w + ei - ej);
        double fmp = f(w - ei + ej), fmm = f(w - ei - ej);
        hess(i, j) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
        hess(j, i) = hess(i, j);
      }
    }
    w -= hess.ldlt().solve(grad);
  }
  return w;
}

void CheckMonotone(const std::vector<double> &values, double rel_slack) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    double slack = rel_slack * std::abs(values[i - 1]);
    CHECK(values[i] >= values[i - 1] - slack);
  }
}

}  // namespace

TEST_CASE("stats: single component sums frames; all-false mask zeroes") {
  Matrix frames(3, 2);
  frames << 1, 2, 3, 4, 5, 6;
  Matrix posteriors = Matrix::Ones(3, 1);
  auto utt = MakeUtterance("u", frames);
  SuffStats stats = AccumulateStats(posteriors, utt, VadMask::AllSpeech(3));
  CHECK(stats.zeroth[0] == 3.0);
  CHECK(stats.first(0, 0) == 9.0);
  CHECK(stats.first(0, 1) == 12.0);
  CHECK_FALSE(stats.centered);

  VadMask none;
  none.speech = {0, 0, 0};
  SuffStats zero = AccumulateStats(posteriors, utt, none);
  CHECK(zero.zeroth[0] == 0.0);
  CHECK(zero.first.isZero(0.0));
}

TEST_CASE("stats match the extended-precision double-loop oracle") {
  Rng rng(12);
  Eigen::Index T = 20, C = 4, D = 3;
  Matrix frames = test::RandomMatrix(T, D, &rng, 2.0);
  Matrix posteriors(T, C);
  for (Eigen::Index t = 0; t < T; ++t) {
    Vector row = test::RandomVector(C, &rng).cwiseAbs();
    posteriors.row(t) = (row / row.sum()).transpose();
  }
  VadMask mask;
  for (Eigen::Index t = 0; t < T; ++t)
    mask.speech.push_back(rng.Uniform() < 0.7 ? 1 : 0);
  SuffStats stats =
      AccumulateStats(posteriors, MakeUtterance("u", frames), mask);

  long double n_oracle[4] = {0, 0, 0, 0};
  long double f_oracle[4][3] = {};
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!mask.speech[static_cast<std::size_t>(t)]) continue;
    for (Eigen::Index c = 0; c < C; ++c) {
      n_oracle[c] += static_cast<long double>(posteriors(t, c));
      for (Eigen::Index d = 0; d < D; ++d)
        f_oracle[c][d] += static_cast<long double>(posteriors(t, c)) *
                          static_cast<long double>(frames(t, d));
    }
  }
  for (Eigen::Index c = 0; c < C; ++c) {
    CHECK(std::abs(stats.zeroth[c] - static_cast<double>(n_oracle[c])) < 1e-12);
    for (Eigen::Index d = 0; d < D; ++d)
      CHECK(std::abs(stats.first(c, d) - static_cast<double>(f_oracle[c][d])) <
            1e-12);
  }
}

TEST_CASE("stats are additive over disjoint frame splits") {
  Rng rng(13);
  Eigen::Index T = 60, C = 3, D = 4;
  Matrix frames = test::RandomMatrix(T, D, &rng);
  Matrix posteriors(T, C);
  for (Eigen::Index t = 0; t < T; ++t) {
    Vector row = test::RandomVector(C, &rng).cwiseAbs();
    posteriors.row(t) = (row / row.sum()).transpose();
  }
  auto whole = AccumulateStats(posteriors, MakeUtterance("u", frames),
                               VadMask::AllSpeech(T));
  auto first = AccumulateStats(posteriors.topRows(25),
                               MakeUtterance("a", frames.topRows(25)),
                               VadMask::AllSpeech(25));
  auto second = AccumulateStats(posteriors.bottomRows(35),
                                MakeUtterance("b", frames.bottomRows(35)),
                                VadMask::AllSpeech(35));
  CHECK((whole.zeroth - first.zeroth - second.zeroth)
            .lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((whole.first - first.first - second.first).lpNorm<Eigen::Infinity>() <
        1e-12);
}

TEST_CASE("centering subtracts occupancy-weighted means once") {
  FullGmm ubm;
  ubm.weights = Vector::Ones(1);
  ubm.means = Matrix::Constant(1, 2, 1.0);
  ubm.covariances = {Matrix::Identity(2, 2)};

  SuffStats zero;
  zero.utterance_id = "z";
  zero.zeroth = Vector::Zero(1);
  zero.first = Matrix::Zero(1, 2);
  SuffStats centered_zero = CenterStats(zero, ubm);
  CHECK(centered_zero.first.isZero(0.0));
  CHECK(centered_zero.centered);

  SuffStats stats;
  stats.utterance_id = "s";
  stats.zeroth = Vector::Constant(1, 2.0);
  stats.first = Matrix::Constant(1, 2, 4.0);
  SuffStats centered = CenterStats(stats, ubm);
  CHECK(centered.first(0, 0) == 2.0);
  CHECK(centered.first(0, 1) == 2.0);
  CHECK_THROWS_WITH_AS(CenterStats(centered, ubm),
                       doctest::Contains("already centered"), Error);

  Rng rng(3);
  SuffStats random;
  random.utterance_id = "r";
  random.zeroth = test::RandomVector(1, &rng).cwiseAbs();
  random.first = test::RandomMatrix(1, 2, &rng);
  SuffStats random_centered = CenterStats(random, ubm);
  Matrix expected = random.first - random.zeroth.asDiagonal() * ubm.means;
  CHECK((random_centered.first - expected).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("TV EM recovers the planted subspace and is deterministic") {
  SyntheticSpec spec;
  spec.num_speakers = 100;
  spec.utterances_per_speaker = 2;
  spec.long_duration_frames = 500;
  spec.num_components = 8;
  spec.feature_dim = 5;
  spec.true_rank = 4;
  spec.speaker_subspace_scale = 1.0;
  spec.channel_noise_scale = 0.7;
  spec.seed = 2024;
  SyntheticCorpus corpus = GenerateCorpus(spec);

  std::vector<SuffStats> stats;
  for (const auto &utt : corpus.utterances) {
    Matrix posteriors = GmmPosteriors(corpus.truth.ubm, utt);
    stats.push_back(CenterStats(
        AccumulateStats(posteriors, utt, VadMask::AllSpeech(utt.NumFrames())),
        corpus.truth.ubm));
  }
  TvTrainOptions opts;
  opts.rank = 4;
  opts.iters = 10;
  opts.seed = 7;
  TvTrainResult result = TrainTvEm(stats, corpus.truth.ubm, opts);
  double angle = test::PrincipalAngleDegrees(result.model.T, corpus.truth.tv);
  CHECK(angle < 5.0);
  CheckMonotone(result.objectives, 1e-8);

  TvTrainResult rerun = TrainTvEm(stats, corpus.truth.ubm, opts);
  CHECK(rerun.model.T == result.model.T);
}

TEST_CASE("TV EM objective is monotone over 5 iterations") {
  Rng rng(5);
  FullGmm ubm;
  Eigen::Index C = 4, D = 3;
  ubm.weights = Vector::Constant(C, 0.25);
  ubm.means = test::RandomMatrix(C, D, &rng, 3.0);
  for (Eigen::Index c = 0; c < C; ++c)
    ubm.covariances.push_back(test::RandomSpd(D, &rng));
  std::vector<SuffStats> stats;
  for (int u = 0; u < 50; ++u) {
    Matrix frames = test::RandomMatrix(40, D, &rng, 2.0);
    auto utt = MakeUtterance(StrCat("u", u), frames);
    Matrix posteriors = GmmPosteriors(ubm, utt);
    stats.push_back(CenterStats(
        AccumulateStats(posteriors, utt, VadMask::AllSpeech(40)), ubm));
  }
  TvTrainOptions opts;
  opts.rank = 3;
  opts.iters = 5;
  opts.seed = 3;
  TvTrainResult result = TrainTvEm(stats, ubm, opts);
  CHECK(result.objectives.size() == 6);
  CheckMonotone(result.objectives, 1e-8);
}

TEST_CASE("TV EM rejects rank 0 and flags unobserved components") {
  Rng rng(6);
  FullGmm ubm;
  ubm.weights = Vector::Constant(2, 0.5);
  ubm.means = test::RandomMatrix(2, 2, &rng);
  ubm.covariances = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  SuffStats s;
  s.utterance_id = "u";
  s.zeroth = Vector::Zero(2);
  s.zeroth[0] = 5.0;  // component 1 never observed
  s.first = Matrix::Zero(2, 2);
  s.first.row(0) << 1.0, 2.0;
  s.centered = true;
  TvTrainOptions opts;
  opts.rank = 0;
  CHECK_THROWS_AS(TrainTvEm({s}, ubm, opts), Error);
  opts.rank = 1;
  opts.iters = 2;
  TvTrainResult result = TrainTvEm({s, s}, ubm, opts);
  CHECK(!result.warnings.empty());
}

TEST_CASE("extraction: zero stats and zero T give the prior posterior") {
  Rng rng(8);
  FullGmm ubm;
  ubm.weights = Vector::Constant(2, 0.5);
  ubm.means = test::RandomMatrix(2, 3, &rng);
  ubm.covariances = {test::RandomSpd(3, &rng), test::RandomSpd(3, &rng)};
  TotalVariabilityModel model;
  model.ubm_means = ubm.means;
  model.ubm_covariances = ubm.covariances;
  model.T = test::RandomMatrix(6, 2, &rng);

  SuffStats zero;
  zero.utterance_id = "z";
  zero.zeroth = Vector::Zero(2);
  zero.first = Matrix::Zero(2, 3);
  zero.centered = true;
  IVector prior = ExtractIvector(zero, model, /*with_covariance=*/true);
  CHECK(prior.mean.isZero(0.0));
  CHECK((prior.posterior_covariance - Matrix::Identity(2, 2))
            .lpNorm<Eigen::Infinity>() < 1e-14);

  TotalVariabilityModel zero_t = model;
  zero_t.T.setZero();
  SuffStats stats;
  stats.utterance_id = "s";
  stats.zeroth = Vector::Constant(2, 3.0);
  stats.first = test::RandomMatrix(2, 3, &rng);
  stats.centered = true;
  IVector no_subspace = ExtractIvector(stats, zero_t, true);
  CHECK(no_subspace.mean.isZero(0.0));
  CHECK((no_subspace.posterior_covariance - Matrix::Identity(2, 2))
            .lpNorm<Eigen::Infinity>() < 1e-14);

  stats.first(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ExtractIvector(stats, model), Error);
}

TEST_CASE("extraction matches numerical maximization of the exact posterior") {
  Rng rng(14);
  Eigen::Index C = 2, D = 3, R = 2, T = 20;
  FullGmm ubm;
  Vector w = test::RandomVector(C, &rng).cwiseAbs();
  ubm.weights = w / w.sum();
  ubm.means = test::RandomMatrix(C, D, &rng, 2.0);
  for (Eigen::Index c = 0; c < C; ++c)
    ubm.covariances.push_back(test::RandomSpd(D, &rng));
  TotalVariabilityModel model;
  model.ubm_means = ubm.means;
  model.ubm_covariances = ubm.covariances;
  model.T = test::RandomMatrix(C * D, R, &rng, 0.5);

  Matrix frames = test::RandomMatrix(T, D, &rng, 2.0);
  auto utt = MakeUtterance("u", frames);
  Matrix posteriors = GmmPosteriors(ubm, utt);
  SuffStats stats =
      CenterStats(AccumulateStats(posteriors, utt, VadMask::AllSpeech(T)), ubm);
  IVector iv = ExtractIvector(stats, model, true);

  Vector oracle = MaximizeByNewton(
      [&](const Vector &cand) {
        return PosteriorObjective(frames, posteriors, ubm, model.T, cand);
      },
      R);
  CHECK((iv.mean - oracle).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("extraction is equivariant under scaling of T") {
  Rng rng(15);
  Eigen::Index C = 3, D = 2, R = 2;
  FullGmm ubm;
  ubm.weights = Vector::Constant(C, 1.0 / 3.0);
  ubm.means = test::RandomMatrix(C, D, &rng);
  for (Eigen::Index c = 0; c < C; ++c)
    ubm.covariances.push_back(test::RandomSpd(D, &rng));
  TotalVariabilityModel model;
  model.ubm_means = ubm.means;
  model.ubm_covariances = ubm.covariances;
  model.T = test::RandomMatrix(C * D, R, &rng);

  SuffStats stats;
  stats.utterance_id = "s";
  stats.zeroth = test::RandomVector(C, &rng).cwiseAbs() * 5.0;
  stats.first = test::RandomMatrix(C, D, &rng);
  stats.centered = true;

  double lambda = 2.5;
  TotalVariabilityModel scaled = model;
  scaled.T *= lambda;
  IVector actual = ExtractIvector(stats, scaled);

  // Closed form recomputed from raw pieces: (I + l^2 G)^{-1} l b.
  Matrix gram = Matrix::Zero(R, R);
  Vector info = Vector::Zero(R);
  for (Eigen::Index c = 0; c < C; ++c) {
    Matrix block = model.T.block(c * D, 0, D, R);
    Matrix cov_inv = ubm.covariances[static_cast<std::size_t>(c)].inverse();
    gram += stats.zeroth[c] * block.transpose() * cov_inv * block;
    info += block.transpose() * cov_inv * stats.first.row(c).transpose();
  }
  Vector expected =
      (Matrix::Identity(R, R) + lambda * lambda * gram)
          .ldlt()
          .solve(lambda * info);
  CHECK((actual.mean - expected).lpNorm<Eigen::Infinity>() < 1e-10);
}
