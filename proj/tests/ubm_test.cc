// tests/ubm_test.cc

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

#include "ivmap/corpus.h"
#include "ivmap/ubm.h"
#include "test_util.h"

using namespace ivmap;
using test::TempDir;

namespace {

FeatureSequence MakeUtterance(const std::string &id, const Matrix &frames) {
  FeatureSequence utt;
  utt.utterance_id = id;
  utt.frames = frames;
  return utt;
}

// Long-double mixture posterior evaluation with explicit inverses and
// determinants; independent of the Cholesky/log-sum-exp implementation path.
Matrix BruteForcePosteriors(const FullGmm &gmm, const Matrix &frames) {
  using LdMatrix =
      Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using LdVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  Eigen::Index T = frames.rows(), C = gmm.NumComponents(), D = gmm.Dim();
  Matrix posteriors(T, C);
  std::vector<LdMatrix> inverses;
  std::vector<long double> norms;
  for (Eigen::Index c = 0; c < C; ++c) {
    LdMatrix cov = gmm.covariances[static_cast<std::size_t>(c)].cast<long double>();
    inverses.push_back(cov.inverse());
    long double det = cov.determinant();
    norms.push_back(
        static_cast<long double>(gmm.weights[c]) /
        std::sqrt(std::pow(2.0L * M_PIl, static_cast<long double>(D)) * det));
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    LdVector y = frames.row(t).transpose().cast<long double>();
    std::vector<long double> dens(static_cast<std::size_t>(C));
    long double total = 0.0L;
    for (Eigen::Index c = 0; c < C; ++c) {
      LdVector diff =
          y - gmm.means.row(c).transpose().cast<long double>();
      long double quad = diff.dot(inverses[static_cast<std::size_t>(c)] * diff);
      dens[static_cast<std::size_t>(c)] =
          norms[static_cast<std::size_t>(c)] * std::exp(-0.5L * quad);
      total += dens[static_cast<std::size_t>(c)];
    }
    for (Eigen::Index c = 0; c < C; ++c)
      posteriors(t, c) =
          static_cast<double>(dens[static_cast<std::size_t>(c)] / total);
  }
  return posteriors;
}

void CheckMonotone(const std::vector<double> &values, double rel_slack) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    double slack = rel_slack * std::abs(values[i - 1]);
    CHECK(values[i] >= values[i - 1] - slack);
  }
}

}  // namespace

TEST_CASE("single-component EM recovers sample mean and covariance") {
  Rng rng(42);
  Matrix frames = test::RandomMatrix(400, 3, &rng);
  frames.col(1).array() += 2.0;
  GmmTrainOptions opts;
  opts.num_components = 1;
  opts.diag_iters = 1;
  opts.full_iters = 1;
  opts.seed = 1;
  auto result = TrainGmmEm({MakeUtterance("u", frames)}, opts);
  Vector sample_mean = frames.colwise().mean().transpose();
  Matrix centered = frames.rowwise() - sample_mean.transpose();
  Matrix sample_cov =
      centered.transpose() * centered / static_cast<double>(frames.rows());
  CHECK((result.gmm.means.row(0).transpose() - sample_mean).norm() < 1e-10);
  CHECK((result.gmm.covariances[0] - sample_cov).norm() < 1e-10);
  CHECK(result.gmm.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two planted clusters are recovered against the hard-assignment oracle") {
  Rng rng(3);
  Eigen::Index dim = 3;
  Vector mean_a = Vector::Zero(dim);
  Vector mean_b = Vector::Constant(dim, 20.0);  // 20 sigma separation
  double weight_a = 0.6;
  Eigen::Index total = 5000;
  Matrix frames(total, dim);
  std::vector<int> planted(static_cast<std::size_t>(total));
  for (Eigen::Index t = 0; t < total; ++t) {
    bool in_a = rng.Uniform() < weight_a;
    planted[static_cast<std::size_t>(t)] = in_a ? 0 : 1;
    const Vector &mu = in_a ? mean_a : mean_b;
    for (Eigen::Index d = 0; d < dim; ++d)
      frames(t, d) = mu[d] + rng.Gaussian();
  }
  GmmTrainOptions opts;
  opts.num_components = 2;
  opts.seed = 5;
  auto result = TrainGmmEm({MakeUtterance("u", frames)}, opts);

  // Oracle: hard-assign each frame to the nearest planted mean and compute
  // per-cluster sample statistics.
  Vector oracle_mean_a = Vector::Zero(dim), oracle_mean_b = Vector::Zero(dim);
  double count_a = 0, count_b = 0;
  for (Eigen::Index t = 0; t < total; ++t) {
    double da = (frames.row(t).transpose() - mean_a).norm();
    double db = (frames.row(t).transpose() - mean_b).norm();
    if (da < db) {
      oracle_mean_a += frames.row(t).transpose();
      count_a += 1;
    } else {
      oracle_mean_b += frames.row(t).transpose();
      count_b += 1;
    }
  }
  oracle_mean_a /= count_a;
  oracle_mean_b /= count_b;

  // Match recovered components to clusters by proximity.
  Eigen::Index comp_a =
      (result.gmm.means.row(0).transpose() - mean_a).norm() <
              (result.gmm.means.row(1).transpose() - mean_a).norm()
          ? 0
          : 1;
  Eigen::Index comp_b = 1 - comp_a;
  CHECK((result.gmm.means.row(comp_a).transpose() - oracle_mean_a)
            .lpNorm<Eigen::Infinity>() < 0.01);
  CHECK((result.gmm.means.row(comp_b).transpose() - oracle_mean_b)
            .lpNorm<Eigen::Infinity>() < 0.01);
  CHECK(std::abs(result.gmm.weights[comp_a] - weight_a) < 0.01);
}

TEST_CASE("EM log-likelihood is monotone and training is deterministic") {
  Rng rng(9);
  Eigen::Index total = 500, dim = 2;
  Matrix frames(total, dim);
  for (Eigen::Index t = 0; t < total; ++t) {
    int cluster = static_cast<int>(rng.UniformInt(4));
    for (Eigen::Index d = 0; d < dim; ++d)
      frames(t, d) = 3.0 * cluster + 0.7 * rng.Gaussian();
  }
  std::vector<FeatureSequence> corpus = {MakeUtterance("u", frames)};
  GmmTrainOptions opts;
  opts.num_components = 4;
  opts.seed = 11;
  auto result = TrainGmmEm(corpus, opts);
  CHECK(result.log_likelihoods.size() == 9);  // 4 diag + 4 full + final
  CheckMonotone(result.log_likelihoods, 1e-8);

  auto rerun = TrainGmmEm(corpus, opts);
  CHECK(rerun.gmm.weights == result.gmm.weights);
  CHECK(rerun.gmm.means == result.gmm.means);
  for (std::size_t c = 0; c < rerun.gmm.covariances.size(); ++c)
    CHECK(rerun.gmm.covariances[c] == result.gmm.covariances[c]);
}

TEST_CASE("covariance floor keeps eigenvalues above the floor") {
  // Fifty identical frames collapse one component's covariance.
  Matrix dup = Matrix::Zero(50, 2);
  dup.rowwise() = Eigen::RowVector2d(1.0, 1.0);
  Rng rng(21);
  Matrix spread = test::RandomMatrix(50, 2, &rng);
  spread.array() += 30.0;
  Matrix frames(100, 2);
  frames.topRows(50) = dup;
  frames.bottomRows(50) = spread;
  GmmTrainOptions opts;
  opts.num_components = 2;
  opts.seed = 2;
  auto result = TrainGmmEm({MakeUtterance("u", frames)}, opts);
  CHECK(!result.warnings.empty());
  for (const auto &cov : result.gmm.covariances) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    CHECK(eig.eigenvalues().minCoeff() >=
          result.covariance_floor * (1.0 - 1e-12));
  }
}

TEST_CASE("training rejects empty corpora and oversized C") {
  GmmTrainOptions opts;
  CHECK_THROWS_AS(TrainGmmEm({}, opts), Error);
  Rng rng(1);
  auto utt = MakeUtterance("u", test::RandomMatrix(3, 2, &rng));
  opts.num_components = 10;
  CHECK_THROWS_WITH_AS(TrainGmmEm({utt}, opts), doctest::Contains("C=10"),
                       Error);
}

TEST_CASE("posteriors: single component and symmetric pair") {
  FullGmm gmm;
  gmm.weights = Vector::Ones(1);
  gmm.means = Matrix::Zero(1, 2);
  gmm.covariances = {Matrix::Identity(2, 2)};
  Rng rng(5);
  auto utt = MakeUtterance("u", test::RandomMatrix(6, 2, &rng));
  Matrix post = GmmPosteriors(gmm, utt);
  CHECK(post.rows() == 6);
  for (Eigen::Index t = 0; t < post.rows(); ++t)
    CHECK(post(t, 0) == doctest::Approx(1.0).epsilon(1e-15));

  FullGmm pair;
  pair.weights = Vector::Constant(2, 0.5);
  pair.means.resize(2, 1);
  pair.means << -1.0, 3.0;
  pair.covariances = {Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  Matrix frame(1, 1);
  frame << 1.0;  // midpoint
  Matrix mid = GmmPosteriors(pair, MakeUtterance("m", frame));
  CHECK(mid(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mid(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("posteriors match the extended-precision density oracle") {
  Rng rng(31);
  FullGmm gmm;
  Eigen::Index C = 3, D = 3;
  Vector w = test::RandomVector(C, &rng).cwiseAbs();
  gmm.weights = w / w.sum();
  gmm.means = test::RandomMatrix(C, D, &rng, 2.0);
  for (Eigen::Index c = 0; c < C; ++c)
    gmm.covariances.push_back(test::RandomSpd(D, &rng));
  auto utt = MakeUtterance("u", test::RandomMatrix(10, D, &rng, 2.0));
  Matrix post = GmmPosteriors(gmm, utt);
  Matrix oracle = BruteForcePosteriors(gmm, utt.frames);
  CHECK((post - oracle).lpNorm<Eigen::Infinity>() < 1e-12);
  for (Eigen::Index t = 0; t < post.rows(); ++t)
    CHECK(std::abs(post.row(t).sum() - 1.0) < 1e-10);
}

TEST_CASE("posterior archive round-trips bit-identically at f32 granularity") {
  TempDir dir("ubm_pos");
  Rng rng(41);
  PosteriorArchive archive;
  archive.source = PosteriorArchive::Source::kSynthetic;
  Matrix post(3, 2);
  // Values exactly representable in f32 so the round trip is bit-identical.
  post << 0.25, 0.75, 0.5, 0.5, 1.0, 0.0;
  archive.utterance_ids = {"utt-x"};
  archive.posteriors = {post};
  auto path = dir.File("p.pos");
  SavePosteriorArchive(archive, path);
  PosteriorArchive loaded = LoadPosteriorArchive(path);
  CHECK(loaded.source == PosteriorArchive::Source::kSynthetic);
  CHECK(loaded.posteriors[0] == post);

  PosteriorArchive twice_src = loaded;
  auto path2 = dir.File("p2.pos");
  SavePosteriorArchive(twice_src, path2);
  CHECK(test::FileBytesEqual(path, path2));
}

TEST_CASE("posterior archive rejects bad row sums, naming the row") {
  TempDir dir("ubm_badpos");
  PosteriorArchive archive;
  archive.utterance_ids = {"utt-bad"};
  Matrix post(2, 2);
  post << 0.5, 0.5, 0.25, 0.25;  // second row sums to 0.5
  archive.posteriors = {post};
  auto path = dir.File("bad.pos");
  SavePosteriorArchive(archive, path);
  CHECK_THROWS_WITH_AS(LoadPosteriorArchive(path),
                       doctest::Contains("utt-bad row 1"), Error);
}

TEST_CASE("synthetic senone provider output passes archive validation") {
  SyntheticSpec spec;
  spec.num_speakers = 2;
  spec.utterances_per_speaker = 1;
  spec.long_duration_frames = 40;
  spec.num_components = 4;
  spec.feature_dim = 3;
  spec.true_rank = 2;
  spec.seed = 99;
  SyntheticCorpus corpus = GenerateCorpus(spec);
  PosteriorArchive archive;
  archive.source = PosteriorArchive::Source::kExternalSenone;
  for (const auto &utt : corpus.utterances) {
    archive.utterance_ids.push_back(utt.utterance_id);
    archive.posteriors.push_back(GmmPosteriors(corpus.truth.ubm, utt));
  }
  TempDir dir("ubm_syn");
  auto path = dir.File("syn.pos");
  SavePosteriorArchive(archive, path);
  PosteriorArchive loaded = LoadPosteriorArchive(path);
  CHECK(loaded.utterance_ids.size() == 2);
  CHECK(loaded.source == PosteriorArchive::Source::kExternalSenone);
}

TEST_CASE("energy VAD thresholds against the utterance mean") {
  FeatureSequence utt;
  utt.utterance_id = "u";
  utt.frames = Matrix::Zero(4, 1);

  utt.energies = Vector::Constant(4, 3.0);
  VadMask all = EnergyVad(utt, 0.5);
  CHECK(all.NumSpeechFrames() == 4);

  utt.energies.resize(4);
  utt.energies << 10.0, 0.0, 10.0, 0.0;
  VadMask mask = EnergyVad(utt, 0.5);  // mean 5, threshold 2.5
  CHECK(mask.speech == std::vector<std::uint8_t>({1, 0, 1, 0}));

  Rng rng(77);
  utt.energies = test::RandomVector(4, &rng).cwiseAbs();
  VadMask random_mask = EnergyVad(utt, 0.7);
  double threshold = 0.7 * utt.energies.mean();
  for (Eigen::Index t = 0; t < 4; ++t)
    CHECK((random_mask.speech[static_cast<std::size_t>(t)] != 0) ==
          (utt.energies[t] > threshold));

  utt.energies.resize(0);
  CHECK_THROWS_WITH_AS(EnergyVad(utt, 0.5), doctest::Contains("all-speech"),
                       Error);
}
