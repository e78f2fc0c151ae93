// tests/io_test.cc

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

#include "ivmap/io.h"
#include "ivmap/plda.h"
#include "ivmap/tv.h"
#include "ivmap/ubm.h"
#include "test_util.h"

using namespace ivmap;
using test::TempDir;

TEST_CASE("binary scalars round-trip") {
  TempDir dir("io_scalars");
  auto path = dir.File("scalars.bin");
  {
    BinaryWriter w(path);
    w.WriteMagic("TST1");
    w.WriteU8(200);
    w.WriteU32(0xDEADBEEF);
    w.WriteU64(0x0123456789ABCDEFULL);
    w.WriteF64(-1.5e-300);
    w.WriteString("hello");
    w.Close();
  }
  BinaryReader r(path);
  r.ExpectMagic("TST1");
  CHECK(r.ReadU8() == 200);
  CHECK(r.ReadU32() == 0xDEADBEEF);
  CHECK(r.ReadU64() == 0x0123456789ABCDEFULL);
  CHECK(r.ReadF64() == -1.5e-300);
  CHECK(r.ReadString() == "hello");
  CHECK(r.AtEof());
}

TEST_CASE("bad magic and truncation are format errors") {
  TempDir dir("io_bad");
  auto path = dir.File("bad.bin");
  {
    BinaryWriter w(path);
    w.WriteMagic("XYZ9");
    w.Close();
  }
  BinaryReader r(path);
  CHECK_THROWS_WITH_AS(r.ExpectMagic("TST1"), doctest::Contains("bad magic"),
                       Error);
  auto short_path = dir.File("short.bin");
  {
    BinaryWriter w(short_path);
    w.WriteMagic("TST1");
    w.WriteU8(1);
    w.Close();
  }
  BinaryReader r2(short_path);
  r2.ExpectMagic("TST1");
  r2.ReadU8();
  CHECK_THROWS_AS(r2.ReadU64(), Error);
}

TEST_CASE("feature archive round-trips with and without energies") {
  TempDir dir("io_fea");
  Rng rng(7);
  std::vector<FeatureSequence> utts(2);
  utts[0].utterance_id = "utt-a";
  utts[0].frames = test::RandomMatrix(5, 3, &rng).cast<float>().cast<double>();
  utts[0].energies = test::RandomVector(5, &rng).cwiseAbs().cast<float>().cast<double>();
  utts[1].utterance_id = "utt-b";
  utts[1].frames = test::RandomMatrix(4, 3, &rng).cast<float>().cast<double>();
  auto path = dir.File("f.fea");
  SaveFeatureArchive(utts, path);
  auto loaded = LoadFeatureArchive(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].utterance_id == "utt-a");
  CHECK(loaded[0].frames == utts[0].frames);
  CHECK(loaded[0].energies == utts[0].energies);
  CHECK(loaded[1].frames == utts[1].frames);
  CHECK_FALSE(loaded[1].HasEnergies());
}

TEST_CASE("stats and i-vector archives round-trip exactly") {
  TempDir dir("io_sta");
  Rng rng(11);
  std::vector<SuffStats> stats(2);
  stats[0].utterance_id = "u0";
  stats[0].zeroth = test::RandomVector(4, &rng).cwiseAbs();
  stats[0].first = test::RandomMatrix(4, 3, &rng);
  stats[0].centered = true;
  stats[1].utterance_id = "u1";
  stats[1].zeroth = test::RandomVector(4, &rng).cwiseAbs();
  stats[1].first = test::RandomMatrix(4, 3, &rng);
  auto path = dir.File("s.sta");
  SaveStatsArchive(stats, path);
  auto loaded = LoadStatsArchive(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].centered);
  CHECK_FALSE(loaded[1].centered);
  CHECK(loaded[0].zeroth == stats[0].zeroth);
  CHECK(loaded[1].first == stats[1].first);

  IvectorSet set;
  set.ids = {"u0", "u1", "u2"};
  set.vectors = test::RandomMatrix(3, 5, &rng);
  auto ivx = dir.File("v.ivx");
  SaveIvectorSet(set, ivx);
  IvectorSet loaded_set = LoadIvectorSet(ivx);
  CHECK(loaded_set.ids == set.ids);
  CHECK(loaded_set.vectors == set.vectors);
}

TEST_CASE("gmm and tv model files round-trip exactly") {
  TempDir dir("io_gmm");
  Rng rng(13);
  FullGmm gmm;
  gmm.weights = Vector::Constant(2, 0.5);
  gmm.means = test::RandomMatrix(2, 3, &rng);
  gmm.covariances = {test::RandomSpd(3, &rng), test::RandomSpd(3, &rng)};
  auto path = dir.File("m.gmm");
  SaveGmm(gmm, path);
  FullGmm loaded = LoadGmm(path);
  CHECK(loaded.weights == gmm.weights);
  CHECK(loaded.means == gmm.means);
  CHECK(loaded.covariances[1] == gmm.covariances[1]);
  CHECK_FALSE(loaded.diagonal);

  TotalVariabilityModel model;
  model.ubm_means = gmm.means;
  model.ubm_covariances = gmm.covariances;
  model.T = test::RandomMatrix(6, 2, &rng);
  auto tvm = dir.File("t.tvm");
  SaveTvModel(model, tvm);
  TotalVariabilityModel loaded_model = LoadTvModel(tvm);
  CHECK(loaded_model.T == model.T);
  CHECK(loaded_model.ubm_means == model.ubm_means);
  CHECK(loaded_model.ubm_covariances[0] == model.ubm_covariances[0]);
}

TEST_CASE("plda model file round-trips, with and without LDA") {
  TempDir dir("io_plda");
  Rng rng(17);
  PldaModel model;
  model.mean = test::RandomVector(4, &rng);
  model.between = test::RandomMatrix(4, 2, &rng);
  model.residual = test::RandomSpd(4, &rng);
  model.preprocessing.mean = test::RandomVector(6, &rng);
  model.preprocessing.lda = test::RandomMatrix(6, 4, &rng);
  auto path = dir.File("p.pld");
  SavePldaModel(model, path);
  PldaModel loaded = LoadPldaModel(path);
  CHECK(loaded.mean == model.mean);
  CHECK(loaded.between == model.between);
  CHECK(loaded.residual == model.residual);
  CHECK(loaded.preprocessing.mean == model.preprocessing.mean);
  CHECK(loaded.preprocessing.lda == model.preprocessing.lda);

  model.preprocessing.lda.resize(0, 0);
  SavePldaModel(model, path);
  CHECK_FALSE(LoadPldaModel(path).preprocessing.HasLda());
}

TEST_CASE("trial and score files round-trip") {
  TempDir dir("io_trials");
  TrialSet set;
  set.trials = {{"e1", "t1", true}, {"e2", "t2", false}};
  auto path = dir.File("trials.tsv");
  SaveTrialSet(set, path);
  TrialSet loaded = LoadTrialSet(path);
  REQUIRE(loaded.trials.size() == 2);
  CHECK(loaded.trials[0].target);
  CHECK_FALSE(loaded.trials[1].target);
  CHECK(loaded.trials[1].enroll_id == "e2");

  std::vector<double> scores = {1.25, -3.141592653589793238};
  auto spath = dir.File("scores.tsv");
  SaveScoreFile(set.trials, scores, spath);
  ScoredTrialFile sf = LoadScoreFile(spath);
  CHECK(sf.scores[0] == scores[0]);
  CHECK(sf.scores[1] == scores[1]);  // 17 significant digits round-trip
}

TEST_CASE("file digest is stable and content-sensitive") {
  TempDir dir("io_digest");
  auto path = dir.File("x.txt");
  WriteTextFile(path, "abc");
  std::string d1 = FileDigest(path);
  CHECK(FileDigest(path) == d1);
  WriteTextFile(path, "abd");
  CHECK(FileDigest(path) != d1);
  CHECK(d1.rfind("fnv1a64:", 0) == 0);
}
