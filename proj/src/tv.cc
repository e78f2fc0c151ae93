// ivmap/tv.cc

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

#include "ivmap/tv.h"

#include "ivmap/io.h"

namespace ivmap {

namespace {

// Inverses of the UBM covariances, computed once per model.
std::vector<Matrix> CovarianceInverses(
    const std::vector<Matrix> &covariances) {
  std::vector<Matrix> inverses;
  inverses.reserve(covariances.size());
  for (const auto &cov : covariances) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
      throw Error(err::kPrecondition, "UBM covariance not positive definite");
    inverses.push_back(llt.solve(Matrix::Identity(cov.rows(), cov.cols())));
  }
  return inverses;
}

struct PosteriorTerms {
  Matrix precision;  // L = I + sum_c N_c T_c' Sigma_c^{-1} T_c
  Vector info;       // b = sum_c T_c' Sigma_c^{-1} F_c
};

PosteriorTerms ComputePosteriorTerms(const SuffStats &stats,
                                     const TotalVariabilityModel &model,
                                     const std::vector<Matrix> &cov_inv,
                                     const std::vector<Matrix> &gram) {
  Eigen::Index C = model.NumComponents(), R = model.Rank();
  PosteriorTerms terms;
  terms.precision = Matrix::Identity(R, R);
  terms.info = Vector::Zero(R);
  for (Eigen::Index c = 0; c < C; ++c) {
    terms.precision += stats.zeroth[c] * gram[static_cast<std::size_t>(c)];
    terms.info += model.ComponentBlock(c).transpose() *
                  (cov_inv[static_cast<std::size_t>(c)] *
                   stats.first.row(c).transpose());
  }
  return terms;
}

// Per-component T_c' Sigma_c^{-1} T_c, recomputed after every T update.
std::vector<Matrix> GramBlocks(const TotalVariabilityModel &model,
                               const std::vector<Matrix> &cov_inv) {
  std::vector<Matrix> gram;
  gram.reserve(static_cast<std::size_t>(model.NumComponents()));
  for (Eigen::Index c = 0; c < model.NumComponents(); ++c) {
    Matrix block = model.ComponentBlock(c);
    gram.push_back(block.transpose() * cov_inv[static_cast<std::size_t>(c)] *
                   block);
  }
  return gram;
}

void CheckStatsAgainstModel(const SuffStats &stats,
                            const TotalVariabilityModel &model) {
  if (!stats.centered)
    throw Error(err::kPrecondition,
                StrCat("stats for ", stats.utterance_id, " are not centered"));
  if (stats.NumComponents() != model.NumComponents() ||
      stats.Dim() != model.Dim())
    throw Error(err::kDimension,
                StrCat("stats for ", stats.utterance_id,
                       " do not match the model dimensions"));
  CheckFinite(stats.zeroth, "zeroth-order stats");
  CheckFinite(stats.first, "first-order stats");
}

}  // namespace

SuffStats AccumulateStats(const Matrix &posteriors,
                          const FeatureSequence &utterance,
                          const VadMask &mask) {
  Eigen::Index T = utterance.NumFrames();
  if (posteriors.rows() != T || mask.NumFrames() != T)
    throw Error(err::kDimension,
                StrCat("utterance ", utterance.utterance_id, ": frames ", T,
                       ", posterior rows ", posteriors.rows(), ", mask ",
                       mask.NumFrames()));
  Eigen::Index C = posteriors.cols(), D = utterance.Dim();
  SuffStats stats;
  stats.utterance_id = utterance.utterance_id;
  stats.centered = false;
  std::vector<KahanAccumulator> zeroth(static_cast<std::size_t>(C));
  std::vector<KahanAccumulator> first(static_cast<std::size_t>(C * D));
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!mask.speech[static_cast<std::size_t>(t)]) continue;
    for (Eigen::Index c = 0; c < C; ++c) {
      double gamma = posteriors(t, c);
      zeroth[static_cast<std::size_t>(c)].Add(gamma);
      for (Eigen::Index d = 0; d < D; ++d)
        first[static_cast<std::size_t>(c * D + d)].Add(gamma *
                                                       utterance.frames(t, d));
    }
  }
  stats.zeroth.resize(C);
  stats.first.resize(C, D);
  for (Eigen::Index c = 0; c < C; ++c) {
    stats.zeroth[c] = zeroth[static_cast<std::size_t>(c)].Sum();
    for (Eigen::Index d = 0; d < D; ++d)
      stats.first(c, d) = first[static_cast<std::size_t>(c * D + d)].Sum();
  }
  return stats;
}

SuffStats CenterStats(const SuffStats &stats, const FullGmm &ubm) {
  if (stats.centered)
    throw Error(err::kPrecondition,
                StrCat("stats for ", stats.utterance_id, " already centered"));
  if (stats.NumComponents() != ubm.NumComponents() || stats.Dim() != ubm.Dim())
    throw Error(err::kDimension, "stats do not match UBM dimensions");
  SuffStats centered = stats;
  centered.first -= stats.zeroth.asDiagonal() * ubm.means;
  centered.centered = true;
  return centered;
}

TvTrainResult TrainTvEm(const std::vector<SuffStats> &centered_stats,
                        const FullGmm &ubm, const TvTrainOptions &opts) {
  if (centered_stats.empty())
    throw Error(err::kEmpty, "no stats supplied for TV training");
  if (opts.rank < 1)
    throw Error(err::kPrecondition, "i-vector rank must be >= 1");
  if (opts.iters < 0)
    throw Error(err::kPrecondition, "iteration count must be >= 0");
  Eigen::Index C = ubm.NumComponents(), D = ubm.Dim();
  Eigen::Index R = opts.rank;
  if (R > C * D)
    throw Error(err::kPrecondition,
                StrCat("rank ", R, " exceeds supervector dim ", C * D));

  TvTrainResult result;
  TotalVariabilityModel model;
  model.ubm_means = ubm.means;
  model.ubm_covariances = ubm.covariances;
  model.diagonal_covariances = ubm.diagonal;
  Rng rng(opts.seed);
  model.T.resize(C * D, R);
  for (Eigen::Index r = 0; r < model.T.rows(); ++r)
    for (Eigen::Index c = 0; c < model.T.cols(); ++c)
      model.T(r, c) = opts.init_scale * rng.Gaussian();

  for (const auto &stats : centered_stats) CheckStatsAgainstModel(stats, model);

  std::vector<Matrix> cov_inv = CovarianceInverses(model.ubm_covariances);

  for (int iter = 0; iter < opts.iters; ++iter) {
    std::vector<Matrix> gram = GramBlocks(model, cov_inv);
    std::vector<Matrix> second_moment(
        static_cast<std::size_t>(C), Matrix::Zero(R, R));  // sum_u N_c E[ww']
    std::vector<Matrix> cross(static_cast<std::size_t>(C),
                              Matrix::Zero(D, R));  // sum_u F_c E[w]'
    double objective = 0.0;
    for (const auto &stats : centered_stats) {
      PosteriorTerms terms = ComputePosteriorTerms(stats, model, cov_inv, gram);
      Eigen::LLT<Matrix> llt(terms.precision);
      if (llt.info() != Eigen::Success)
        throw Error(err::kPrecondition, "i-vector precision not PD");
      Vector mean = llt.solve(terms.info);
      Matrix covariance = llt.solve(Matrix::Identity(R, R));
      double logdet = 0.0;
      for (Eigen::Index r = 0; r < R; ++r)
        logdet += 2.0 * std::log(Matrix(llt.matrixL())(r, r));
      objective += -0.5 * logdet + 0.5 * terms.info.dot(mean);
      Matrix moment = covariance + mean * mean.transpose();
      for (Eigen::Index c = 0; c < C; ++c) {
        second_moment[static_cast<std::size_t>(c)] += stats.zeroth[c] * moment;
        cross[static_cast<std::size_t>(c)] +=
            stats.first.row(c).transpose() * mean.transpose();
      }
    }
    result.objectives.push_back(objective);
    for (Eigen::Index c = 0; c < C; ++c) {
      Matrix &accum = second_moment[static_cast<std::size_t>(c)];
      Eigen::SelfAdjointEigenSolver<Matrix> eig(accum);
      if (eig.eigenvalues().minCoeff() <=
          1e-12 * std::max(1.0, eig.eigenvalues().maxCoeff())) {
        accum += opts.ridge * Matrix::Identity(R, R);
        result.warnings.push_back(
            StrCat("component ", c, " unobserved or near-singular at iteration ",
                   iter, "; ridge applied"));
      }
      // T_c = cross_c * accum^{-1}; solve the transposed system.
      Eigen::LDLT<Matrix> ldlt(accum);
      model.T.block(c * D, 0, D, R) =
          ldlt.solve(cross[static_cast<std::size_t>(c)].transpose()).transpose();
    }
  }
  result.objectives.push_back(TvObjective(centered_stats, model));
  result.model = std::move(model);
  return result;
}

double TvObjective(const std::vector<SuffStats> &centered_stats,
                   const TotalVariabilityModel &model) {
  std::vector<Matrix> cov_inv = CovarianceInverses(model.ubm_covariances);
  std::vector<Matrix> gram = GramBlocks(model, cov_inv);
  Eigen::Index R = model.Rank();
  double objective = 0.0;
  for (const auto &stats : centered_stats) {
    PosteriorTerms terms = ComputePosteriorTerms(stats, model, cov_inv, gram);
    Eigen::LLT<Matrix> llt(terms.precision);
    if (llt.info() != Eigen::Success)
      throw Error(err::kPrecondition, "i-vector precision not PD");
    Vector mean = llt.solve(terms.info);
    double logdet = 0.0;
    for (Eigen::Index r = 0; r < R; ++r)
      logdet += 2.0 * std::log(Matrix(llt.matrixL())(r, r));
    objective += -0.5 * logdet + 0.5 * terms.info.dot(mean);
  }
  return objective;
}

IVector ExtractIvector(const SuffStats &centered_stats,
                       const TotalVariabilityModel &model,
                       bool with_covariance) {
  CheckStatsAgainstModel(centered_stats, model);
  std::vector<Matrix> cov_inv = CovarianceInverses(model.ubm_covariances);
  std::vector<Matrix> gram = GramBlocks(model, cov_inv);
  PosteriorTerms terms =
      ComputePosteriorTerms(centered_stats, model, cov_inv, gram);
  Eigen::LLT<Matrix> llt(terms.precision);
  if (llt.info() != Eigen::Success)
    throw Error(err::kPrecondition, "i-vector precision not PD");
  IVector iv;
  iv.utterance_id = centered_stats.utterance_id;
  iv.mean = llt.solve(terms.info);
  if (with_covariance)
    iv.posterior_covariance =
        llt.solve(Matrix::Identity(model.Rank(), model.Rank()));
  CheckFinite(iv.mean, "i-vector mean");
  return iv;
}

void SaveStatsArchive(const std::vector<SuffStats> &stats,
                      const std::filesystem::path &path) {
  BinaryWriter w(path);
  w.WriteMagic("STA1");
  for (const auto &s : stats) {
    w.WriteString(s.utterance_id);
    w.WriteU32(static_cast<std::uint32_t>(s.NumComponents()));
    w.WriteU32(static_cast<std::uint32_t>(s.Dim()));
    w.WriteU8(s.centered ? 1 : 0);
    w.WriteVectorF64(s.zeroth);
    w.WriteMatrixF64(s.first);
  }
  w.Close();
}

std::vector<SuffStats> LoadStatsArchive(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("STA1");
  std::vector<SuffStats> stats;
  while (!r.AtEof()) {
    SuffStats s;
    s.utterance_id = r.ReadString();
    std::uint32_t C = r.ReadU32();
    std::uint32_t D = r.ReadU32();
    s.centered = r.ReadU8() != 0;
    s.zeroth = r.ReadVectorF64(C);
    s.first = r.ReadMatrixF64(C, D);
    stats.push_back(std::move(s));
  }
  return stats;
}

void SaveIvectorSet(const IvectorSet &set, const std::filesystem::path &path) {
  if (static_cast<Eigen::Index>(set.ids.size()) != set.vectors.rows())
    throw Error(err::kDimension, "i-vector set ids/rows disagree");
  BinaryWriter w(path);
  w.WriteMagic("IVX1");
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    w.WriteString(set.ids[i]);
    w.WriteU32(static_cast<std::uint32_t>(set.vectors.cols()));
    w.WriteVectorF64(set.vectors.row(static_cast<Eigen::Index>(i)).transpose());
  }
  w.Close();
}

IvectorSet LoadIvectorSet(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("IVX1");
  IvectorSet set;
  std::vector<Vector> rows;
  Eigen::Index dim = -1;
  while (!r.AtEof()) {
    set.ids.push_back(r.ReadString());
    std::uint32_t R = r.ReadU32();
    if (dim < 0) dim = R;
    if (static_cast<Eigen::Index>(R) != dim)
      throw Error(err::kDimension,
                  StrCat("i-vector dim mismatch in ", path.string()));
    rows.push_back(r.ReadVectorF64(R));
  }
  set.vectors.resize(static_cast<Eigen::Index>(rows.size()), std::max<Eigen::Index>(dim, 0));
  for (std::size_t i = 0; i < rows.size(); ++i)
    set.vectors.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return set;
}

void SaveTvModel(const TotalVariabilityModel &model,
                 const std::filesystem::path &path) {
  BinaryWriter w(path);
  w.WriteMagic("TVM1");
  w.WriteU32(static_cast<std::uint32_t>(model.NumComponents()));
  w.WriteU32(static_cast<std::uint32_t>(model.Dim()));
  w.WriteU32(static_cast<std::uint32_t>(model.Rank()));
  w.WriteMatrixF64(model.T);
  w.WriteMatrixF64(model.ubm_means);
  w.WriteU8(model.diagonal_covariances ? 1 : 0);
  for (const auto &cov : model.ubm_covariances) {
    if (model.diagonal_covariances)
      w.WriteVectorF64(cov.diagonal());
    else
      w.WriteMatrixF64(cov);
  }
  w.Close();
}

TotalVariabilityModel LoadTvModel(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("TVM1");
  std::uint32_t C = r.ReadU32();
  std::uint32_t D = r.ReadU32();
  std::uint32_t R = r.ReadU32();
  TotalVariabilityModel model;
  model.T = r.ReadMatrixF64(static_cast<Eigen::Index>(C) * D, R);
  model.ubm_means = r.ReadMatrixF64(C, D);
  model.diagonal_covariances = r.ReadU8() != 0;
  for (std::uint32_t c = 0; c < C; ++c) {
    if (model.diagonal_covariances) {
      Vector var = r.ReadVectorF64(D);
      model.ubm_covariances.push_back(Matrix(var.asDiagonal()));
    } else {
      model.ubm_covariances.push_back(r.ReadMatrixF64(D, D));
    }
  }
  return model;
}

}  // namespace ivmap
