// ivmap/ubm.cc

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

#include "ivmap/ubm.h"

#include <algorithm>
#include <set>

#include "ivmap/io.h"

namespace ivmap {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

void CheckCorpusDims(const std::vector<FeatureSequence> &corpus) {
  if (corpus.empty())
    throw Error(err::kEmpty, "empty feature corpus");
  Eigen::Index dim = corpus.front().Dim();
  for (const auto &utt : corpus) {
    if (utt.Dim() != dim)
      throw Error(err::kDimension,
                  StrCat("feature dim mismatch in utterance ", utt.utterance_id,
                         ": ", utt.Dim(), " vs ", dim));
    CheckFinite(utt.frames, "feature frames");
  }
}

Eigen::Index TotalFrames(const std::vector<FeatureSequence> &corpus) {
  Eigen::Index n = 0;
  for (const auto &utt : corpus) n += utt.NumFrames();
  return n;
}

// Cholesky factors and normalization constants for fast density evaluation.
struct DensityCache {
  std::vector<Matrix> chol;  // lower-triangular L with L L^T = covariance
  Vector log_norm;           // -0.5 (D log 2pi + logdet)

  explicit DensityCache(const FullGmm &gmm) {
    Eigen::Index C = gmm.NumComponents(), D = gmm.Dim();
    chol.resize(C);
    log_norm.resize(C);
    for (Eigen::Index c = 0; c < C; ++c) {
      Eigen::LLT<Matrix> llt(gmm.covariances[c]);
      if (llt.info() != Eigen::Success)
        throw Error(err::kPrecondition,
                    StrCat("component ", c, " covariance not positive definite"));
      chol[c] = llt.matrixL();
      double logdet = 0.0;
      for (Eigen::Index d = 0; d < D; ++d) logdet += 2.0 * std::log(chol[c](d, d));
      log_norm[c] = -0.5 * (static_cast<double>(D) * std::log(kTwoPi) + logdet);
    }
  }
};

// Per-frame log of weight_c * N(y; mu_c, Sigma_c) for all components: T x C.
Matrix WeightedLogDensities(const FullGmm &gmm, const DensityCache &cache,
                            const Matrix &frames) {
  Eigen::Index T = frames.rows(), C = gmm.NumComponents();
  Matrix logdens(T, C);
  for (Eigen::Index c = 0; c < C; ++c) {
    Matrix centered = (frames.rowwise() - gmm.means.row(c)).transpose();  // D x T
    Matrix solved = cache.chol[c]
                        .triangularView<Eigen::Lower>()
                        .solve(centered);  // L^{-1} (y - mu)
    double logw = gmm.weights[c] > 0.0 ? std::log(gmm.weights[c])
                                       : -std::numeric_limits<double>::infinity();
    logdens.col(c) = (-0.5 * solved.colwise().squaredNorm().array() +
                      cache.log_norm[c] + logw)
                         .matrix()
                         .transpose();
  }
  return logdens;
}

struct EStepAccum {
  Vector zeroth;                  // C
  Matrix first;                   // C x D
  std::vector<Matrix> scatter;    // C of D x D (only when full covariance)
  Matrix diag_scatter;            // C x D, sum gamma * y^2 (diagonal phase)
  double log_likelihood = 0.0;
  double total_gamma = 0.0;
};

EStepAccum AccumulateEStep(const FullGmm &gmm,
                           const std::vector<FeatureSequence> &corpus,
                           bool full_covariance) {
  Eigen::Index C = gmm.NumComponents(), D = gmm.Dim();
  DensityCache cache(gmm);
  EStepAccum acc;
  acc.zeroth = Vector::Zero(C);
  acc.first = Matrix::Zero(C, D);
  acc.diag_scatter = Matrix::Zero(C, D);
  if (full_covariance)
    acc.scatter.assign(static_cast<std::size_t>(C), Matrix::Zero(D, D));
  for (const auto &utt : corpus) {
    if (utt.NumFrames() == 0) continue;
    Matrix logdens = WeightedLogDensities(gmm, cache, utt.frames);
    for (Eigen::Index t = 0; t < logdens.rows(); ++t) {
      double lse = LogSumExp(logdens.row(t).transpose());
      acc.log_likelihood += lse;
      logdens.row(t) = (logdens.row(t).array() - lse).exp();
    }
    // logdens now holds posteriors, T x C.
    acc.zeroth += logdens.colwise().sum().transpose();
    acc.first += logdens.transpose() * utt.frames;
    if (full_covariance) {
      for (Eigen::Index c = 0; c < C; ++c) {
        Matrix weighted =
            utt.frames.array().colwise() * logdens.col(c).array();  // T x D
        acc.scatter[static_cast<std::size_t>(c)] +=
            weighted.transpose() * utt.frames;
      }
    } else {
      acc.diag_scatter +=
          logdens.transpose() * utt.frames.array().square().matrix();
    }
  }
  acc.total_gamma = acc.zeroth.sum();
  return acc;
}

// Clamps covariance eigenvalues (full) or variances (diagonal) at the floor.
// Returns true when flooring actually changed something.
bool FloorCovariance(Matrix *cov, double floor, bool full_covariance) {
  if (full_covariance) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(*cov);
    if (eig.eigenvalues().minCoeff() >= floor) return false;
    Vector vals = eig.eigenvalues().cwiseMax(floor);
    *cov = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
    *cov = 0.5 * (*cov + cov->transpose());
    return true;
  }
  bool changed = false;
  for (Eigen::Index d = 0; d < cov->rows(); ++d) {
    if ((*cov)(d, d) < floor) {
      (*cov)(d, d) = floor;
      changed = true;
    }
  }
  return changed;
}

// Seeds means from C distinct random frames, then runs a few rounds of
// nearest-mean assignment / mean update.
Matrix KmeansSeedMeans(const std::vector<FeatureSequence> &corpus,
                       Eigen::Index C, int rounds, Rng *rng) {
  Eigen::Index total = TotalFrames(corpus);
  Eigen::Index D = corpus.front().Dim();
  std::set<std::uint64_t> chosen;
  while (static_cast<Eigen::Index>(chosen.size()) < C)
    chosen.insert(rng->UniformInt(static_cast<std::uint64_t>(total)));
  Matrix means(C, D);
  {
    Eigen::Index mean_row = 0;
    auto it = chosen.begin();
    Eigen::Index offset = 0;
    for (const auto &utt : corpus) {
      while (it != chosen.end() &&
             static_cast<Eigen::Index>(*it) < offset + utt.NumFrames()) {
        means.row(mean_row++) =
            utt.frames.row(static_cast<Eigen::Index>(*it) - offset);
        ++it;
      }
      offset += utt.NumFrames();
    }
  }
  for (int round = 0; round < rounds; ++round) {
    Matrix sums = Matrix::Zero(C, D);
    Vector counts = Vector::Zero(C);
    Vector mean_sq = means.rowwise().squaredNorm();
    for (const auto &utt : corpus) {
      if (utt.NumFrames() == 0) continue;
      // Squared distances T x C via ||y||^2 - 2 y.mu + ||mu||^2; the ||y||^2
      // term is constant per row and can be dropped for the argmin.
      Matrix score = utt.frames * means.transpose();  // T x C
      score.rowwise() -= 0.5 * mean_sq.transpose();
      for (Eigen::Index t = 0; t < score.rows(); ++t) {
        Eigen::Index best;
        score.row(t).maxCoeff(&best);
        sums.row(best) += utt.frames.row(t);
        counts[best] += 1.0;
      }
    }
    for (Eigen::Index c = 0; c < C; ++c)
      if (counts[c] > 0.0) means.row(c) = sums.row(c) / counts[c];
  }
  return means;
}

}  // namespace

void FullGmm::Validate(double eigenvalue_floor) const {
  Eigen::Index C = NumComponents(), D = Dim();
  if (C < 1) throw Error(err::kPrecondition, "GMM needs at least 1 component");
  if (std::abs(weights.sum() - 1.0) > 1e-10)
    throw Error(err::kPrecondition,
                StrCat("GMM weights sum to ", FormatFull(weights.sum())));
  if (means.rows() != C || static_cast<Eigen::Index>(covariances.size()) != C)
    throw Error(err::kDimension, "GMM field shapes disagree");
  for (Eigen::Index c = 0; c < C; ++c) {
    const Matrix &cov = covariances[static_cast<std::size_t>(c)];
    if (cov.rows() != D || cov.cols() != D)
      throw Error(err::kDimension, StrCat("covariance ", c, " has wrong shape"));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.eigenvalues().minCoeff() <= eigenvalue_floor)
      throw Error(err::kPrecondition,
                  StrCat("covariance ", c, " not positive definite above floor"));
  }
}

GmmTrainResult TrainGmmEm(const std::vector<FeatureSequence> &corpus,
                          const GmmTrainOptions &opts) {
  CheckCorpusDims(corpus);
  if (opts.diag_iters < 0 || opts.full_iters < 0)
    throw Error(err::kPrecondition, "iteration counts must be >= 0");
  Eigen::Index C = opts.num_components;
  if (C < 1) throw Error(err::kPrecondition, "num_components must be >= 1");
  Eigen::Index total = TotalFrames(corpus);
  Eigen::Index D = corpus.front().Dim();
  if (total < C)
    throw Error(err::kPrecondition,
                StrCat("corpus has ", total, " frames but C=", C));

  // Global per-dimension mean/variance; sets the covariance floor and the
  // initial covariances.
  Vector global_sum = Vector::Zero(D), global_sq = Vector::Zero(D);
  for (const auto &utt : corpus) {
    global_sum += utt.frames.colwise().sum().transpose();
    global_sq += utt.frames.array().square().matrix().colwise().sum().transpose();
  }
  Vector global_mean = global_sum / static_cast<double>(total);
  Vector global_var =
      (global_sq / static_cast<double>(total) - global_mean.array().square().matrix())
          .cwiseMax(0.0);
  double floor = opts.floor_scale * global_var.mean();
  if (floor <= 0.0) floor = opts.floor_scale;  // all-identical data fallback

  GmmTrainResult result;
  result.covariance_floor = floor;
  Rng rng(opts.seed);

  FullGmm gmm;
  gmm.means = KmeansSeedMeans(corpus, C, opts.kmeans_rounds, &rng);
  gmm.weights = Vector::Constant(C, 1.0 / static_cast<double>(C));
  Matrix init_cov = global_var.cwiseMax(floor).asDiagonal();
  gmm.covariances.assign(static_cast<std::size_t>(C), init_cov);
  gmm.diagonal = (opts.full_iters == 0);

  int total_iters = opts.diag_iters + opts.full_iters;
  for (int iter = 0; iter < total_iters; ++iter) {
    bool full_phase = iter >= opts.diag_iters;
    EStepAccum acc = AccumulateEStep(gmm, corpus, full_phase);
    result.log_likelihoods.push_back(acc.log_likelihood);
    for (Eigen::Index c = 0; c < C; ++c) {
      double n_c = acc.zeroth[c];
      if (n_c < 1e-10) {
        result.warnings.push_back(
            StrCat("component ", c, " unoccupied at iteration ", iter,
                   "; parameters kept"));
        continue;
      }
      Vector mu = acc.first.row(c).transpose() / n_c;
      Matrix cov;
      if (full_phase) {
        cov = acc.scatter[static_cast<std::size_t>(c)] / n_c -
              mu * mu.transpose();
        cov = 0.5 * (cov + cov.transpose());
      } else {
        Vector var = acc.diag_scatter.row(c).transpose() / n_c -
                     mu.array().square().matrix();
        cov = var.asDiagonal();
      }
      if (FloorCovariance(&cov, floor, full_phase))
        result.warnings.push_back(
            StrCat("component ", c, " covariance floored at iteration ", iter));
      gmm.means.row(c) = mu.transpose();
      gmm.covariances[static_cast<std::size_t>(c)] = cov;
      gmm.weights[c] = n_c / acc.total_gamma;
    }
    gmm.weights /= gmm.weights.sum();
  }
  result.log_likelihoods.push_back(GmmLogLikelihood(gmm, corpus));
  result.gmm = std::move(gmm);
  return result;
}

Matrix GmmPosteriors(const FullGmm &gmm, const FeatureSequence &utterance) {
  if (utterance.Dim() != gmm.Dim())
    throw Error(err::kDimension,
                StrCat("utterance ", utterance.utterance_id, " has dim ",
                       utterance.Dim(), ", GMM expects ", gmm.Dim()));
  CheckFinite(utterance.frames, "feature frames");
  DensityCache cache(gmm);
  Matrix logdens = WeightedLogDensities(gmm, cache, utterance.frames);
  for (Eigen::Index t = 0; t < logdens.rows(); ++t) {
    double lse = LogSumExp(logdens.row(t).transpose());
    logdens.row(t) = (logdens.row(t).array() - lse).exp();
  }
  return logdens;
}

double GmmLogLikelihood(const FullGmm &gmm,
                        const std::vector<FeatureSequence> &corpus) {
  DensityCache cache(gmm);
  double ll = 0.0;
  for (const auto &utt : corpus) {
    if (utt.NumFrames() == 0) continue;
    Matrix logdens = WeightedLogDensities(gmm, cache, utt.frames);
    for (Eigen::Index t = 0; t < logdens.rows(); ++t)
      ll += LogSumExp(logdens.row(t).transpose());
  }
  return ll;
}

VadMask EnergyVad(const FeatureSequence &utterance, double threshold_fraction) {
  if (!utterance.HasEnergies())
    throw Error(err::kMissingEnergies,
                StrCat("utterance ", utterance.utterance_id,
                       " carries no frame energies; use an all-speech mask "
                       "(VadMask::AllSpeech) or disable VAD"));
  VadMask mask;
  double threshold = threshold_fraction * utterance.energies.mean();
  mask.speech.resize(static_cast<std::size_t>(utterance.NumFrames()));
  for (Eigen::Index t = 0; t < utterance.NumFrames(); ++t)
    mask.speech[static_cast<std::size_t>(t)] =
        utterance.energies[t] > threshold ? 1 : 0;
  return mask;
}

const Matrix &PosteriorArchive::Find(const std::string &utterance_id) const {
  for (std::size_t i = 0; i < utterance_ids.size(); ++i)
    if (utterance_ids[i] == utterance_id) return posteriors[i];
  throw Error(err::kPrecondition,
              StrCat("utterance ", utterance_id, " not in posterior archive"));
}

bool PosteriorArchive::Has(const std::string &utterance_id) const {
  return std::find(utterance_ids.begin(), utterance_ids.end(), utterance_id) !=
         utterance_ids.end();
}

void SaveFeatureArchive(const std::vector<FeatureSequence> &utterances,
                        const std::filesystem::path &path) {
  BinaryWriter w(path);
  w.WriteMagic("FEA1");
  for (const auto &utt : utterances) {
    w.WriteString(utt.utterance_id);
    w.WriteU32(static_cast<std::uint32_t>(utt.NumFrames()));
    w.WriteU32(static_cast<std::uint32_t>(utt.Dim()));
    w.WriteU8(utt.HasEnergies() ? 1 : 0);
    w.WriteMatrixF32(utt.frames);
    if (utt.HasEnergies()) w.WriteVectorF32(utt.energies);
  }
  w.Close();
}

std::vector<FeatureSequence> LoadFeatureArchive(
    const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("FEA1");
  std::vector<FeatureSequence> utterances;
  while (!r.AtEof()) {
    FeatureSequence utt;
    utt.utterance_id = r.ReadString();
    std::uint32_t T = r.ReadU32();
    std::uint32_t D = r.ReadU32();
    std::uint8_t has_energy = r.ReadU8();
    utt.frames = r.ReadMatrixF32(T, D);
    if (has_energy) utt.energies = r.ReadVectorF32(T);
    utterances.push_back(std::move(utt));
  }
  return utterances;
}

void SavePosteriorArchive(const PosteriorArchive &archive,
                          const std::filesystem::path &path) {
  if (archive.utterance_ids.size() != archive.posteriors.size())
    throw Error(err::kDimension, "posterior archive ids/matrices disagree");
  BinaryWriter w(path);
  w.WriteMagic("POS1");
  w.WriteU8(static_cast<std::uint8_t>(archive.source));
  for (std::size_t i = 0; i < archive.posteriors.size(); ++i) {
    const Matrix &post = archive.posteriors[i];
    w.WriteString(archive.utterance_ids[i]);
    w.WriteU32(static_cast<std::uint32_t>(post.rows()));
    w.WriteU32(static_cast<std::uint32_t>(post.cols()));
    w.WriteMatrixF32(post);
  }
  w.Close();
}

PosteriorArchive LoadPosteriorArchive(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("POS1");
  PosteriorArchive archive;
  std::uint8_t source = r.ReadU8();
  if (source > 2)
    throw Error(err::kFormat, StrCat("bad posterior source tag ", int(source)));
  archive.source = static_cast<PosteriorArchive::Source>(source);
  Eigen::Index num_components = -1;
  while (!r.AtEof()) {
    std::string id = r.ReadString();
    std::uint32_t T = r.ReadU32();
    std::uint32_t C = r.ReadU32();
    Matrix post = r.ReadMatrixF32(T, C);
    if (num_components < 0) num_components = post.cols();
    if (post.cols() != num_components)
      throw Error(err::kDimension,
                  StrCat("utterance ", id, " has ", post.cols(),
                         " components, archive has ", num_components));
    for (Eigen::Index t = 0; t < post.rows(); ++t) {
      double sum = post.row(t).sum();
      if (std::abs(sum - 1.0) > 1e-4)
        throw Error(err::kPosteriorRowSum,
                    StrCat("utterance ", id, " row ", t, " sums to ",
                           FormatFull(sum)));
      if (post.row(t).minCoeff() < -1e-7 || post.row(t).maxCoeff() > 1.0 + 1e-7)
        throw Error(err::kPosteriorRowSum,
                    StrCat("utterance ", id, " row ", t,
                           " has entries outside [0,1]"));
    }
    archive.utterance_ids.push_back(std::move(id));
    archive.posteriors.push_back(std::move(post));
  }
  return archive;
}

void SaveGmm(const FullGmm &gmm, const std::filesystem::path &path) {
  Eigen::Index C = gmm.NumComponents(), D = gmm.Dim();
  BinaryWriter w(path);
  w.WriteMagic("GMM1");
  w.WriteU32(static_cast<std::uint32_t>(C));
  w.WriteU32(static_cast<std::uint32_t>(D));
  w.WriteU8(gmm.diagonal ? 1 : 0);
  w.WriteVectorF64(gmm.weights);
  w.WriteMatrixF64(gmm.means);
  for (const auto &cov : gmm.covariances) {
    if (gmm.diagonal)
      w.WriteVectorF64(cov.diagonal());
    else
      w.WriteMatrixF64(cov);
  }
  w.Close();
}

FullGmm LoadGmm(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("GMM1");
  std::uint32_t C = r.ReadU32();
  std::uint32_t D = r.ReadU32();
  FullGmm gmm;
  gmm.diagonal = r.ReadU8() != 0;
  gmm.weights = r.ReadVectorF64(C);
  gmm.means = r.ReadMatrixF64(C, D);
  gmm.covariances.reserve(C);
  for (std::uint32_t c = 0; c < C; ++c) {
    if (gmm.diagonal) {
      Vector var = r.ReadVectorF64(D);
      gmm.covariances.push_back(Matrix(var.asDiagonal()));
    } else {
      gmm.covariances.push_back(r.ReadMatrixF64(D, D));
    }
  }
  return gmm;
}

}  // namespace ivmap
