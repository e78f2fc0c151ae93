// ivmap/plda.cc

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

#include "ivmap/plda.h"

#include <map>
#include <sstream>

#include "ivmap/io.h"

namespace ivmap {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Speaker name -> row indices, in order of first appearance.
std::vector<std::pair<std::string, std::vector<Eigen::Index>>> GroupBySpeaker(
    const IvectorSet &ivectors, const std::vector<std::string> &speakers) {
  if (static_cast<Eigen::Index>(speakers.size()) != ivectors.Count())
    throw Error(err::kDimension, "speaker labels do not match i-vector count");
  std::vector<std::pair<std::string, std::vector<Eigen::Index>>> groups;
  std::map<std::string, std::size_t> index;
  for (Eigen::Index i = 0; i < ivectors.Count(); ++i) {
    auto it = index.find(speakers[static_cast<std::size_t>(i)]);
    if (it == index.end()) {
      index.emplace(speakers[static_cast<std::size_t>(i)], groups.size());
      groups.push_back({speakers[static_cast<std::size_t>(i)], {i}});
    } else {
      groups[it->second].second.push_back(i);
    }
  }
  return groups;
}

double LogDetFromLlt(const Eigen::LLT<Matrix> &llt) {
  double logdet = 0.0;
  Matrix l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  return logdet;
}

// Clamps eigenvalues from below to keep a covariance SPD.
Matrix FloorSpd(const Matrix &m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  if (eig.eigenvalues().minCoeff() >= floor) return m;
  Vector vals = eig.eigenvalues().cwiseMax(floor);
  Matrix out = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace

IvectorSet Preprocess(const IvectorSet &input, bool fit, Preprocessing *prep) {
  if (fit) {
    if (input.Count() < 2)
      throw Error(err::kPrecondition,
                  "fitting preprocessing needs at least 2 vectors");
    prep->mean = input.vectors.colwise().mean().transpose();
  }
  if (prep->mean.size() != input.Dim())
    throw Error(err::kDimension,
                StrCat("preprocessing mean has dim ", prep->mean.size(),
                       ", vectors have dim ", input.Dim()));
  CheckFinite(prep->mean, "preprocessing mean");
  IvectorSet out;
  out.ids = input.ids;
  Matrix centered = input.vectors.rowwise() - prep->mean.transpose();
  if (prep->HasLda()) {
    if (prep->lda.rows() != input.Dim())
      throw Error(err::kDimension, "LDA matrix does not match i-vector dim");
    centered = centered * prep->lda;
  }
  out.vectors.resize(centered.rows(), centered.cols());
  for (Eigen::Index i = 0; i < centered.rows(); ++i) {
    double norm = centered.row(i).norm();
    if (norm <= 0.0)
      throw Error(err::kZeroVector,
                  StrCat("utterance ", out.ids[static_cast<std::size_t>(i)],
                         " is zero after mean subtraction; cannot "
                         "length-normalize"));
    out.vectors.row(i) = centered.row(i) / norm;
  }
  return out;
}

Matrix TrainLda(const IvectorSet &ivectors,
                const std::vector<std::string> &speakers, int out_dim,
                std::vector<std::string> *warnings) {
  auto groups = GroupBySpeaker(ivectors, speakers);
  Eigen::Index dim = ivectors.Dim();
  Eigen::Index num_speakers = static_cast<Eigen::Index>(groups.size());
  if (num_speakers < 2)
    throw Error(err::kSingleSpeaker, "LDA needs at least 2 speakers");
  if (out_dim < 1 || out_dim > std::min(dim, num_speakers - 1))
    throw Error(err::kPrecondition,
                StrCat("LDA out_dim ", out_dim, " must be in [1, ",
                       std::min(dim, num_speakers - 1), "]"));

  Vector global_mean = ivectors.vectors.colwise().mean().transpose();
  Matrix within = Matrix::Zero(dim, dim);
  Matrix between = Matrix::Zero(dim, dim);
  for (const auto &[speaker, rows] : groups) {
    Vector speaker_mean = Vector::Zero(dim);
    for (Eigen::Index r : rows)
      speaker_mean += ivectors.vectors.row(r).transpose();
    speaker_mean /= static_cast<double>(rows.size());
    for (Eigen::Index r : rows) {
      Vector d = ivectors.vectors.row(r).transpose() - speaker_mean;
      within += d * d.transpose();
    }
    Vector d = speaker_mean - global_mean;
    between += static_cast<double>(rows.size()) * d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Matrix> within_eig(within);
  if (within_eig.eigenvalues().minCoeff() <=
      1e-12 * std::max(1.0, within_eig.eigenvalues().maxCoeff())) {
    within += 1e-6 * Matrix::Identity(dim, dim);
    if (warnings)
      warnings->push_back("within-class scatter singular; ridge 1e-6 added");
  }
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(between, within);
  if (solver.info() != Eigen::Success)
    throw Error(err::kPrecondition, "LDA generalized eigensolve failed");
  // Eigenvalues come out ascending; take the trailing out_dim columns.
  Matrix lda(dim, out_dim);
  for (int k = 0; k < out_dim; ++k) {
    Vector v = solver.eigenvectors().col(dim - 1 - k);
    // Deterministic sign: largest-magnitude entry positive.
    Eigen::Index argmax;
    v.cwiseAbs().maxCoeff(&argmax);
    if (v[argmax] < 0.0) v = -v;
    lda.col(k) = v;
  }
  return lda;
}

PldaTrainResult TrainPldaEm(const IvectorSet &ivectors,
                            const std::vector<std::string> &speakers,
                            const PldaTrainOptions &opts) {
  auto groups = GroupBySpeaker(ivectors, speakers);
  if (groups.size() < 2)
    throw Error(err::kSingleSpeaker,
                "PLDA between-speaker subspace is unidentifiable with a "
                "single speaker");
  if (opts.speaker_rank < 0)
    throw Error(err::kPrecondition, "speaker rank must be >= 0");
  Eigen::Index dim = ivectors.Dim();
  Eigen::Index Q = opts.speaker_rank;
  if (Q > dim)
    throw Error(err::kPrecondition,
                StrCat("speaker rank ", Q, " exceeds i-vector dim ", dim));
  Eigen::Index total = ivectors.Count();

  PldaTrainResult result;
  PldaModel model;
  model.mean = ivectors.vectors.colwise().mean().transpose();
  Matrix centered = ivectors.vectors.rowwise() - model.mean.transpose();

  // Init: U from the PCA of speaker means (scaled by sqrt eigenvalue);
  // leftover columns, if the mean covariance is rank-deficient, are filled
  // with small seeded Gaussian noise.
  Matrix speaker_means(static_cast<Eigen::Index>(groups.size()), dim);
  Matrix within_cov = Matrix::Zero(dim, dim);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Vector m = Vector::Zero(dim);
    for (Eigen::Index r : groups[g].second) m += centered.row(r).transpose();
    m /= static_cast<double>(groups[g].second.size());
    speaker_means.row(static_cast<Eigen::Index>(g)) = m.transpose();
    for (Eigen::Index r : groups[g].second) {
      Vector d = centered.row(r).transpose() - m;
      within_cov += d * d.transpose();
    }
  }
  within_cov /= static_cast<double>(total);
  Matrix mean_cov = speaker_means.transpose() * speaker_means /
                    static_cast<double>(groups.size());
  Eigen::SelfAdjointEigenSolver<Matrix> mean_eig(mean_cov);
  Rng rng(opts.seed);
  model.between.resize(dim, Q);
  for (Eigen::Index q = 0; q < Q; ++q) {
    Eigen::Index src = dim - 1 - q;  // eigenvalues ascend
    double value = src >= 0 ? mean_eig.eigenvalues()[src] : 0.0;
    if (src >= 0 && value > 1e-12) {
      model.between.col(q) = mean_eig.eigenvectors().col(src) * std::sqrt(value);
    } else {
      for (Eigen::Index r = 0; r < dim; ++r)
        model.between(r, q) = 0.01 * rng.Gaussian();
    }
  }
  double total_var = centered.array().square().sum() / static_cast<double>(total);
  double floor = 1e-10 * std::max(total_var, 1e-30);
  if (within_cov.trace() <= floor * static_cast<double>(dim))
    within_cov = (0.1 * total_var / static_cast<double>(dim)) *
                 Matrix::Identity(dim, dim);
  model.residual = FloorSpd(within_cov, floor);

  for (int iter = 0; iter < opts.iters; ++iter) {
    Eigen::LLT<Matrix> res_llt(model.residual);
    if (res_llt.info() != Eigen::Success)
      throw Error(err::kPrecondition, "PLDA residual covariance not PD");
    Matrix res_inv = res_llt.solve(Matrix::Identity(dim, dim));
    double res_logdet = LogDetFromLlt(res_llt);
    Matrix gram = model.between.transpose() * res_inv * model.between;  // Q x Q

    double log_likelihood = 0.0;
    Matrix latent_cross = Matrix::Zero(dim, Q);   // sum_s phi_s x_hat'
    Matrix latent_moment = Matrix::Zero(Q, Q);    // sum_s n_s E[x x']
    Matrix scatter = Matrix::Zero(dim, dim);      // sum_i w~ w~'
    for (const auto &[speaker, rows] : groups) {
      double n = static_cast<double>(rows.size());
      Vector phi = Vector::Zero(dim);
      double quad = 0.0;
      for (Eigen::Index r : rows) {
        Vector w = centered.row(r).transpose();
        phi += w;
        quad += w.dot(res_inv * w);
        scatter += w * w.transpose();
      }
      Matrix precision = Matrix::Identity(Q, Q) + n * gram;
      Eigen::LLT<Matrix> prec_llt(precision);
      Vector info = model.between.transpose() * (res_inv * phi);
      Vector x_hat = prec_llt.solve(info);
      Matrix x_cov = prec_llt.solve(Matrix::Identity(Q, Q));
      log_likelihood += -0.5 * quad -
                        0.5 * n * (static_cast<double>(dim) * kLog2Pi + res_logdet) -
                        0.5 * LogDetFromLlt(prec_llt) + 0.5 * info.dot(x_hat);
      latent_cross += phi * x_hat.transpose();
      latent_moment += n * (x_cov + x_hat * x_hat.transpose());
    }
    result.log_likelihoods.push_back(log_likelihood);

    if (Q > 0) {
      Eigen::LDLT<Matrix> moment_ldlt(latent_moment);
      model.between = moment_ldlt.solve(latent_cross.transpose()).transpose();
    }
    Matrix residual =
        (scatter - latent_cross * model.between.transpose()) /
        static_cast<double>(total);
    residual = 0.5 * (residual + residual.transpose());
    model.residual = FloorSpd(residual, floor);
  }
  result.log_likelihoods.push_back(
      PldaLogLikelihood(ivectors, speakers, model));
  result.model = std::move(model);
  return result;
}

double PldaLogLikelihood(const IvectorSet &ivectors,
                         const std::vector<std::string> &speakers,
                         const PldaModel &model) {
  auto groups = GroupBySpeaker(ivectors, speakers);
  Eigen::Index dim = model.Dim();
  Eigen::Index Q = model.SpeakerRank();
  Eigen::LLT<Matrix> res_llt(model.residual);
  if (res_llt.info() != Eigen::Success)
    throw Error(err::kPrecondition, "PLDA residual covariance not PD");
  Matrix res_inv = res_llt.solve(Matrix::Identity(dim, dim));
  double res_logdet = LogDetFromLlt(res_llt);
  Matrix gram = model.between.transpose() * res_inv * model.between;
  Matrix centered = ivectors.vectors.rowwise() - model.mean.transpose();
  double log_likelihood = 0.0;
  for (const auto &[speaker, rows] : groups) {
    double n = static_cast<double>(rows.size());
    Vector phi = Vector::Zero(dim);
    double quad = 0.0;
    for (Eigen::Index r : rows) {
      Vector w = centered.row(r).transpose();
      phi += w;
      quad += w.dot(res_inv * w);
    }
    Matrix precision = Matrix::Identity(Q, Q) + n * gram;
    Eigen::LLT<Matrix> prec_llt(precision);
    Vector info = model.between.transpose() * (res_inv * phi);
    Vector x_hat = prec_llt.solve(info);
    log_likelihood += -0.5 * quad -
                      0.5 * n * (static_cast<double>(dim) * kLog2Pi + res_logdet) -
                      0.5 * LogDetFromLlt(prec_llt) + 0.5 * info.dot(x_hat);
  }
  return log_likelihood;
}

double PldaScorer::GaussianTerm::LogDensity(const Vector &centered) const {
  Vector solved = chol.triangularView<Eigen::Lower>().solve(centered);
  return log_norm - 0.5 * solved.squaredNorm();
}

PldaScorer::PldaScorer(const PldaModel &model) : mean_(model.mean) {
  Eigen::Index dim = model.Dim();
  Matrix between_cov = model.between * model.between.transpose();
  auto build = [dim](const Matrix &cov) {
    GaussianTerm term;
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
      throw Error(err::kPrecondition, "PLDA scoring covariance not PD");
    term.chol = llt.matrixL();
    term.log_norm =
        -0.5 * (static_cast<double>(dim) * kLog2Pi + LogDetFromLlt(llt));
    return term;
  };
  total_ = build(between_cov + model.residual);
  sum_ = build(2.0 * between_cov + model.residual);
  diff_ = build(model.residual);
}

double PldaScorer::Score(const Vector &enroll, const Vector &test) const {
  if (enroll.size() != mean_.size() || test.size() != mean_.size())
    throw Error(err::kDimension, "i-vector dim does not match PLDA model");
  const double inv_sqrt2 = M_SQRT1_2;
  // Rotate to (sum, difference)/sqrt(2): the same-speaker joint Gaussian
  // block-diagonalizes, and every term below is symmetric in the inputs.
  Vector sum_coord = (enroll + test) * inv_sqrt2 - mean_ * (2.0 * inv_sqrt2);
  Vector diff_coord = (enroll - test) * inv_sqrt2;
  double joint = sum_.LogDensity(sum_coord) + diff_.LogDensity(diff_coord);
  double marginals =
      total_.LogDensity(enroll - mean_) + total_.LogDensity(test - mean_);
  return joint - marginals;
}

double ScoreLlr(const PldaModel &model, const Vector &enroll,
                const Vector &test) {
  return PldaScorer(model).Score(enroll, test);
}

void SavePldaModel(const PldaModel &model, const std::filesystem::path &path) {
  BinaryWriter w(path);
  w.WriteMagic("PLD1");
  w.WriteU32(static_cast<std::uint32_t>(model.Dim()));
  w.WriteU32(static_cast<std::uint32_t>(model.SpeakerRank()));
  w.WriteVectorF64(model.mean);
  w.WriteMatrixF64(model.between);
  w.WriteMatrixF64(model.residual);
  w.WriteU32(static_cast<std::uint32_t>(model.preprocessing.mean.size()));
  w.WriteVectorF64(model.preprocessing.mean);
  w.WriteU8(model.preprocessing.HasLda() ? 1 : 0);
  if (model.preprocessing.HasLda()) {
    w.WriteU32(static_cast<std::uint32_t>(model.preprocessing.lda.cols()));
    w.WriteMatrixF64(model.preprocessing.lda);
  }
  w.Close();
}

PldaModel LoadPldaModel(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("PLD1");
  std::uint32_t dim = r.ReadU32();
  std::uint32_t q = r.ReadU32();
  PldaModel model;
  model.mean = r.ReadVectorF64(dim);
  model.between = r.ReadMatrixF64(dim, q);
  model.residual = r.ReadMatrixF64(dim, dim);
  std::uint32_t in_dim = r.ReadU32();
  model.preprocessing.mean = r.ReadVectorF64(in_dim);
  if (r.ReadU8() != 0) {
    std::uint32_t out_dim = r.ReadU32();
    model.preprocessing.lda = r.ReadMatrixF64(in_dim, out_dim);
  }
  return model;
}

void SaveTrialSet(const TrialSet &trials, const std::filesystem::path &path) {
  std::ostringstream os;
  for (const auto &t : trials.trials)
    os << t.enroll_id << '\t' << t.test_id << '\t'
       << (t.target ? "target" : "nontarget") << '\n';
  WriteTextFile(path, os.str());
}

TrialSet LoadTrialSet(const std::filesystem::path &path) {
  std::istringstream is(ReadTextFile(path));
  TrialSet set;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    Trial t;
    std::string label;
    if (!std::getline(fields, t.enroll_id, '\t') ||
        !std::getline(fields, t.test_id, '\t') ||
        !std::getline(fields, label))
      throw Error(err::kFormat,
                  StrCat("bad trial line ", line_no, " in ", path.string()));
    if (label == "target")
      t.target = true;
    else if (label == "nontarget")
      t.target = false;
    else
      throw Error(err::kFormat,
                  StrCat("bad trial label '", label, "' at line ", line_no));
    set.trials.push_back(std::move(t));
  }
  return set;
}

void SaveScoreFile(const std::vector<Trial> &trials,
                   const std::vector<double> &scores,
                   const std::filesystem::path &path) {
  if (trials.size() != scores.size())
    throw Error(err::kDimension, "trial/score count mismatch");
  std::ostringstream os;
  for (std::size_t i = 0; i < trials.size(); ++i)
    os << trials[i].enroll_id << '\t' << trials[i].test_id << '\t'
       << FormatFull(scores[i]) << '\n';
  WriteTextFile(path, os.str());
}

ScoredTrialFile LoadScoreFile(const std::filesystem::path &path) {
  std::istringstream is(ReadTextFile(path));
  ScoredTrialFile file;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    Trial t;
    std::string score_text;
    if (!std::getline(fields, t.enroll_id, '\t') ||
        !std::getline(fields, t.test_id, '\t') ||
        !std::getline(fields, score_text))
      throw Error(err::kFormat,
                  StrCat("bad score line ", line_no, " in ", path.string()));
    file.trials.push_back(std::move(t));
    file.scores.push_back(std::stod(score_text));
  }
  return file;
}

void SaveLdaMatrix(const Matrix &lda, const std::filesystem::path &path) {
  BinaryWriter w(path);
  w.WriteMagic("LDA1");
  w.WriteU32(static_cast<std::uint32_t>(lda.rows()));
  w.WriteU32(static_cast<std::uint32_t>(lda.cols()));
  w.WriteMatrixF64(lda);
  w.Close();
}

Matrix LoadLdaMatrix(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("LDA1");
  std::uint32_t rows = r.ReadU32();
  std::uint32_t cols = r.ReadU32();
  return r.ReadMatrixF64(rows, cols);
}

void SaveLabels(const std::vector<std::pair<std::string, std::string>> &labels,
                const std::filesystem::path &path) {
  std::ostringstream os;
  for (const auto &[utt, speaker] : labels) os << utt << '\t' << speaker << '\n';
  WriteTextFile(path, os.str());
}

std::vector<std::pair<std::string, std::string>> LoadLabels(
    const std::filesystem::path &path) {
  std::istringstream is(ReadTextFile(path));
  std::vector<std::pair<std::string, std::string>> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(err::kFormat,
                  StrCat("bad label line ", line_no, " in ", path.string()));
    labels.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return labels;
}

}  // namespace ivmap
