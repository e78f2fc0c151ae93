// ivmap/corpus.cc

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

#include "ivmap/corpus.h"

#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "ivmap/io.h"

namespace ivmap {

void SyntheticSpec::Validate() const {
  if (num_speakers < 1 || utterances_per_speaker < 1 ||
      long_duration_frames < 1 || frame_rate < 1 || num_components < 1 ||
      feature_dim < 1 || true_rank < 1)
    throw Error(err::kPrecondition, "synthetic spec counts must be >= 1");
  if (speaker_subspace_scale <= 0.0 || channel_noise_scale < 0.0)
    throw Error(err::kPrecondition, "synthetic spec scales must be positive");
}

namespace {

std::string FormatId(const char *prefix, int index, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, index);
  return buf;
}

}  // namespace

SyntheticCorpus GenerateCorpus(const SyntheticSpec &spec) {
  spec.Validate();
  Eigen::Index C = spec.num_components, D = spec.feature_dim;
  Eigen::Index R = spec.true_rank;
  Eigen::Index Q = (R + 1) / 2;
  Eigen::Index num_utts =
      static_cast<Eigen::Index>(spec.num_speakers) * spec.utterances_per_speaker;

  SyntheticCorpus corpus;
  GroundTruth &truth = corpus.truth;

  // Planted model parameters come from one master stream.
  Rng master(Rng::Mix(spec.seed, 0));
  truth.ubm.diagonal = true;
  truth.ubm.weights.resize(C);
  for (Eigen::Index c = 0; c < C; ++c)
    truth.ubm.weights[c] = 0.5 + master.Uniform();
  truth.ubm.weights /= truth.ubm.weights.sum();
  truth.ubm.means.resize(C, D);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index d = 0; d < D; ++d)
      truth.ubm.means(c, d) = 3.0 * master.Gaussian();
  for (Eigen::Index c = 0; c < C; ++c) {
    Vector var(D);
    for (Eigen::Index d = 0; d < D; ++d) var[d] = master.Uniform(0.5, 1.5);
    truth.ubm.covariances.push_back(Matrix(var.asDiagonal()));
  }
  // T* scaled so a unit i-vector moves component means by about one frame
  // standard deviation.
  truth.tv.resize(C * D, R);
  double tv_scale = 1.0 / std::sqrt(static_cast<double>(R));
  for (Eigen::Index r = 0; r < truth.tv.rows(); ++r)
    for (Eigen::Index k = 0; k < R; ++k)
      truth.tv(r, k) = tv_scale * master.Gaussian();
  // Orthonormal speaker subspace via QR of a Gaussian draw.
  Matrix raw(R, Q);
  for (Eigen::Index r = 0; r < R; ++r)
    for (Eigen::Index q = 0; q < Q; ++q) raw(r, q) = master.Gaussian();
  Eigen::HouseholderQR<Matrix> qr(raw);
  truth.speaker_subspace =
      Matrix(qr.householderQ()).leftCols(Q);

  truth.speaker_latents.resize(spec.num_speakers, Q);
  truth.speaker_ids.reserve(static_cast<std::size_t>(spec.num_speakers));
  for (int s = 0; s < spec.num_speakers; ++s) {
    // Binary cohort attribute encoded in the id prefix (even -> f, odd -> m)
    // so gender-dependent runs can partition by name.
    truth.speaker_ids.push_back(FormatId(s % 2 == 0 ? "f" : "m", s, 4));
    Rng rng(Rng::Mix(spec.seed, 1000003ULL + static_cast<std::uint64_t>(s)));
    for (Eigen::Index q = 0; q < Q; ++q)
      truth.speaker_latents(s, q) = rng.Gaussian();
  }

  truth.utterance_w.resize(num_utts, R);
  corpus.utterances.reserve(static_cast<std::size_t>(num_utts));
  Eigen::Index utt_index = 0;
  for (int s = 0; s < spec.num_speakers; ++s) {
    Vector speaker_component =
        spec.speaker_subspace_scale *
        (truth.speaker_subspace * truth.speaker_latents.row(s).transpose());
    for (int u = 0; u < spec.utterances_per_speaker; ++u, ++utt_index) {
      Rng rng(Rng::Mix(spec.seed,
                       2000003ULL + static_cast<std::uint64_t>(utt_index)));
      Vector w = speaker_component;
      for (Eigen::Index r = 0; r < R; ++r)
        w[r] += spec.channel_noise_scale * rng.Gaussian();
      truth.utterance_w.row(utt_index) = w.transpose();

      Matrix shifted_means = truth.ubm.means;
      Vector offset = truth.tv * w;  // supervector offset
      for (Eigen::Index c = 0; c < C; ++c)
        shifted_means.row(c) += offset.segment(c * D, D).transpose();

      FeatureSequence utt;
      utt.utterance_id =
          StrCat(truth.speaker_ids[static_cast<std::size_t>(s)], "-u",
                 FormatId("", u, 2));
      utt.frames.resize(spec.long_duration_frames, D);
      utt.energies = Vector::Ones(spec.long_duration_frames);
      for (Eigen::Index t = 0; t < spec.long_duration_frames; ++t) {
        double u01 = rng.Uniform();
        Eigen::Index comp = 0;
        double cum = 0.0;
        for (Eigen::Index c = 0; c < C; ++c) {
          cum += truth.ubm.weights[c];
          if (u01 < cum) {
            comp = c;
            break;
          }
          comp = c;  // numerical tail lands in the last component
        }
        for (Eigen::Index d = 0; d < D; ++d)
          utt.frames(t, d) =
              shifted_means(comp, d) +
              std::sqrt(truth.ubm.covariances[static_cast<std::size_t>(comp)](d, d)) *
                  rng.Gaussian();
      }
      truth.utterance_ids.push_back(utt.utterance_id);
      truth.utterance_speaker.push_back(s);
      corpus.labels.emplace_back(utt.utterance_id,
                                 truth.speaker_ids[static_cast<std::size_t>(s)]);
      corpus.utterances.push_back(std::move(utt));
    }
  }
  return corpus;
}

std::string SegmentId(const std::string &parent_id, int segment_index) {
  return StrCat(parent_id, "_seg", FormatId("", segment_index, 3));
}

std::string ParentIdOfSegment(const std::string &segment_id) {
  auto pos = segment_id.rfind("_seg");
  if (pos == std::string::npos) return segment_id;
  return segment_id.substr(0, pos);
}

std::vector<FeatureSequence> Truncate(const FeatureSequence &utterance,
                                      int window_frames, bool *degenerate) {
  if (window_frames < 1)
    throw Error(err::kPrecondition, "window must be at least one frame");
  if (degenerate) *degenerate = false;
  std::vector<FeatureSequence> segments;
  Eigen::Index T = utterance.NumFrames();
  Eigen::Index window = window_frames;
  Eigen::Index shift = window / 2;
  if (T < window) {
    FeatureSequence seg;
    seg.utterance_id = SegmentId(utterance.utterance_id, 0);
    seg.frames = utterance.frames;
    seg.energies = utterance.energies;
    segments.push_back(std::move(seg));
    if (degenerate) *degenerate = true;
    return segments;
  }
  int index = 0;
  for (Eigen::Index start = 0; start + window <= T; start += shift, ++index) {
    FeatureSequence seg;
    seg.utterance_id = SegmentId(utterance.utterance_id, index);
    seg.frames = utterance.frames.middleRows(start, window);
    if (utterance.HasEnergies())
      seg.energies = utterance.energies.segment(start, window);
    segments.push_back(std::move(seg));
  }
  return segments;
}

TruncatedCorpus TruncateCorpus(const std::vector<FeatureSequence> &utterances,
                               const TruncationSpec &spec) {
  TruncatedCorpus out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    int window_seconds;
    switch (spec.window) {
      case TruncationWindow::k5s:
        window_seconds = 5;
        break;
      case TruncationWindow::k10s:
        window_seconds = 10;
        break;
      case TruncationWindow::kMixed:
        window_seconds = (i % 2 == 0) ? 5 : 10;
        break;
      default:
        throw Error(err::kPrecondition, "bad truncation window");
    }
    int window_frames = window_seconds * spec.frame_rate;
    bool degenerate = false;
    auto segments = Truncate(utterances[i], window_frames, &degenerate);
    Eigen::Index shift = window_frames / 2;
    for (std::size_t k = 0; k < segments.size(); ++k) {
      TruncationRecord record;
      record.segment_id = segments[k].utterance_id;
      record.parent_id = utterances[i].utterance_id;
      record.start_frame = degenerate ? 0 : static_cast<Eigen::Index>(k) * shift;
      record.num_frames = segments[k].NumFrames();
      record.degenerate = degenerate;
      out.records.push_back(std::move(record));
      out.segments.push_back(std::move(segments[k]));
    }
  }
  return out;
}

PairedIvectors BuildPairs(const IvectorSet &short_ivectors,
                          const IvectorSet &long_ivectors) {
  if (short_ivectors.Count() == 0)
    throw Error(err::kEmpty, "no short i-vectors to pair");
  if (short_ivectors.Dim() != long_ivectors.Dim())
    throw Error(err::kDimension, "short/long i-vector dims differ");
  std::unordered_map<std::string, Eigen::Index> long_index;
  for (Eigen::Index i = 0; i < long_ivectors.Count(); ++i)
    long_index.emplace(long_ivectors.ids[static_cast<std::size_t>(i)], i);
  PairedIvectors pairs;
  pairs.short_ids = short_ivectors.ids;
  pairs.shorts = short_ivectors.vectors;
  pairs.longs.resize(short_ivectors.Count(), short_ivectors.Dim());
  for (Eigen::Index i = 0; i < short_ivectors.Count(); ++i) {
    const std::string &sid = short_ivectors.ids[static_cast<std::size_t>(i)];
    auto it = long_index.find(ParentIdOfSegment(sid));
    if (it == long_index.end())
      throw Error(err::kOrphanSegment,
                  StrCat("segment ", sid, " has no parent long utterance"));
    pairs.longs.row(i) = long_ivectors.vectors.row(it->second);
  }
  return pairs;
}

TrialSet BuildTrials(const std::vector<std::string> &utterance_ids,
                     const std::vector<std::string> &speakers,
                     const TrialBuildOptions &opts,
                     std::vector<std::string> *warnings) {
  if (utterance_ids.size() != speakers.size())
    throw Error(err::kDimension, "utterance/speaker label count mismatch");
  std::size_t n = utterance_ids.size();
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[speakers[i]].push_back(i);
  if (groups.size() < 2)
    throw Error(err::kSingleSpeaker, "trial building needs >= 2 speakers");
  if (opts.num_target < 0 || opts.num_nontarget < 0)
    throw Error(err::kPrecondition, "trial counts must be >= 0");
  if (opts.num_target == 0 && warnings)
    warnings->push_back(
        "no target trials requested; EER/DCF will fail on this set");

  // Available same-speaker pairs (unordered, distinct utterances).
  std::size_t target_pool = 0;
  for (const auto &[speaker, rows] : groups)
    target_pool += rows.size() * (rows.size() - 1) / 2;
  std::size_t nontarget_pool = n * (n - 1) / 2 - target_pool;
  if (static_cast<std::size_t>(opts.num_target) > target_pool)
    throw Error(err::kTrialCount,
                StrCat("requested ", opts.num_target, " target trials, only ",
                       target_pool, " same-speaker pairs exist"));
  if (static_cast<std::size_t>(opts.num_nontarget) > nontarget_pool)
    throw Error(err::kTrialCount,
                StrCat("requested ", opts.num_nontarget,
                       " nontarget trials, only ", nontarget_pool,
                       " cross-speaker pairs exist"));

  Rng rng(opts.seed);
  TrialSet set;
  std::set<std::pair<std::size_t, std::size_t>> used;
  auto sample_pair = [&](bool want_target) {
    while (true) {
      std::size_t a = static_cast<std::size_t>(rng.UniformInt(n));
      std::size_t b = static_cast<std::size_t>(rng.UniformInt(n));
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      bool same = speakers[a] == speakers[b];
      if (same != want_target) continue;
      if (!used.insert({a, b}).second) continue;
      Trial t;
      t.enroll_id = utterance_ids[a];
      t.test_id = utterance_ids[b];
      t.target = want_target;
      set.trials.push_back(std::move(t));
      return;
    }
  };
  for (int i = 0; i < opts.num_target; ++i) sample_pair(true);
  for (int i = 0; i < opts.num_nontarget; ++i) sample_pair(false);
  return set;
}

void SaveGroundTruth(const GroundTruth &truth,
                     const std::filesystem::path &path) {
  BinaryWriter w(path);
  w.WriteMagic("GT01");
  Eigen::Index C = truth.ubm.NumComponents(), D = truth.ubm.Dim();
  w.WriteU32(static_cast<std::uint32_t>(C));
  w.WriteU32(static_cast<std::uint32_t>(D));
  w.WriteU32(static_cast<std::uint32_t>(truth.tv.cols()));
  w.WriteU32(static_cast<std::uint32_t>(truth.speaker_subspace.cols()));
  w.WriteU32(static_cast<std::uint32_t>(truth.speaker_ids.size()));
  w.WriteU32(static_cast<std::uint32_t>(truth.utterance_ids.size()));
  w.WriteVectorF64(truth.ubm.weights);
  w.WriteMatrixF64(truth.ubm.means);
  for (const auto &cov : truth.ubm.covariances) w.WriteVectorF64(cov.diagonal());
  w.WriteMatrixF64(truth.tv);
  w.WriteMatrixF64(truth.speaker_subspace);
  w.WriteMatrixF64(truth.speaker_latents);
  for (const auto &id : truth.speaker_ids) w.WriteString(id);
  for (std::size_t i = 0; i < truth.utterance_ids.size(); ++i) {
    w.WriteString(truth.utterance_ids[i]);
    w.WriteU32(static_cast<std::uint32_t>(truth.utterance_speaker[i]));
  }
  w.WriteMatrixF64(truth.utterance_w);
  w.Close();
}

GroundTruth LoadGroundTruth(const std::filesystem::path &path) {
  BinaryReader r(path);
  r.ExpectMagic("GT01");
  std::uint32_t C = r.ReadU32();
  std::uint32_t D = r.ReadU32();
  std::uint32_t R = r.ReadU32();
  std::uint32_t Q = r.ReadU32();
  std::uint32_t num_speakers = r.ReadU32();
  std::uint32_t num_utts = r.ReadU32();
  GroundTruth truth;
  truth.ubm.diagonal = true;
  truth.ubm.weights = r.ReadVectorF64(C);
  truth.ubm.means = r.ReadMatrixF64(C, D);
  for (std::uint32_t c = 0; c < C; ++c) {
    Vector var = r.ReadVectorF64(D);
    truth.ubm.covariances.push_back(Matrix(var.asDiagonal()));
  }
  truth.tv = r.ReadMatrixF64(static_cast<Eigen::Index>(C) * D, R);
  truth.speaker_subspace = r.ReadMatrixF64(R, Q);
  truth.speaker_latents = r.ReadMatrixF64(num_speakers, Q);
  for (std::uint32_t s = 0; s < num_speakers; ++s)
    truth.speaker_ids.push_back(r.ReadString());
  for (std::uint32_t u = 0; u < num_utts; ++u) {
    truth.utterance_ids.push_back(r.ReadString());
    truth.utterance_speaker.push_back(static_cast<int>(r.ReadU32()));
  }
  truth.utterance_w = r.ReadMatrixF64(num_utts, R);
  return truth;
}

void SaveTruncationRecords(const std::vector<TruncationRecord> &records,
                           const std::filesystem::path &path) {
  std::ostringstream os;
  os << "segment_id,parent_id,start_frame,num_frames,degenerate\n";
  for (const auto &rec : records)
    os << rec.segment_id << ',' << rec.parent_id << ',' << rec.start_frame
       << ',' << rec.num_frames << ',' << (rec.degenerate ? 1 : 0) << '\n';
  WriteTextFile(path, os.str());
}

}  // namespace ivmap
