// ivmap/corpus.h

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

#ifndef IVMAP_CORPUS_H_
#define IVMAP_CORPUS_H_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ivmap/common.h"
#include "ivmap/mapper.h"
#include "ivmap/plda.h"
#include "ivmap/tv.h"
#include "ivmap/ubm.h"

namespace ivmap {

/// Knobs of the planted generative model: frames are drawn from a GMM whose
/// per-utterance supervector offset is T* w, with w built from a low-rank
/// speaker term plus channel noise.
struct SyntheticSpec {
  int num_speakers = 50;
  int utterances_per_speaker = 2;
  int long_duration_frames = 10000;
  int frame_rate = 100;  // frames per second
  int num_components = 8;       // C of the planted GMM
  int feature_dim = 8;          // D
  int true_rank = 16;           // rank of the planted T*
  double speaker_subspace_scale = 1.0;
  double channel_noise_scale = 0.5;
  std::uint64_t seed = 0;

  void Validate() const;
};

/// Everything needed to recompute any planted quantity in oracle tests.
struct GroundTruth {
  FullGmm ubm;              // planted mixture (diagonal covariances)
  Matrix tv;                // T*: (C*D) x true_rank
  Matrix speaker_subspace;  // U*: true_rank x Q (Q = ceil(true_rank / 2))
  std::vector<std::string> speaker_ids;
  Matrix speaker_latents;   // num_speakers x Q
  std::vector<std::string> utterance_ids;
  std::vector<int> utterance_speaker;  // index into speaker_ids
  Matrix utterance_w;       // num_utterances x true_rank
};

struct SyntheticCorpus {
  std::vector<FeatureSequence> utterances;
  GroundTruth truth;
  std::vector<std::pair<std::string, std::string>> labels;  // utt -> speaker
};

/// Deterministic per seed; every utterance is generated from its own
/// derived stream so generation order cannot matter.  Frame energies are a
/// constant 1.0, so default VAD keeps everything.
SyntheticCorpus GenerateCorpus(const SyntheticSpec &spec);

enum class TruncationWindow : std::uint8_t { k5s = 0, k10s = 1, kMixed = 2 };

struct TruncationSpec {
  TruncationWindow window = TruncationWindow::k10s;
  int frame_rate = 100;  // shift is always half the window
};

/// Cuts fixed-length segments at half-window stride.  An utterance shorter
/// than the window yields a single full copy with `degenerate` flagged.
std::vector<FeatureSequence> Truncate(const FeatureSequence &utterance,
                                      int window_frames,
                                      bool *degenerate = nullptr);

struct TruncationRecord {
  std::string segment_id;
  std::string parent_id;
  Eigen::Index start_frame = 0;
  Eigen::Index num_frames = 0;
  bool degenerate = false;
};

/// Applies the window spec to every utterance; in mixed mode parents
/// alternate between the 5 s and 10 s window by position.
struct TruncatedCorpus {
  std::vector<FeatureSequence> segments;
  std::vector<TruncationRecord> records;
};
TruncatedCorpus TruncateCorpus(const std::vector<FeatureSequence> &utterances,
                               const TruncationSpec &spec);

/// Segment-id naming used by Truncate: parent + "_seg" + index.
std::string SegmentId(const std::string &parent_id, int segment_index);
/// Inverse of SegmentId; returns the input unchanged when no suffix.
std::string ParentIdOfSegment(const std::string &segment_id);

/// One pair per short i-vector, matched to the parent long i-vector by id
/// prefix.  Errors (ORPHAN_SEGMENT) when a short id has no parent entry.
struct PairedIvectors {
  std::vector<std::string> short_ids;
  Matrix shorts;  // N x R
  Matrix longs;   // N x R
};
PairedIvectors BuildPairs(const IvectorSet &short_ivectors,
                          const IvectorSet &long_ivectors);

struct TrialBuildOptions {
  int num_target = 100;
  int num_nontarget = 1000;
  std::uint64_t seed = 0;
};

/// Seeded sampling without replacement; never pairs an utterance with
/// itself; target trials share a speaker, nontarget trials do not.
TrialSet BuildTrials(const std::vector<std::string> &utterance_ids,
                     const std::vector<std::string> &speakers,
                     const TrialBuildOptions &opts,
                     std::vector<std::string> *warnings = nullptr);

// Ground-truth file "GT01".
void SaveGroundTruth(const GroundTruth &truth,
                     const std::filesystem::path &path);
GroundTruth LoadGroundTruth(const std::filesystem::path &path);

// Truncation-record CSV: segment_id,parent_id,start_frame,num_frames,degenerate
void SaveTruncationRecords(const std::vector<TruncationRecord> &records,
                           const std::filesystem::path &path);

}  // namespace ivmap

#endif  // IVMAP_CORPUS_H_
