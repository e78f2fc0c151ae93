// ivmap/cli.cc

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

#include "ivmap/cli.h"

#include <chrono>
#include <functional>
#include <unordered_map>

#include <json.hpp>

#include "ivmap/config.h"
#include "ivmap/corpus.h"
#include "ivmap/eval.h"
#include "ivmap/io.h"
#include "ivmap/mapper.h"
#include "ivmap/plda.h"
#include "ivmap/tv.h"
#include "ivmap/ubm.h"

namespace ivmap {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char *kSubcommands[] = {
    "synth-corpus", "train-ubm",    "posteriors", "stats",
    "train-tv",     "extract",      "train-plda", "train-lda",
    "train-mapper", "map",          "score",      "evaluate",
    "sweep-alpha",  "sweep-depth"};

/// Collects every missing required key so config problems surface together.
class KeyCheck {
 public:
  explicit KeyCheck(const ExperimentConfig &cfg) : cfg_(cfg) {}
  fs::path Path(const char *key) {
    if (!cfg_.Has(key)) {
      missing_.push_back(key);
      return {};
    }
    return cfg_.GetPath(key);
  }
  void Finish() const {
    if (missing_.empty()) return;
    std::string joined;
    for (std::size_t i = 0; i < missing_.size(); ++i)
      joined += (i ? "; " : "") + StrCat("missing required key '", missing_[i], "'");
    throw Error(err::kConfig, joined);
  }

 private:
  const ExperimentConfig &cfg_;
  std::vector<std::string> missing_;
};

/// Run manifest: config snapshot, tool version, input/output digests,
/// wall-clock.  Written next to the primary output so determinism checks
/// can exclude `*.manifest.json`.
class Manifest {
 public:
  Manifest(std::string subcommand, const ExperimentConfig &cfg)
      : subcommand_(std::move(subcommand)),
        start_(std::chrono::steady_clock::now()) {
    for (const auto &[key, value] : cfg.entries()) config_[key] = value;
  }
  void AddInput(const fs::path &p) {
    if (!p.empty()) inputs_.push_back(p);
  }
  void AddOutput(const fs::path &p) {
    if (!p.empty()) outputs_.push_back(p);
  }
  void Write(const fs::path &primary_output) {
    json j;
    j["subcommand"] = subcommand_;
    j["tool_version"] = kToolVersion;
    j["config"] = config_;
    json in = json::object(), out = json::object();
    for (const auto &p : inputs_) in[p.string()] = FileDigest(p);
    for (const auto &p : outputs_) out[p.string()] = FileDigest(p);
    j["inputs"] = in;
    j["outputs"] = out;
    j["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    WriteTextFile(fs::path(primary_output.string() + ".manifest.json"),
                  j.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  json config_ = json::object();
  std::vector<fs::path> inputs_, outputs_;
  std::chrono::steady_clock::time_point start_;
};

void PrintWarnings(const std::vector<std::string> &warnings, std::ostream &err) {
  for (const auto &w : warnings) err << "warning: " << w << "\n";
}

std::unordered_map<std::string, std::string> SpeakerMap(const fs::path &labels) {
  std::unordered_map<std::string, std::string> map;
  for (const auto &[utt, speaker] : LoadLabels(labels)) map[utt] = speaker;
  return map;
}

std::vector<std::string> SpeakersForIds(
    const std::vector<std::string> &ids,
    const std::unordered_map<std::string, std::string> &map) {
  std::vector<std::string> speakers;
  speakers.reserve(ids.size());
  for (const auto &id : ids) {
    auto it = map.find(id);
    if (it == map.end())
      throw Error(err::kPrecondition,
                  StrCat("utterance ", id, " missing from labels file"));
    speakers.push_back(it->second);
  }
  return speakers;
}

VadMask MaskFor(const ExperimentConfig &cfg, const FeatureSequence &utt) {
  if (cfg.GetFlag("vad") && utt.HasEnergies())
    return EnergyVad(utt, cfg.GetDouble("vad_threshold"));
  return VadMask::AllSpeech(utt.NumFrames());
}

MapperDims DimsFromConfig(const ExperimentConfig &cfg) {
  MapperDims dims;
  dims.hidden = static_cast<int>(cfg.GetInt("hidden_dim"));
  dims.bottleneck = static_cast<int>(cfg.GetInt("bottleneck_dim"));
  dims.depth = cfg.GetString("encoder_depth") == "deep" ? EncoderDepth::kDeep
                                                        : EncoderDepth::kShallow;
  return dims;
}

MapperTrainOptions TrainOptionsFromConfig(const ExperimentConfig &cfg) {
  MapperTrainOptions opts;
  opts.batch_size = static_cast<int>(cfg.GetInt("batch_size"));
  opts.adam.base_lr = cfg.GetDouble("learning_rate");
  opts.adam.decay = cfg.GetDouble("lr_decay");
  opts.adam.decay_steps = cfg.GetDouble("lr_decay_steps");
  return opts;
}

/// Assembles mapper training inputs: short i-vectors as columns, with the
/// scaled phoneme rows appended when a posterior archive is given.
Matrix MapperInputs(const IvectorSet &shorts,
                    const PosteriorArchive *posteriors, double phoneme_scale,
                    Eigen::Index *phoneme_dim) {
  Matrix inputs = shorts.vectors.transpose();
  *phoneme_dim = 0;
  if (!posteriors) return inputs;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < posteriors->utterance_ids.size(); ++i)
    index[posteriors->utterance_ids[i]] = i;
  Eigen::Index C = posteriors->posteriors.empty()
                       ? 0
                       : posteriors->posteriors.front().cols();
  if (C == 0) throw Error(err::kEmpty, "posterior archive is empty");
  Matrix stacked(inputs.rows() + C, inputs.cols());
  stacked.topRows(inputs.rows()) = inputs;
  for (Eigen::Index i = 0; i < shorts.Count(); ++i) {
    auto it = index.find(shorts.ids[static_cast<std::size_t>(i)]);
    if (it == index.end())
      throw Error(err::kPrecondition,
                  StrCat("utterance ", shorts.ids[static_cast<std::size_t>(i)],
                         " missing from posterior archive"));
    const Matrix &post = posteriors->posteriors[it->second];
    stacked.col(i).tail(C) = BuildPhonemeVector(
        post, VadMask::AllSpeech(post.rows()), phoneme_scale);
  }
  *phoneme_dim = C;
  return stacked;
}

IvectorSet MapIvectorSet(const MapperNetwork &net, const IvectorSet &shorts,
                         const PosteriorArchive *posteriors) {
  if (net.phoneme_dim > 0 && posteriors == nullptr)
    throw Error(err::kPhonemeInput,
                "network needs phoneme vectors; supply map_posteriors");
  if (net.phoneme_dim == 0 && posteriors != nullptr)
    throw Error(err::kPhonemeInput,
                "network was trained without phoneme input; remove "
                "map_posteriors");
  std::unordered_map<std::string, std::size_t> index;
  if (posteriors)
    for (std::size_t i = 0; i < posteriors->utterance_ids.size(); ++i)
      index[posteriors->utterance_ids[i]] = i;
  IvectorSet mapped;
  mapped.ids = shorts.ids;
  mapped.vectors.resize(shorts.Count(), net.output_dim);
  for (Eigen::Index i = 0; i < shorts.Count(); ++i) {
    Vector input = shorts.vectors.row(i).transpose();
    if (posteriors) {
      auto it = index.find(shorts.ids[static_cast<std::size_t>(i)]);
      if (it == index.end())
        throw Error(err::kPrecondition,
                    StrCat("utterance ",
                           shorts.ids[static_cast<std::size_t>(i)],
                           " missing from posterior archive"));
      const Matrix &post = posteriors->posteriors[it->second];
      Vector phoneme = BuildPhonemeVector(
          post, VadMask::AllSpeech(post.rows()), net.phoneme_scale);
      mapped.vectors.row(i) =
          MapIvector(net, input, &phoneme).transpose();
    } else {
      mapped.vectors.row(i) = MapIvector(net, input).transpose();
    }
  }
  return mapped;
}

std::vector<double> ScoreTrialList(const PldaModel &model,
                                   const IvectorSet &enroll_raw,
                                   const IvectorSet &test_raw,
                                   const TrialSet &trials) {
  Preprocessing prep = model.preprocessing;
  IvectorSet enroll = Preprocess(enroll_raw, /*fit=*/false, &prep);
  IvectorSet test = Preprocess(test_raw, /*fit=*/false, &prep);
  std::unordered_map<std::string, Eigen::Index> enroll_index, test_index;
  for (Eigen::Index i = 0; i < enroll.Count(); ++i)
    enroll_index[enroll.ids[static_cast<std::size_t>(i)]] = i;
  for (Eigen::Index i = 0; i < test.Count(); ++i)
    test_index[test.ids[static_cast<std::size_t>(i)]] = i;
  PldaScorer scorer(model);
  std::vector<double> scores;
  scores.reserve(trials.trials.size());
  for (const auto &t : trials.trials) {
    auto e = enroll_index.find(t.enroll_id);
    auto s = test_index.find(t.test_id);
    if (e == enroll_index.end())
      throw Error(err::kPrecondition,
                  StrCat("enroll utterance ", t.enroll_id, " not found"));
    if (s == test_index.end())
      throw Error(err::kPrecondition,
                  StrCat("test utterance ", t.test_id, " not found"));
    scores.push_back(scorer.Score(enroll.vectors.row(e->second).transpose(),
                                  test.vectors.row(s->second).transpose()));
  }
  return scores;
}

ScoredTrials ToScoredTrials(const TrialSet &trials,
                            const std::vector<double> &scores) {
  ScoredTrials st;
  st.scores = scores;
  st.labels.reserve(trials.trials.size());
  for (const auto &t : trials.trials) st.labels.push_back(t.target ? 1 : 0);
  return st;
}

// ---- Subcommands ----

void RunSynthCorpus(const ExperimentConfig &cfg, std::ostream &out,
                    std::ostream &err) {
  KeyCheck need(cfg);
  fs::path out_features = need.Path("out_features");
  fs::path out_short = need.Path("out_short_features");
  fs::path out_labels = need.Path("out_labels");
  fs::path out_truth = need.Path("out_ground_truth");
  int eval_speakers = static_cast<int>(cfg.GetInt("eval_speakers"));
  fs::path out_eval_features, out_eval_short;
  if (eval_speakers > 0) {
    out_eval_features = need.Path("out_eval_features");
    out_eval_short = need.Path("out_eval_short_features");
  }
  need.Finish();

  SyntheticSpec spec;
  spec.num_speakers = static_cast<int>(cfg.GetInt("num_speakers"));
  spec.utterances_per_speaker =
      static_cast<int>(cfg.GetInt("utterances_per_speaker"));
  spec.frame_rate = static_cast<int>(cfg.GetInt("frame_rate"));
  spec.long_duration_frames =
      static_cast<int>(cfg.GetInt("long_seconds")) * spec.frame_rate;
  spec.num_components = static_cast<int>(cfg.GetInt("corpus_components"));
  spec.feature_dim = static_cast<int>(cfg.GetInt("feature_dim"));
  spec.true_rank = static_cast<int>(cfg.GetInt("true_rank"));
  spec.speaker_subspace_scale = cfg.GetDouble("speaker_scale");
  spec.channel_noise_scale = cfg.GetDouble("channel_scale");
  spec.seed = cfg.seed();
  if (eval_speakers >= spec.num_speakers)
    throw Error(err::kConfig,
                "eval_speakers must be smaller than num_speakers");

  SyntheticCorpus corpus = GenerateCorpus(spec);
  int train_speakers = spec.num_speakers - eval_speakers;

  std::vector<FeatureSequence> train_longs, eval_longs;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    if (corpus.truth.utterance_speaker[i] < train_speakers)
      train_longs.push_back(corpus.utterances[i]);
    else
      eval_longs.push_back(corpus.utterances[i]);
  }

  TruncationSpec tspec;
  tspec.frame_rate = spec.frame_rate;
  std::string window = cfg.GetString("window");
  tspec.window = window == "5"    ? TruncationWindow::k5s
                 : window == "10" ? TruncationWindow::k10s
                                  : TruncationWindow::kMixed;
  TruncatedCorpus train_trunc = TruncateCorpus(train_longs, tspec);
  TruncatedCorpus eval_trunc = TruncateCorpus(eval_longs, tspec);
  for (const auto &rec : train_trunc.records)
    if (rec.degenerate)
      err << "warning: utterance " << rec.parent_id
          << " shorter than the window; single full-copy segment\n";

  std::unordered_map<std::string, std::string> parent_speaker;
  std::vector<std::pair<std::string, std::string>> labels = corpus.labels;
  for (const auto &[utt, speaker] : corpus.labels) parent_speaker[utt] = speaker;
  auto add_segment_labels = [&](const TruncatedCorpus &trunc) {
    for (const auto &rec : trunc.records)
      labels.emplace_back(rec.segment_id, parent_speaker[rec.parent_id]);
  };
  add_segment_labels(train_trunc);
  add_segment_labels(eval_trunc);

  Manifest manifest("synth-corpus", cfg);
  SaveFeatureArchive(train_longs, out_features);
  manifest.AddOutput(out_features);
  SaveFeatureArchive(train_trunc.segments, out_short);
  manifest.AddOutput(out_short);
  if (eval_speakers > 0) {
    SaveFeatureArchive(eval_longs, out_eval_features);
    manifest.AddOutput(out_eval_features);
    SaveFeatureArchive(eval_trunc.segments, out_eval_short);
    manifest.AddOutput(out_eval_short);
  }
  SaveLabels(labels, out_labels);
  manifest.AddOutput(out_labels);
  SaveGroundTruth(corpus.truth, out_truth);
  manifest.AddOutput(out_truth);
  if (cfg.Has("out_truncation")) {
    std::vector<TruncationRecord> records = train_trunc.records;
    records.insert(records.end(), eval_trunc.records.begin(),
                   eval_trunc.records.end());
    SaveTruncationRecords(records, cfg.GetPath("out_truncation"));
    manifest.AddOutput(cfg.GetPath("out_truncation"));
  }
  if (cfg.Has("out_trials")) {
    const TruncatedCorpus &pool = eval_speakers > 0 ? eval_trunc : train_trunc;
    std::vector<std::string> ids, speakers;
    for (const auto &rec : pool.records) {
      ids.push_back(rec.segment_id);
      speakers.push_back(parent_speaker[rec.parent_id]);
    }
    TrialBuildOptions topts;
    topts.num_target = static_cast<int>(cfg.GetInt("num_target"));
    topts.num_nontarget = static_cast<int>(cfg.GetInt("num_nontarget"));
    topts.seed = Rng::Mix(cfg.seed(), 777);
    std::vector<std::string> warnings;
    TrialSet trials = BuildTrials(ids, speakers, topts, &warnings);
    PrintWarnings(warnings, err);
    SaveTrialSet(trials, cfg.GetPath("out_trials"));
    manifest.AddOutput(cfg.GetPath("out_trials"));
  }
  manifest.Write(out_features);
  out << "synth-corpus: " << train_longs.size() << " train longs, "
      << train_trunc.segments.size() << " train segments, "
      << eval_longs.size() << " eval longs, " << eval_trunc.segments.size()
      << " eval segments\n";
}

void RunTrainUbm(const ExperimentConfig &cfg, std::ostream &out,
                 std::ostream &err) {
  KeyCheck need(cfg);
  fs::path features = need.Path("features");
  fs::path model_path = need.Path("gmm_model");
  need.Finish();

  Manifest manifest("train-ubm", cfg);
  manifest.AddInput(features);
  GmmTrainOptions opts;
  opts.num_components = static_cast<int>(cfg.GetInt("ubm_components"));
  opts.diag_iters = static_cast<int>(cfg.GetInt("diag_iters"));
  opts.full_iters = static_cast<int>(cfg.GetInt("full_iters"));
  opts.floor_scale = cfg.GetDouble("covariance_floor");
  opts.seed = cfg.seed();
  GmmTrainResult result = TrainGmmEm(LoadFeatureArchive(features), opts);
  PrintWarnings(result.warnings, err);
  SaveGmm(result.gmm, model_path);
  manifest.AddOutput(model_path);
  manifest.Write(model_path);
  out << "train-ubm: C=" << result.gmm.NumComponents()
      << " final log-likelihood " << FormatFull(result.log_likelihoods.back())
      << "\n";
}

void RunPosteriors(const ExperimentConfig &cfg, std::ostream &out,
                   std::ostream &err) {
  KeyCheck need(cfg);
  fs::path features = need.Path("features");
  fs::path posterior_path = need.Path("posteriors");
  bool planted = cfg.GetString("posterior_source") == "planted";
  fs::path model_path = planted ? need.Path("ground_truth") : need.Path("gmm_model");
  need.Finish();

  Manifest manifest("posteriors", cfg);
  manifest.AddInput(features);
  manifest.AddInput(model_path);
  FullGmm gmm =
      planted ? LoadGroundTruth(model_path).ubm : LoadGmm(model_path);
  PosteriorArchive archive;
  archive.source = planted ? PosteriorArchive::Source::kExternalSenone
                           : PosteriorArchive::Source::kGmm;
  for (const auto &utt : LoadFeatureArchive(features)) {
    archive.utterance_ids.push_back(utt.utterance_id);
    archive.posteriors.push_back(GmmPosteriors(gmm, utt));
  }
  SavePosteriorArchive(archive, posterior_path);
  manifest.AddOutput(posterior_path);
  manifest.Write(posterior_path);
  out << "posteriors: " << archive.utterance_ids.size() << " utterances\n";
  (void)err;
}

void RunStats(const ExperimentConfig &cfg, std::ostream &out,
              std::ostream &err) {
  KeyCheck need(cfg);
  fs::path features = need.Path("features");
  fs::path posterior_path = need.Path("posteriors");
  fs::path gmm_path = need.Path("gmm_model");
  fs::path stats_path = need.Path("stats");
  need.Finish();

  Manifest manifest("stats", cfg);
  manifest.AddInput(features);
  manifest.AddInput(posterior_path);
  manifest.AddInput(gmm_path);
  FullGmm gmm = LoadGmm(gmm_path);
  PosteriorArchive posteriors = LoadPosteriorArchive(posterior_path);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < posteriors.utterance_ids.size(); ++i)
    index[posteriors.utterance_ids[i]] = i;
  std::vector<SuffStats> stats;
  for (const auto &utt : LoadFeatureArchive(features)) {
    auto it = index.find(utt.utterance_id);
    if (it == index.end())
      throw Error(err::kPrecondition,
                  StrCat("utterance ", utt.utterance_id,
                         " missing from posterior archive"));
    VadMask mask = MaskFor(cfg, utt);
    stats.push_back(
        CenterStats(AccumulateStats(posteriors.posteriors[it->second], utt, mask),
                    gmm));
  }
  SaveStatsArchive(stats, stats_path);
  manifest.AddOutput(stats_path);
  manifest.Write(stats_path);
  out << "stats: " << stats.size() << " utterances (centered)\n";
  (void)err;
}

void RunTrainTv(const ExperimentConfig &cfg, std::ostream &out,
                std::ostream &err) {
  KeyCheck need(cfg);
  fs::path stats_path = need.Path("stats");
  fs::path gmm_path = need.Path("gmm_model");
  fs::path model_path = need.Path("tv_model");
  need.Finish();

  Manifest manifest("train-tv", cfg);
  manifest.AddInput(stats_path);
  manifest.AddInput(gmm_path);
  TvTrainOptions opts;
  opts.rank = static_cast<int>(cfg.GetInt("rank"));
  opts.iters = static_cast<int>(cfg.GetInt("tv_iters"));
  opts.seed = cfg.seed();
  TvTrainResult result =
      TrainTvEm(LoadStatsArchive(stats_path), LoadGmm(gmm_path), opts);
  PrintWarnings(result.warnings, err);
  SaveTvModel(result.model, model_path);
  manifest.AddOutput(model_path);
  manifest.Write(model_path);
  out << "train-tv: rank " << result.model.Rank() << " final objective "
      << FormatFull(result.objectives.back()) << "\n";
}

void RunExtract(const ExperimentConfig &cfg, std::ostream &out,
                std::ostream &err) {
  KeyCheck need(cfg);
  fs::path stats_path = need.Path("stats");
  fs::path model_path = need.Path("tv_model");
  fs::path out_path = need.Path("ivectors");
  need.Finish();

  Manifest manifest("extract", cfg);
  manifest.AddInput(stats_path);
  manifest.AddInput(model_path);
  TotalVariabilityModel model = LoadTvModel(model_path);
  std::vector<SuffStats> stats = LoadStatsArchive(stats_path);
  IvectorSet set;
  set.vectors.resize(static_cast<Eigen::Index>(stats.size()), model.Rank());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    IVector iv = ExtractIvector(stats[i], model);
    set.ids.push_back(iv.utterance_id);
    set.vectors.row(static_cast<Eigen::Index>(i)) = iv.mean.transpose();
  }
  SaveIvectorSet(set, out_path);
  manifest.AddOutput(out_path);
  manifest.Write(out_path);
  out << "extract: " << set.Count() << " i-vectors of dim " << set.Dim()
      << "\n";
  (void)err;
}

void RunTrainLda(const ExperimentConfig &cfg, std::ostream &out,
                 std::ostream &err) {
  KeyCheck need(cfg);
  fs::path ivectors_path = need.Path("ivectors");
  fs::path labels_path = need.Path("labels");
  fs::path lda_path = need.Path("lda_matrix");
  need.Finish();

  Manifest manifest("train-lda", cfg);
  manifest.AddInput(ivectors_path);
  manifest.AddInput(labels_path);
  IvectorSet set = LoadIvectorSet(ivectors_path);
  auto speakers = SpeakersForIds(set.ids, SpeakerMap(labels_path));
  std::vector<std::string> warnings;
  Matrix lda = TrainLda(set, speakers, static_cast<int>(cfg.GetInt("lda_dim")),
                        &warnings);
  PrintWarnings(warnings, err);
  SaveLdaMatrix(lda, lda_path);
  manifest.AddOutput(lda_path);
  manifest.Write(lda_path);
  out << "train-lda: " << lda.rows() << " -> " << lda.cols() << "\n";
}

void RunTrainPlda(const ExperimentConfig &cfg, std::ostream &out,
                  std::ostream &err) {
  KeyCheck need(cfg);
  fs::path ivectors_path = need.Path("ivectors");
  fs::path labels_path = need.Path("labels");
  fs::path model_path = need.Path("plda_model");
  bool use_lda = cfg.GetFlag("use_lda");
  fs::path lda_path = use_lda ? need.Path("lda_matrix") : fs::path();
  need.Finish();

  Manifest manifest("train-plda", cfg);
  manifest.AddInput(ivectors_path);
  manifest.AddInput(labels_path);
  IvectorSet raw = LoadIvectorSet(ivectors_path);
  auto speakers = SpeakersForIds(raw.ids, SpeakerMap(labels_path));
  Preprocessing prep;
  if (use_lda) {
    manifest.AddInput(lda_path);
    prep.lda = LoadLdaMatrix(lda_path);
  }
  IvectorSet preprocessed = Preprocess(raw, /*fit=*/true, &prep);
  PldaTrainOptions opts;
  long q = cfg.GetInt("plda_rank");
  opts.speaker_rank =
      q > 0 ? static_cast<int>(q)
            : static_cast<int>(preprocessed.Dim() / 2);
  opts.iters = static_cast<int>(cfg.GetInt("plda_iters"));
  opts.seed = cfg.seed();
  PldaTrainResult result = TrainPldaEm(preprocessed, speakers, opts);
  result.model.preprocessing = prep;
  SavePldaModel(result.model, model_path);
  manifest.AddOutput(model_path);
  manifest.Write(model_path);
  out << "train-plda: dim " << result.model.Dim() << " Q "
      << result.model.SpeakerRank() << " final log-likelihood "
      << FormatFull(result.log_likelihoods.back()) << "\n";
  (void)err;
}

void RunTrainMapper(const ExperimentConfig &cfg, std::ostream &out,
                    std::ostream &err) {
  KeyCheck need(cfg);
  fs::path short_path = need.Path("short_ivectors");
  fs::path long_path = need.Path("long_ivectors");
  fs::path net_path = need.Path("net");
  bool phoneme = cfg.GetFlag("phoneme");
  fs::path posterior_path = phoneme ? need.Path("short_posteriors") : fs::path();
  need.Finish();

  Manifest manifest("train-mapper", cfg);
  manifest.AddInput(short_path);
  manifest.AddInput(long_path);
  IvectorSet shorts = LoadIvectorSet(short_path);
  IvectorSet longs = LoadIvectorSet(long_path);
  PairedIvectors paired = BuildPairs(shorts, longs);

  PosteriorArchive posteriors;
  const PosteriorArchive *posterior_ptr = nullptr;
  double phoneme_scale = cfg.GetDouble("phoneme_scale");
  if (phoneme) {
    manifest.AddInput(posterior_path);
    posteriors = LoadPosteriorArchive(posterior_path);
    posterior_ptr = &posteriors;
  }
  IvectorSet paired_shorts;
  paired_shorts.ids = paired.short_ids;
  paired_shorts.vectors = paired.shorts;
  TrainingPairs pairs;
  Eigen::Index phoneme_dim = 0;
  pairs.inputs =
      MapperInputs(paired_shorts, posterior_ptr, phoneme_scale, &phoneme_dim);
  pairs.targets = paired.longs.transpose();
  pairs.short_ids = paired.short_ids;

  MapperDims dims = DimsFromConfig(cfg);
  MapperTrainOptions opts = TrainOptionsFromConfig(cfg);
  MapperNetwork net;
  std::vector<CurvePoint> curve;
  if (cfg.GetString("method") == "dnn1") {
    Dnn1Result result =
        TrainDnn1(pairs, dims, cfg.GetInt("pretrain_iters"),
                  cfg.GetInt("finetune_iters"), cfg.seed(), opts);
    net = std::move(result.network);
    curve = std::move(result.pretrain_curve);
    long offset = static_cast<long>(curve.size());
    for (auto p : result.finetune_curve) {
      p.step += offset;
      curve.push_back(p);
    }
  } else {
    Dnn2Result result = TrainDnn2(pairs, dims, cfg.GetDouble("alpha"),
                                  cfg.GetInt("train_iters"), cfg.seed(), opts);
    net = std::move(result.network);
    curve = std::move(result.curve);
  }
  net.phoneme_dim = phoneme_dim;
  net.phoneme_scale = phoneme ? phoneme_scale : 0.0;
  SaveMapperNetwork(net, net_path);
  manifest.AddOutput(net_path);
  if (cfg.Has("curve")) {
    SaveTrainingCurve(curve, cfg.GetPath("curve"));
    manifest.AddOutput(cfg.GetPath("curve"));
  }
  manifest.Write(net_path);
  out << "train-mapper: " << pairs.inputs.cols() << " pairs, final loss "
      << (curve.empty() ? std::string("n/a") : FormatFull(curve.back().total))
      << "\n";
  (void)err;
}

void RunMap(const ExperimentConfig &cfg, std::ostream &out,
            std::ostream &err) {
  KeyCheck need(cfg);
  fs::path net_path = need.Path("net");
  fs::path in_path = need.Path("map_ivectors");
  fs::path out_path = need.Path("mapped_ivectors");
  need.Finish();

  Manifest manifest("map", cfg);
  manifest.AddInput(net_path);
  manifest.AddInput(in_path);
  MapperNetwork net = LoadMapperNetwork(net_path);
  IvectorSet shorts = LoadIvectorSet(in_path);
  PosteriorArchive posteriors;
  const PosteriorArchive *posterior_ptr = nullptr;
  if (cfg.Has("map_posteriors")) {
    manifest.AddInput(cfg.GetPath("map_posteriors"));
    posteriors = LoadPosteriorArchive(cfg.GetPath("map_posteriors"));
    posterior_ptr = &posteriors;
  }
  IvectorSet mapped = MapIvectorSet(net, shorts, posterior_ptr);
  SaveIvectorSet(mapped, out_path);
  manifest.AddOutput(out_path);
  manifest.Write(out_path);
  out << "map: " << mapped.Count() << " i-vectors\n";
  (void)err;
}

void RunScore(const ExperimentConfig &cfg, std::ostream &out,
              std::ostream &err) {
  KeyCheck need(cfg);
  fs::path model_path = need.Path("plda_model");
  fs::path enroll_path = need.Path("enroll_ivectors");
  fs::path test_path = need.Path("test_ivectors");
  fs::path trials_path = need.Path("trials");
  fs::path scores_path = need.Path("scores");
  need.Finish();

  Manifest manifest("score", cfg);
  manifest.AddInput(model_path);
  manifest.AddInput(enroll_path);
  manifest.AddInput(test_path);
  manifest.AddInput(trials_path);
  PldaModel model = LoadPldaModel(model_path);
  TrialSet trials = LoadTrialSet(trials_path);
  std::vector<double> scores =
      ScoreTrialList(model, LoadIvectorSet(enroll_path),
                     LoadIvectorSet(test_path), trials);
  SaveScoreFile(trials.trials, scores, scores_path);
  manifest.AddOutput(scores_path);
  manifest.Write(scores_path);
  out << "score: " << scores.size() << " trials\n";
  (void)err;
}

void RunEvaluate(const ExperimentConfig &cfg, std::ostream &out,
                 std::ostream &err) {
  KeyCheck need(cfg);
  fs::path scores_path = need.Path("scores");
  fs::path trials_path = need.Path("trials");
  fs::path metrics_path = need.Path("metrics");
  need.Finish();

  Manifest manifest("evaluate", cfg);
  manifest.AddInput(scores_path);
  manifest.AddInput(trials_path);
  TrialSet trials = LoadTrialSet(trials_path);
  ScoredTrialFile scored = LoadScoreFile(scores_path);
  if (scored.trials.size() != trials.trials.size())
    throw Error(err::kDimension,
                "score file and trial list differ in length");
  for (std::size_t i = 0; i < trials.trials.size(); ++i)
    if (scored.trials[i].enroll_id != trials.trials[i].enroll_id ||
        scored.trials[i].test_id != trials.trials[i].test_id)
      throw Error(err::kPrecondition,
                  StrCat("score line ", i + 1, " does not match the trial "
                         "list"));
  ScoredTrials st = ToScoredTrials(trials, scored.scores);

  std::vector<std::pair<std::string, double>> metrics;
  metrics.emplace_back("eer", ComputeEer(st));
  metrics.emplace_back(
      "dcf08", ComputeMinDcf(st, {cfg.GetDouble("dcf08_c_miss"),
                                  cfg.GetDouble("dcf08_c_fa"),
                                  cfg.GetDouble("dcf08_p_target")}));
  metrics.emplace_back(
      "dcf10", ComputeMinDcf(st, {cfg.GetDouble("dcf10_c_miss"),
                                  cfg.GetDouble("dcf10_c_fa"),
                                  cfg.GetDouble("dcf10_p_target")}));
  double num_target = 0;
  for (auto l : st.labels) num_target += (l != 0);
  metrics.emplace_back("num_target", num_target);
  metrics.emplace_back("num_nontarget",
                       static_cast<double>(st.labels.size()) - num_target);

  if (cfg.Has("pairs_ivectors")) {
    KeyCheck pairs_need(cfg);
    fs::path ref_path = pairs_need.Path("pairs_reference");
    pairs_need.Finish();
    manifest.AddInput(cfg.GetPath("pairs_ivectors"));
    manifest.AddInput(ref_path);
    PairedIvectors paired =
        BuildPairs(LoadIvectorSet(cfg.GetPath("pairs_ivectors")),
                   LoadIvectorSet(ref_path));
    metrics.emplace_back("d_sl",
                         AverageSquaredDistance(paired.shorts, paired.longs));
  }
  if (cfg.Has("group_ivectors")) {
    KeyCheck group_need(cfg);
    fs::path labels_path = group_need.Path("labels");
    group_need.Finish();
    manifest.AddInput(cfg.GetPath("group_ivectors"));
    manifest.AddInput(labels_path);
    IvectorSet set = LoadIvectorSet(cfg.GetPath("group_ivectors"));
    auto speakers = SpeakersForIds(set.ids, SpeakerMap(labels_path));
    metrics.emplace_back("sigma_mean", MeanVariance(set, speakers));
    metrics.emplace_back("j_ratio", JRatio(set, speakers));
  }

  std::ostringstream csv;
  csv << "metric,value\n";
  for (const auto &[name, value] : metrics) {
    csv << name << ',' << FormatFull(value) << '\n';
    out << name << " = " << FormatFull(value) << "\n";
  }
  WriteTextFile(metrics_path, csv.str());
  manifest.AddOutput(metrics_path);
  if (cfg.Has("det_points")) {
    std::ostringstream det;
    det << "p_fa,p_miss\n";
    for (const auto &p : DetPoints(st))
      det << FormatFull(p.p_fa) << ',' << FormatFull(p.p_miss) << '\n';
    WriteTextFile(cfg.GetPath("det_points"), det.str());
    manifest.AddOutput(cfg.GetPath("det_points"));
  }
  manifest.Write(metrics_path);
  (void)err;
}

/// Shared machinery for the alpha/depth sweeps: load train pairs and the
/// held-out evaluation inputs once, then train/map/score per setting.
struct SweepContext {
  TrainingPairs pairs;
  IvectorSet eval_shorts;
  IvectorSet eval_reference;
  PldaModel plda;
  TrialSet trials;
  PosteriorArchive train_posteriors, map_posteriors;
  const PosteriorArchive *train_posterior_ptr = nullptr;
  const PosteriorArchive *map_posterior_ptr = nullptr;
  MapperDims dims;
  MapperTrainOptions opts;
  double phoneme_scale = 0.0;
};

SweepContext LoadSweepContext(const ExperimentConfig &cfg, Manifest *manifest) {
  KeyCheck need(cfg);
  fs::path short_path = need.Path("short_ivectors");
  fs::path long_path = need.Path("long_ivectors");
  fs::path eval_path = need.Path("map_ivectors");
  fs::path ref_path = need.Path("pairs_reference");
  fs::path plda_path = need.Path("plda_model");
  fs::path trials_path = need.Path("trials");
  bool phoneme = cfg.GetFlag("phoneme");
  fs::path train_post_path =
      phoneme ? need.Path("short_posteriors") : fs::path();
  fs::path map_post_path = phoneme ? need.Path("map_posteriors") : fs::path();
  need.Finish();
  for (const auto &p : {short_path, long_path, eval_path, ref_path, plda_path,
                        trials_path})
    manifest->AddInput(p);

  SweepContext ctx;
  PairedIvectors paired =
      BuildPairs(LoadIvectorSet(short_path), LoadIvectorSet(long_path));
  ctx.phoneme_scale = cfg.GetDouble("phoneme_scale");
  if (phoneme) {
    manifest->AddInput(train_post_path);
    manifest->AddInput(map_post_path);
    ctx.train_posteriors = LoadPosteriorArchive(train_post_path);
    ctx.train_posterior_ptr = &ctx.train_posteriors;
    ctx.map_posteriors = LoadPosteriorArchive(map_post_path);
    ctx.map_posterior_ptr = &ctx.map_posteriors;
  }
  IvectorSet paired_shorts;
  paired_shorts.ids = paired.short_ids;
  paired_shorts.vectors = paired.shorts;
  Eigen::Index phoneme_dim = 0;
  ctx.pairs.inputs = MapperInputs(paired_shorts, ctx.train_posterior_ptr,
                                  ctx.phoneme_scale, &phoneme_dim);
  ctx.pairs.targets = paired.longs.transpose();
  ctx.pairs.short_ids = paired.short_ids;
  ctx.eval_shorts = LoadIvectorSet(eval_path);
  ctx.eval_reference = LoadIvectorSet(ref_path);
  ctx.plda = LoadPldaModel(plda_path);
  ctx.trials = LoadTrialSet(trials_path);
  ctx.dims = DimsFromConfig(cfg);
  ctx.opts = TrainOptionsFromConfig(cfg);
  return ctx;
}

struct SweepRow {
  double eer = 0.0;
  double d_sl = 0.0;
};

SweepRow EvaluateMapped(const SweepContext &ctx, const MapperNetwork &net,
                        double phoneme_scale) {
  MapperNetwork annotated = net;
  annotated.phoneme_dim = ctx.map_posterior_ptr
                              ? ctx.pairs.inputs.rows() - ctx.eval_shorts.Dim()
                              : 0;
  annotated.phoneme_scale = ctx.map_posterior_ptr ? phoneme_scale : 0.0;
  IvectorSet mapped =
      MapIvectorSet(annotated, ctx.eval_shorts, ctx.map_posterior_ptr);
  SweepRow row;
  PairedIvectors paired = BuildPairs(mapped, ctx.eval_reference);
  row.d_sl = AverageSquaredDistance(paired.shorts, paired.longs);
  std::vector<double> scores =
      ScoreTrialList(ctx.plda, mapped, mapped, ctx.trials);
  row.eer = ComputeEer(ToScoredTrials(ctx.trials, scores));
  return row;
}

void RunSweepAlpha(const ExperimentConfig &cfg, std::ostream &out,
                   std::ostream &err) {
  KeyCheck need(cfg);
  fs::path sweep_path = need.Path("sweep_out");
  need.Finish();
  Manifest manifest("sweep-alpha", cfg);
  SweepContext ctx = LoadSweepContext(cfg, &manifest);

  std::vector<double> alphas;
  std::istringstream list(cfg.GetString("alpha_list"));
  std::string item;
  while (std::getline(list, item, ','))
    if (!item.empty()) alphas.push_back(std::stod(item));
  if (alphas.empty()) throw Error(err::kConfig, "alpha_list is empty");

  std::ostringstream csv;
  csv << "alpha,eer,d_sl\n";
  for (double alpha : alphas) {
    Dnn2Result result = TrainDnn2(ctx.pairs, ctx.dims, alpha,
                                  cfg.GetInt("train_iters"), cfg.seed(),
                                  ctx.opts);
    SweepRow row = EvaluateMapped(ctx, result.network, ctx.phoneme_scale);
    csv << FormatFull(alpha) << ',' << FormatFull(row.eer) << ','
        << FormatFull(row.d_sl) << '\n';
    out << "alpha " << alpha << ": eer " << FormatFull(row.eer) << " d_sl "
        << FormatFull(row.d_sl) << "\n";
  }
  WriteTextFile(sweep_path, csv.str());
  manifest.AddOutput(sweep_path);
  manifest.Write(sweep_path);
  (void)err;
}

void RunSweepDepth(const ExperimentConfig &cfg, std::ostream &out,
                   std::ostream &err) {
  KeyCheck need(cfg);
  fs::path sweep_path = need.Path("sweep_out");
  need.Finish();
  Manifest manifest("sweep-depth", cfg);
  SweepContext ctx = LoadSweepContext(cfg, &manifest);

  std::vector<std::string> depths;
  std::istringstream list(cfg.GetString("depth_list"));
  std::string item;
  while (std::getline(list, item, ','))
    if (!item.empty()) depths.push_back(item);
  if (depths.empty()) throw Error(err::kConfig, "depth_list is empty");

  std::ostringstream csv;
  csv << "depth,eer,d_sl\n";
  for (const auto &depth : depths) {
    if (depth != "shallow" && depth != "deep")
      throw Error(err::kConfig, StrCat("bad depth '", depth, "'"));
    MapperDims dims = ctx.dims;
    dims.depth =
        depth == "deep" ? EncoderDepth::kDeep : EncoderDepth::kShallow;
    MapperNetwork net;
    if (cfg.GetString("method") == "dnn1") {
      net = TrainDnn1(ctx.pairs, dims, cfg.GetInt("pretrain_iters"),
                      cfg.GetInt("finetune_iters"), cfg.seed(), ctx.opts)
                .network;
    } else {
      net = TrainDnn2(ctx.pairs, dims, cfg.GetDouble("alpha"),
                      cfg.GetInt("train_iters"), cfg.seed(), ctx.opts)
                .network;
    }
    SweepRow row = EvaluateMapped(ctx, net, ctx.phoneme_scale);
    csv << depth << ',' << FormatFull(row.eer) << ',' << FormatFull(row.d_sl)
        << '\n';
    out << "depth " << depth << ": eer " << FormatFull(row.eer) << " d_sl "
        << FormatFull(row.d_sl) << "\n";
  }
  WriteTextFile(sweep_path, csv.str());
  manifest.AddOutput(sweep_path);
  manifest.Write(sweep_path);
  (void)err;
}

}  // namespace

int RunCli(const std::vector<std::string> &args, std::ostream &out,
           std::ostream &err) {
  try {
    if (args.empty())
      throw Error(err::kUsage,
                  "usage: ivmap <subcommand> [--config FILE] [--key value ...]");
    std::string subcommand = args[0];
    bool known = false;
    for (const char *name : kSubcommands) known = known || subcommand == name;
    if (!known)
      throw Error(err::kUsage, StrCat("unknown subcommand '", subcommand, "'"));

    std::optional<fs::path> config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    for (std::size_t i = 1; i < args.size(); ++i) {
      const std::string &arg = args[i];
      if (arg.rfind("--", 0) != 0)
        throw Error(err::kUsage, StrCat("expected --key, got '", arg, "'"));
      if (i + 1 >= args.size())
        throw Error(err::kUsage, StrCat("flag ", arg, " needs a value"));
      std::string key = arg.substr(2);
      std::string value = args[++i];
      if (key == "config")
        config_file = fs::path(value);
      else
        overrides.emplace_back(key, value);
    }
    ExperimentConfig cfg = ExperimentConfig::Parse(config_file, overrides);

    if (subcommand == "synth-corpus") RunSynthCorpus(cfg, out, err);
    else if (subcommand == "train-ubm") RunTrainUbm(cfg, out, err);
    else if (subcommand == "posteriors") RunPosteriors(cfg, out, err);
    else if (subcommand == "stats") RunStats(cfg, out, err);
    else if (subcommand == "train-tv") RunTrainTv(cfg, out, err);
    else if (subcommand == "extract") RunExtract(cfg, out, err);
    else if (subcommand == "train-lda") RunTrainLda(cfg, out, err);
    else if (subcommand == "train-plda") RunTrainPlda(cfg, out, err);
    else if (subcommand == "train-mapper") RunTrainMapper(cfg, out, err);
    else if (subcommand == "map") RunMap(cfg, out, err);
    else if (subcommand == "score") RunScore(cfg, out, err);
    else if (subcommand == "evaluate") RunEvaluate(cfg, out, err);
    else if (subcommand == "sweep-alpha") RunSweepAlpha(cfg, out, err);
    else if (subcommand == "sweep-depth") RunSweepDepth(cfg, out, err);
    return 0;
  } catch (const Error &e) {
    err << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    err << "error: INTERNAL: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ivmap
