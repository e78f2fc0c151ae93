// ivmap/config.cc

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

#include "ivmap/config.h"

#include <algorithm>
#include <cstdlib>

#include "ivmap/io.h"

namespace ivmap {

namespace {

using Type = KeySpec::Type;

std::vector<KeySpec> MakeSchema() {
  std::vector<KeySpec> schema;
  auto add = [&](std::string name, Type type, std::string def,
                 std::vector<std::string> enums = {}) {
    schema.push_back({std::move(name), type, std::move(def), std::move(enums)});
  };

  add("seed", Type::kUint64, "");  // mandatory, no default

  // synth-corpus
  add("num_speakers", Type::kInt, "50");
  add("utterances_per_speaker", Type::kInt, "2");
  add("long_seconds", Type::kInt, "100");
  add("frame_rate", Type::kInt, "100");
  add("corpus_components", Type::kInt, "8");
  add("feature_dim", Type::kInt, "8");
  add("true_rank", Type::kInt, "16");
  add("speaker_scale", Type::kDouble, "1.0");
  add("channel_scale", Type::kDouble, "0.5");
  add("window", Type::kEnum, "10", {"5", "10", "mixed"});
  add("eval_speakers", Type::kInt, "0");
  add("num_target", Type::kInt, "200");
  add("num_nontarget", Type::kInt, "2000");
  add("out_features", Type::kPath, "");
  add("out_short_features", Type::kPath, "");
  add("out_eval_features", Type::kPath, "");
  add("out_eval_short_features", Type::kPath, "");
  add("out_labels", Type::kPath, "");
  add("out_ground_truth", Type::kPath, "");
  add("out_truncation", Type::kPath, "");
  add("out_trials", Type::kPath, "");

  // train-ubm
  add("features", Type::kPath, "");
  add("gmm_model", Type::kPath, "");
  add("ubm_components", Type::kInt, "64");
  add("diag_iters", Type::kInt, "4");
  add("full_iters", Type::kInt, "4");
  add("covariance_floor", Type::kDouble, "1e-4");

  // posteriors
  add("posterior_source", Type::kEnum, "gmm", {"gmm", "planted"});
  add("ground_truth", Type::kPath, "");
  add("posteriors", Type::kPath, "");

  // stats
  add("vad", Type::kFlag, "on");
  add("vad_threshold", Type::kDouble, "0.5");
  add("stats", Type::kPath, "");

  // train-tv / extract
  add("rank", Type::kInt, "64");
  add("tv_iters", Type::kInt, "5");
  add("tv_model", Type::kPath, "");
  add("ivectors", Type::kPath, "");

  // train-lda
  add("lda_dim", Type::kInt, "16");
  add("lda_matrix", Type::kPath, "");
  add("labels", Type::kPath, "");

  // train-plda
  add("plda_rank", Type::kInt, "0");  // 0 resolves to dim/2
  add("plda_iters", Type::kInt, "10");
  add("plda_model", Type::kPath, "");
  add("use_lda", Type::kFlag, "off");

  // train-mapper
  add("method", Type::kEnum, "dnn2", {"dnn1", "dnn2"});
  add("alpha", Type::kDouble, "0.8");
  add("encoder_depth", Type::kEnum, "shallow", {"shallow", "deep"});
  add("hidden_dim", Type::kInt, "128");
  add("bottleneck_dim", Type::kInt, "64");
  add("batch_size", Type::kInt, "256");
  add("learning_rate", Type::kDouble, "0.001");
  add("lr_decay", Type::kDouble, "0.95");
  add("lr_decay_steps", Type::kDouble, "1000");
  add("train_iters", Type::kInt, "4000");
  add("pretrain_iters", Type::kInt, "2500");
  add("finetune_iters", Type::kInt, "4000");
  add("phoneme", Type::kFlag, "off");
  add("phoneme_scale", Type::kDouble, "500");
  add("short_ivectors", Type::kPath, "");
  add("long_ivectors", Type::kPath, "");
  add("short_posteriors", Type::kPath, "");
  add("net", Type::kPath, "");
  add("curve", Type::kPath, "");

  // map
  add("map_ivectors", Type::kPath, "");
  add("map_posteriors", Type::kPath, "");
  add("mapped_ivectors", Type::kPath, "");

  // score
  add("enroll_ivectors", Type::kPath, "");
  add("test_ivectors", Type::kPath, "");
  add("trials", Type::kPath, "");
  add("scores", Type::kPath, "");

  // evaluate
  add("metrics", Type::kPath, "");
  add("det_points", Type::kPath, "");
  add("group_ivectors", Type::kPath, "");
  add("pairs_ivectors", Type::kPath, "");
  add("pairs_reference", Type::kPath, "");
  add("dcf08_c_miss", Type::kDouble, "10");
  add("dcf08_c_fa", Type::kDouble, "1");
  add("dcf08_p_target", Type::kDouble, "0.01");
  add("dcf10_c_miss", Type::kDouble, "1");
  add("dcf10_c_fa", Type::kDouble, "1");
  add("dcf10_p_target", Type::kDouble, "0.001");

  // sweeps
  add("alpha_list", Type::kString, "0,0.1,0.5,0.8,0.9");
  add("depth_list", Type::kString, "shallow,deep");
  add("sweep_out", Type::kPath, "");
  add("work_dir", Type::kPath, "");
  return schema;
}

std::string Trim(const std::string &s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

bool ParsesAs(const std::string &value, Type type,
              const std::vector<std::string> &enums) {
  char *end = nullptr;
  switch (type) {
    case Type::kString:
    case Type::kPath:
      return true;
    case Type::kInt: {
      std::strtol(value.c_str(), &end, 10);
      return end && *end == '\0' && !value.empty();
    }
    case Type::kUint64: {
      if (value.empty() || value[0] == '-') return false;
      std::strtoull(value.c_str(), &end, 10);
      return end && *end == '\0';
    }
    case Type::kDouble: {
      std::strtod(value.c_str(), &end);
      return end && *end == '\0' && !value.empty();
    }
    case Type::kFlag:
      return value == "on" || value == "off";
    case Type::kEnum:
      return std::find(enums.begin(), enums.end(), value) != enums.end();
  }
  return false;
}

}  // namespace

const std::vector<KeySpec> &ConfigSchema() {
  static const std::vector<KeySpec> schema = MakeSchema();
  return schema;
}

ExperimentConfig ExperimentConfig::Parse(
    const std::optional<std::filesystem::path> &config_file,
    const std::vector<std::pair<std::string, std::string>> &overrides) {
  ExperimentConfig cfg;
  std::vector<std::string> problems;

  std::vector<std::pair<std::string, std::string>> entries;
  if (config_file) {
    cfg.base_dir_ = std::filesystem::absolute(*config_file).parent_path();
    std::istringstream is(ReadTextFile(*config_file));
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = Trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        problems.push_back(StrCat("line ", line_no, ": expected key = value"));
        continue;
      }
      entries.emplace_back(Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)));
    }
  } else {
    cfg.base_dir_ = std::filesystem::current_path();
  }
  for (const auto &kv : overrides) entries.push_back(kv);

  const auto &schema = ConfigSchema();
  for (const auto &[key, value] : entries) {
    auto it = std::find_if(schema.begin(), schema.end(),
                           [&](const KeySpec &s) { return s.name == key; });
    if (it == schema.end()) {
      problems.push_back(StrCat("unknown key '", key, "'"));
      continue;
    }
    if (!value.empty() && !ParsesAs(value, it->type, it->enum_values)) {
      problems.push_back(
          StrCat("key '", key, "' has invalid value '", value, "'"));
      continue;
    }
    cfg.values_[key] = value;
  }
  if (!cfg.Has("seed")) problems.push_back("missing required key 'seed'");
  if (!problems.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < problems.size(); ++i)
      joined += (i ? "; " : "") + problems[i];
    throw Error(err::kConfig, joined);
  }
  return cfg;
}

const KeySpec &ExperimentConfig::Spec(const std::string &key) const {
  const auto &schema = ConfigSchema();
  auto it = std::find_if(schema.begin(), schema.end(),
                         [&](const KeySpec &s) { return s.name == key; });
  if (it == schema.end())
    throw Error(err::kConfig, StrCat("unknown key '", key, "'"));
  return *it;
}

std::string ExperimentConfig::Lookup(const std::string &key) const {
  const KeySpec &spec = Spec(key);
  auto it = values_.find(key);
  if (it != values_.end() && !it->second.empty()) return it->second;
  return spec.default_value;
}

bool ExperimentConfig::Has(const std::string &key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

std::string ExperimentConfig::GetString(const std::string &key) const {
  return Lookup(key);
}

long ExperimentConfig::GetInt(const std::string &key) const {
  return std::strtol(Lookup(key).c_str(), nullptr, 10);
}

std::uint64_t ExperimentConfig::GetUint64(const std::string &key) const {
  return std::strtoull(Lookup(key).c_str(), nullptr, 10);
}

double ExperimentConfig::GetDouble(const std::string &key) const {
  return std::strtod(Lookup(key).c_str(), nullptr);
}

bool ExperimentConfig::GetFlag(const std::string &key) const {
  return Lookup(key) == "on";
}

std::filesystem::path ExperimentConfig::GetPath(const std::string &key) const {
  std::string value = Lookup(key);
  if (value.empty()) return {};
  std::filesystem::path p(value);
  if (p.is_absolute()) return p;
  return base_dir_ / p;
}

}  // namespace ivmap
