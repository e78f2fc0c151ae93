// ivmap/config.h

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

#ifndef IVMAP_CONFIG_H_
#define IVMAP_CONFIG_H_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivmap/common.h"

namespace ivmap {

/// One configuration key: name, type, default, and (for enums) the legal
/// values.  The schema is closed; unknown keys are rejected.
struct KeySpec {
  enum class Type { kString, kInt, kUint64, kDouble, kFlag, kEnum, kPath };
  std::string name;
  Type type = Type::kString;
  std::string default_value;
  std::vector<std::string> enum_values;
};

const std::vector<KeySpec> &ConfigSchema();

/// `key = value` lines with `#` comments; CLI overrides win over file
/// entries.  Construction validates everything at once: unknown keys, type
/// errors, and the mandatory seed are reported in a single CONFIG_INVALID
/// error listing every offending key.
class ExperimentConfig {
 public:
  static ExperimentConfig Parse(
      const std::optional<std::filesystem::path> &config_file,
      const std::vector<std::pair<std::string, std::string>> &overrides);

  bool Has(const std::string &key) const;  // set to a non-empty value
  std::string GetString(const std::string &key) const;
  long GetInt(const std::string &key) const;
  std::uint64_t GetUint64(const std::string &key) const;
  double GetDouble(const std::string &key) const;
  bool GetFlag(const std::string &key) const;  // on/off
  /// Resolved against the config file's directory (or the CWD when the
  /// config came only from overrides); empty path when unset.
  std::filesystem::path GetPath(const std::string &key) const;

  std::uint64_t seed() const { return GetUint64("seed"); }
  /// Snapshot of every explicitly-set key (for manifests).
  const std::map<std::string, std::string> &entries() const { return values_; }
  const std::filesystem::path &base_dir() const { return base_dir_; }

 private:
  const KeySpec &Spec(const std::string &key) const;
  std::string Lookup(const std::string &key) const;  // value or default
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

}  // namespace ivmap

#endif  // IVMAP_CONFIG_H_
