// ivmap/cli.h

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

#ifndef IVMAP_CLI_H_
#define IVMAP_CLI_H_

#include <ostream>
#include <string>
#include <vector>

namespace ivmap {

inline constexpr const char *kToolVersion = "ivmap 1.0.0";

/// Entry point shared by the binary and the tests.  args excludes argv[0]:
/// `<subcommand> [--config FILE] [--key value ...]`.  Returns the exit
/// status; on failure a single line `error: <CLASS>: <message>` goes to
/// `err`.  Every subcommand writes a run manifest
/// (`<primary output>.manifest.json`) next to its primary output.
int RunCli(const std::vector<std::string> &args, std::ostream &out,
           std::ostream &err);

}  // namespace ivmap

#endif  // IVMAP_CLI_H_
