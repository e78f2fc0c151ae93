// ivmap/common.h

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

#ifndef IVMAP_COMMON_H_
#define IVMAP_COMMON_H_

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ivmap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Error with a stable machine-parsable code; the CLI prints
/// "error: <code>: <message>" and maps every failure to one of these.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string &message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string &code() const { return code_; }

 private:
  std::string code_;
};

namespace err {
inline constexpr const char *kConfig = "CONFIG_INVALID";
inline constexpr const char *kIo = "IO_ERROR";
inline constexpr const char *kFormat = "FORMAT_INVALID";
inline constexpr const char *kPrecondition = "PRECONDITION_FAILED";
inline constexpr const char *kDimension = "DIMENSION_MISMATCH";
inline constexpr const char *kNonFinite = "NONFINITE_INPUT";
inline constexpr const char *kEmpty = "EMPTY_INPUT";
inline constexpr const char *kPosteriorRowSum = "POSTERIOR_ROW_SUM";
inline constexpr const char *kMissingEnergies = "MISSING_ENERGIES";
inline constexpr const char *kZeroVector = "ZERO_VECTOR";
inline constexpr const char *kSingleSpeaker = "SINGLE_SPEAKER";
inline constexpr const char *kMetricOneClass = "METRIC_ONE_CLASS";
inline constexpr const char *kOrphanSegment = "ORPHAN_SEGMENT";
inline constexpr const char *kPhonemeInput = "PHONEME_INPUT_MISMATCH";
inline constexpr const char *kTrialCount = "TRIAL_COUNT_EXCEEDED";
inline constexpr const char *kUsage = "USAGE";
}  // namespace err

/// Deterministic pseudo-random source.  std::mt19937_64 has a fully specified
/// bit stream; uniform and Gaussian draws are derived from it with explicit
/// arithmetic (no std::*_distribution) so that a given seed produces the same
/// values on every platform and in every build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t RawU64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  /// Standard normal via Box-Muller; the second deviate of each pair is
  /// cached so draws stay aligned with the underlying stream.
  double Gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - Uniform();  // (0, 1]
    double u2 = Uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n); rejection sampling, no modulo bias.
  std::uint64_t UniformInt(std::uint64_t n) {
    if (n == 0) throw Error(err::kPrecondition, "UniformInt: n must be > 0");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t draw;
    do {
      draw = engine_();
    } while (draw >= limit);
    return draw % n;
  }

  template <typename T>
  void Shuffle(std::vector<T> *items) {
    for (std::size_t i = items->size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(UniformInt(i));
      std::swap((*items)[i - 1], (*items)[j]);
    }
  }

  /// Derives an independent stream seed (splitmix64 finalizer over the
  /// seed xored with a stream index); used for per-utterance generation.
  static std::uint64_t Mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Kahan compensated accumulator.
class KahanAccumulator {
 public:
  void Add(double x) {
    double y = x - compensation_;
    double t = sum_ + y;
    compensation_ = (t - sum_) - y;
    sum_ = t;
  }
  double Sum() const { return sum_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

inline double LogSumExp(const Vector &log_values) {
  double max_val = log_values.maxCoeff();
  if (!std::isfinite(max_val)) return max_val;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < log_values.size(); ++i)
    sum += std::exp(log_values[i] - max_val);
  return max_val + std::log(sum);
}

template <typename... Args>
std::string StrCat(Args &&...args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

inline void CheckFinite(const Matrix &m, const char *what) {
  if (!m.allFinite())
    throw Error(err::kNonFinite, StrCat(what, " contains non-finite values"));
}

inline void CheckFinite(const Vector &v, const char *what) {
  if (!v.allFinite())
    throw Error(err::kNonFinite, StrCat(what, " contains non-finite values"));
}

}  // namespace ivmap

#endif  // IVMAP_COMMON_H_
