// ivmap/io.h

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

#ifndef IVMAP_IO_H_
#define IVMAP_IO_H_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "ivmap/common.h"

namespace ivmap {

// Binary container primitives shared by all ivmap file formats.  Everything
// is little-endian; each format starts with a 4-byte magic string.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path &path);
  ~BinaryWriter();

  void WriteMagic(const char magic[4]);
  void WriteU8(std::uint8_t v);
  void WriteU32(std::uint32_t v);
  void WriteU64(std::uint64_t v);
  void WriteF64(double v);
  void WriteString(const std::string &s);  // u32 length + bytes
  void WriteMatrixF64(const Matrix &m);    // row-major payload, no dims
  void WriteMatrixF32(const Matrix &m);
  void WriteVectorF64(const Vector &v);
  void WriteVectorF32(const Vector &v);
  void Close();

 private:
  std::ofstream stream_;
  std::filesystem::path path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path &path);

  void ExpectMagic(const char magic[4]);
  std::uint8_t ReadU8();
  std::uint32_t ReadU32();
  std::uint64_t ReadU64();
  double ReadF64();
  std::string ReadString();
  Matrix ReadMatrixF64(Eigen::Index rows, Eigen::Index cols);
  Matrix ReadMatrixF32(Eigen::Index rows, Eigen::Index cols);
  Vector ReadVectorF64(Eigen::Index size);
  Vector ReadVectorF32(Eigen::Index size);
  bool AtEof();
  const std::filesystem::path &path() const { return path_; }

 private:
  void Require(std::size_t nbytes);
  std::ifstream stream_;
  std::filesystem::path path_;
};

/// FNV-1a 64-bit digest of a file's bytes, as "fnv1a64:<16 hex digits>".
/// Used for the recomputable input/output digests in run manifests.
std::string FileDigest(const std::filesystem::path &path);

/// Reads a whole text file (errors with IO_ERROR if missing).
std::string ReadTextFile(const std::filesystem::path &path);
void WriteTextFile(const std::filesystem::path &path, const std::string &text);

/// Prints a double with 17 significant digits (round-trip exact).
std::string FormatFull(double v);

}  // namespace ivmap

#endif  // IVMAP_IO_H_
