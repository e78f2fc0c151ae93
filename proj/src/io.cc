// ivmap/io.cc

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

#include "ivmap/io.h"

#include <cstdio>
#include <cstring>

namespace ivmap {

namespace {

// Little-endian scalar encoding, independent of host byte order.
template <typename T>
void PutLe(std::ofstream &os, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char *>(buf), sizeof(T));
}

template <typename T>
T GetLe(std::ifstream &is) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char *>(buf), sizeof(T));
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

}  // namespace

BinaryWriter::BinaryWriter(const std::filesystem::path &path) : path_(path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  stream_.open(path, std::ios::binary | std::ios::trunc);
  if (!stream_)
    throw Error(err::kIo, StrCat("cannot open for writing: ", path.string()));
}

BinaryWriter::~BinaryWriter() = default;

void BinaryWriter::WriteMagic(const char magic[4]) { stream_.write(magic, 4); }

void BinaryWriter::WriteU8(std::uint8_t v) { PutLe(stream_, v); }
void BinaryWriter::WriteU32(std::uint32_t v) { PutLe(stream_, v); }
void BinaryWriter::WriteU64(std::uint64_t v) { PutLe(stream_, v); }

void BinaryWriter::WriteF64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  PutLe(stream_, bits);
}

void BinaryWriter::WriteString(const std::string &s) {
  WriteU32(static_cast<std::uint32_t>(s.size()));
  stream_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::WriteMatrixF64(const Matrix &m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) WriteF64(m(r, c));
}

void BinaryWriter::WriteMatrixF32(const Matrix &m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      float f = static_cast<float>(m(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      PutLe(stream_, bits);
    }
}

void BinaryWriter::WriteVectorF64(const Vector &v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) WriteF64(v[i]);
}

void BinaryWriter::WriteVectorF32(const Vector &v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    float f = static_cast<float>(v[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    PutLe(stream_, bits);
  }
}

void BinaryWriter::Close() {
  stream_.close();
  if (!stream_)
    throw Error(err::kIo, StrCat("write failed: ", path_.string()));
}

BinaryReader::BinaryReader(const std::filesystem::path &path) : path_(path) {
  stream_.open(path, std::ios::binary);
  if (!stream_)
    throw Error(err::kIo, StrCat("cannot open for reading: ", path.string()));
}

void BinaryReader::Require(std::size_t nbytes) {
  if (!stream_ || stream_.eof())
    throw Error(err::kFormat,
                StrCat("truncated file: ", path_.string(), " (wanted ",
                       nbytes, " more bytes)"));
}

void BinaryReader::ExpectMagic(const char magic[4]) {
  char buf[4];
  stream_.read(buf, 4);
  if (!stream_ || std::memcmp(buf, magic, 4) != 0)
    throw Error(err::kFormat,
                StrCat("bad magic in ", path_.string(), ": expected ",
                       std::string(magic, 4)));
}

std::uint8_t BinaryReader::ReadU8() {
  Require(1);
  std::uint8_t v = GetLe<std::uint8_t>(stream_);
  if (!stream_) throw Error(err::kFormat, StrCat("truncated: ", path_.string()));
  return v;
}

std::uint32_t BinaryReader::ReadU32() {
  Require(4);
  std::uint32_t v = GetLe<std::uint32_t>(stream_);
  if (!stream_) throw Error(err::kFormat, StrCat("truncated: ", path_.string()));
  return v;
}

std::uint64_t BinaryReader::ReadU64() {
  Require(8);
  std::uint64_t v = GetLe<std::uint64_t>(stream_);
  if (!stream_) throw Error(err::kFormat, StrCat("truncated: ", path_.string()));
  return v;
}

double BinaryReader::ReadF64() {
  std::uint64_t bits = ReadU64();
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string BinaryReader::ReadString() {
  std::uint32_t len = ReadU32();
  std::string s(len, '\0');
  stream_.read(s.data(), len);
  if (!stream_) throw Error(err::kFormat, StrCat("truncated: ", path_.string()));
  return s;
}

Matrix BinaryReader::ReadMatrixF64(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = ReadF64();
  return m;
}

Matrix BinaryReader::ReadMatrixF32(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::uint32_t bits = ReadU32();
      float f;
      std::memcpy(&f, &bits, sizeof(f));
      m(r, c) = static_cast<double>(f);
    }
  return m;
}

Vector BinaryReader::ReadVectorF64(Eigen::Index size) {
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = ReadF64();
  return v;
}

Vector BinaryReader::ReadVectorF32(Eigen::Index size) {
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    std::uint32_t bits = ReadU32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    v[i] = static_cast<double>(f);
  }
  return v;
}

bool BinaryReader::AtEof() {
  return stream_.peek() == std::ifstream::traits_type::eof();
}

std::string FileDigest(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw Error(err::kIo, StrCat("cannot open for digest: ", path.string()));
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001B3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(hash));
  return StrCat("fnv1a64:", hex);
}

std::string ReadTextFile(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(err::kIo, StrCat("cannot open: ", path.string()));
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void WriteTextFile(const std::filesystem::path &path, const std::string &text) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(err::kIo, StrCat("cannot write: ", path.string()));
  os << text;
  if (!os) throw Error(err::kIo, StrCat("write failed: ", path.string()));
}

std::string FormatFull(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace ivmap
