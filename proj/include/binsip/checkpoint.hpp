// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary tensor container used for model checkpoints and
// feature files: magic, format version, config JSON block, then named
// tensors as (name, dtype tag, rank, shape, raw data).

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "binsip/common.hpp"

namespace binsip {

inline constexpr char kTensorFileMagic[8] = {'B', 'S', 'I', 'P', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

enum class DType : std::uint8_t { F64 = 0, F32 = 1, I64 = 2 };

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;  // stored per dtype, held as double in memory
  DType dtype = DType::F64;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

struct TensorFile {
  std::string config_json;
  std::vector<NamedTensor> tensors;

  const NamedTensor& get(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw DataError("TensorFile: missing tensor '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return true;
    }
    return false;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw DataError("tensor container: truncated file");
  return v;
}

}  // namespace detail

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& tf) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("write_tensor_file: cannot open " + path.string());
  f.write(kTensorFileMagic, sizeof(kTensorFileMagic));
  detail::write_pod<std::uint32_t>(f, kTensorFileVersion);
  detail::write_pod<std::uint64_t>(f, tf.config_json.size());
  f.write(tf.config_json.data(), static_cast<std::streamsize>(tf.config_json.size()));
  detail::write_pod<std::uint64_t>(f, tf.tensors.size());
  for (const auto& t : tf.tensors) {
    detail::write_pod<std::uint64_t>(f, t.name.size());
    f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_pod<std::uint8_t>(f, static_cast<std::uint8_t>(t.dtype));
    detail::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::write_pod<std::int64_t>(f, d);
    if (static_cast<std::int64_t>(t.data.size()) != t.numel())
      throw DataError("write_tensor_file: tensor '" + t.name + "' data/shape mismatch");
    switch (t.dtype) {
      case DType::F64:
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        break;
      case DType::F32: {
        std::vector<float> tmp(t.data.begin(), t.data.end());
        f.write(reinterpret_cast<const char*>(tmp.data()),
                static_cast<std::streamsize>(tmp.size() * sizeof(float)));
        break;
      }
      case DType::I64: {
        std::vector<std::int64_t> tmp(t.data.size());
        for (std::size_t i = 0; i < tmp.size(); ++i)
          tmp[i] = static_cast<std::int64_t>(t.data[i]);
        f.write(reinterpret_cast<const char*>(tmp.data()),
                static_cast<std::streamsize>(tmp.size() * sizeof(std::int64_t)));
        break;
      }
    }
  }
  if (!f) throw DataError("write_tensor_file: write failed for " + path.string());
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_tensor_file: cannot open " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kTensorFileMagic, sizeof(magic)) != 0)
    throw DataError("read_tensor_file: bad magic in " + path.string());
  const auto version = detail::read_pod<std::uint32_t>(f);
  if (version != kTensorFileVersion)
    throw DataError("read_tensor_file: unsupported version " + std::to_string(version));
  TensorFile tf;
  const auto cfg_len = detail::read_pod<std::uint64_t>(f);
  tf.config_json.resize(cfg_len);
  f.read(tf.config_json.data(), static_cast<std::streamsize>(cfg_len));
  const auto n_tensors = detail::read_pod<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    const auto name_len = detail::read_pod<std::uint64_t>(f);
    t.name.resize(name_len);
    f.read(t.name.data(), static_cast<std::streamsize>(name_len));
    t.dtype = static_cast<DType>(detail::read_pod<std::uint8_t>(f));
    const auto rank = detail::read_pod<std::uint32_t>(f);
    t.shape.resize(rank);
    for (auto& d : t.shape) d = detail::read_pod<std::int64_t>(f);
    const std::int64_t n = t.numel();
    t.data.resize(static_cast<std::size_t>(n));
    switch (t.dtype) {
      case DType::F64:
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        break;
      case DType::F32: {
        std::vector<float> tmp(static_cast<std::size_t>(n));
        f.read(reinterpret_cast<char*>(tmp.data()),
               static_cast<std::streamsize>(tmp.size() * sizeof(float)));
        for (std::size_t j = 0; j < tmp.size(); ++j) t.data[j] = tmp[j];
        break;
      }
      case DType::I64: {
        std::vector<std::int64_t> tmp(static_cast<std::size_t>(n));
        f.read(reinterpret_cast<char*>(tmp.data()),
               static_cast<std::streamsize>(tmp.size() * sizeof(std::int64_t)));
        for (std::size_t j = 0; j < tmp.size(); ++j) t.data[j] = static_cast<double>(tmp[j]);
        break;
      }
      default:
        throw DataError("read_tensor_file: unknown dtype tag");
    }
    if (!f) throw DataError("read_tensor_file: truncated tensor data in " + path.string());
    tf.tensors.push_back(std::move(t));
  }
  return tf;
}

}  // namespace binsip
