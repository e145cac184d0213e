// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#ifndef ERES2NET_TENSOR_IO_H_
#define ERES2NET_TENSOR_IO_H_

// Named-tensor container shared by weight files, embedding files and feature
// caches. Little-endian layout:
//
//   "ERSW" | version u32 = 1 | count u32
//   per tensor: name_len u16 | name (UTF-8) | rank u8 | dims u32 x rank |
//               float32 payload, row-major

#include <string>
#include <utility>
#include <vector>

#include "eres2net/tensor.h"

namespace eres2net {

inline constexpr char kTensorFileMagic[4] = {'E', 'R', 'S', 'W'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

using NamedTensor = std::pair<std::string, Tensor<float>>;

/// Throws IoError when the file cannot be written.
void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors);

/// Throws IoError when the file cannot be opened and FormatError on bad magic,
/// unsupported version, truncation, duplicate names or trailing bytes.
std::vector<NamedTensor> read_tensor_file(const std::string& path);

std::string encode_tensor_file(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensor_file(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace eres2net

#endif  // ERES2NET_TENSOR_IO_H_
