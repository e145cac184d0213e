// Copyright 2026 The eres2net-cpp Authors
// Licensed under the Apache License, Version 2.0

#include "eres2net/tensor_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace eres2net {

namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) put_u8(out, static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(out, static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint64_t get(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(origin_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated file while reading ") + what);
  }

  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensor_file(const std::vector<NamedTensor>& tensors) {
  std::string out(kTensorFileMagic, 4);
  put_u32(out, kTensorFileVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ContractError("tensor name too long: " + name.substr(0, 64) + "...");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_u8(out, static_cast<std::uint8_t>(tensor.rank()));
    for (int d : tensor.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_tensor_file(const std::string& bytes, const std::string& origin) {
  Reader in(bytes, origin);
  if (in.take(4, "magic") != std::string(kTensorFileMagic, 4)) in.fail("bad magic (expected \"ERSW\")");
  const auto version = in.get(4, "version");
  if (version != kTensorFileVersion) in.fail("unsupported format version " + std::to_string(version));
  const auto count = in.get(4, "tensor count");
  std::vector<NamedTensor> out;
  std::unordered_set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.get(2, "name length");
    std::string name = in.take(len, "tensor name");
    if (!seen.insert(name).second) in.fail("duplicate tensor '" + name + "'");
    const auto rank = in.get(1, "rank");
    if (rank < 1 || rank > 4) in.fail("tensor '" + name + "' has invalid rank " + std::to_string(rank));
    Shape dims;
    std::uint64_t elements = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      const auto d = in.get(4, "dims");
      if (d == 0 || d > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
        in.fail("tensor '" + name + "' has invalid dim " + std::to_string(d));
      dims.push_back(static_cast<int>(d));
      elements *= d;
    }
    if (elements > (bytes.size() - in.pos()) / 4) in.fail("truncated payload for tensor '" + name + "'");
    std::vector<float> data(elements);
    for (auto& v : data) v = std::bit_cast<float>(static_cast<std::uint32_t>(in.get(4, "payload")));
    out.emplace_back(std::move(name), Tensor<float>(std::move(dims), std::move(data)));
  }
  if (!in.done()) in.fail("trailing bytes after last tensor");
  return out;
}

void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_tensor_file(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::vector<NamedTensor> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor_file(bytes, path);
}

}  // namespace eres2net
