/*
Copyright 2026 the pbpnet authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#include "pbp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace pbp {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& os, float v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  put_u32(os, bits);
}

bool get_bytes(std::istream& is, void* dst, std::streamsize n) {
  is.read(static_cast<char*>(dst), n);
  return is.gcount() == n;
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!get_bytes(is, b, 4))
    throw CheckpointError(std::string("truncated record: ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!get_bytes(is, b, 8))
    throw CheckpointError(std::string("truncated record: ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  for (const auto& e : params.entries) {
    put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<std::uint32_t>(e.value.rank()));
    for (Eigen::Index d : e.value.shape) put_u64(os, static_cast<std::uint64_t>(d));
    put_u32(os, 0);  // dtype 0 = 32-bit real
    for (Eigen::Index i = 0; i < e.value.size(); ++i) put_f32(os, e.value.data(i));
  }
  if (!os) throw DataError("write failed for checkpoint " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint_raw(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  if (!get_bytes(is, magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError("bad magic in " + path);

  std::vector<std::pair<std::string, Tensor>> records;
  for (;;) {
    // peek for clean EOF between records
    const int ch = is.peek();
    if (ch == std::char_traits<char>::eof()) break;
    const std::uint32_t name_len = get_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!get_bytes(is, name.data(), name_len))
      throw CheckpointError("truncated record: name");
    const std::uint32_t rank = get_u32(is, "rank");
    if (rank > 8) throw CheckpointError("implausible rank in record " + name);
    std::vector<Eigen::Index> shape(rank);
    Eigen::Index count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<Eigen::Index>(get_u64(is, "dims"));
      count *= shape[i];
    }
    const std::uint32_t dtype = get_u32(is, "dtype");
    if (dtype != 0)
      throw CheckpointError("unknown dtype code " + std::to_string(dtype) +
                            " in record " + name);
    Tensor t(shape);
    for (Eigen::Index i = 0; i < count; ++i)
      t.data(i) = std::bit_cast<float>(get_u32(is, "data"));
    records.emplace_back(std::move(name), std::move(t));
  }
  return records;
}

void load_checkpoint(ParamStore& params, const std::string& path) {
  auto records = load_checkpoint_raw(path);
  if (records.size() != params.size())
    throw ConfigError("architecture mismatch: checkpoint has " +
                      std::to_string(records.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  for (auto& [name, tensor] : records) {
    if (!params.has(name))
      throw ConfigError("architecture mismatch: checkpoint parameter '" + name +
                        "' not in model");
    auto& e = params.at(name);
    if (e.value.shape != tensor.shape)
      throw ConfigError("architecture mismatch: parameter '" + name + "' is " +
                        tensor.shape_string() + " in checkpoint but " +
                        e.value.shape_string() + " in model");
    e.value = std::move(tensor);
  }
}

}  // namespace pbp
