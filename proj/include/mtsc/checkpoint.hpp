#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "mtsc/nn.hpp"

namespace mtsc::ad {

// Checkpoint layout (little-endian):
//   magic "MTSC" | u32 version | u64 parameter count
//   per parameter: u32 name length | name bytes | u8 dtype (0=f32, 1=f64)
//                  | u8 rank | u64 extents[rank] | raw values
namespace ckpt {
constexpr char kMagic[4] = {'M', 'T', 'S', 'C'};
constexpr uint32_t kVersion = 1;

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  check(in.good(), "checkpoint: truncated file");
  return v;
}
}  // namespace ckpt

template <typename T>
uint8_t dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "checkpoint: cannot open for writing: ", path);
  out.write(ckpt::kMagic, 4);
  ckpt::write_pod(out, ckpt::kVersion);
  ckpt::write_pod(out, uint64_t(params.count()));
  for (size_t i = 0; i < params.count(); ++i) {
    const Node<T>* node = params.node(i);
    const std::string& name = params.name(i);
    ckpt::write_pod(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    ckpt::write_pod(out, dtype_tag<T>());
    ckpt::write_pod(out, uint8_t(node->shape.size()));
    for (size_t d : node->shape) ckpt::write_pod(out, uint64_t(d));
    out.write(reinterpret_cast<const char*>(node->value.data()),
              std::streamsize(node->value.size() * sizeof(T)));
  }
  check(out.good(), "checkpoint: write failed: ", path);
}

/// Loads values into an existing store; names, order, dtypes and shapes must
/// match the store exactly.
template <typename T>
void load_checkpoint(ParamStore<T>& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "checkpoint: cannot open: ", path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, ckpt::kMagic, 4) == 0, "checkpoint: bad magic in ", path);
  uint32_t version = ckpt::read_pod<uint32_t>(in);
  check(version == ckpt::kVersion, "checkpoint: unsupported version ", version);
  uint64_t count = ckpt::read_pod<uint64_t>(in);
  check(count == params.count(), "checkpoint: parameter count ", count, " != model count ",
        params.count());
  for (size_t i = 0; i < count; ++i) {
    uint32_t name_len = ckpt::read_pod<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    check(name == params.name(i), "checkpoint: parameter ", i, " is '", name, "', expected '",
          params.name(i), "'");
    uint8_t dtype = ckpt::read_pod<uint8_t>(in);
    check(dtype == dtype_tag<T>(), "checkpoint: dtype mismatch for ", name);
    uint8_t rank = ckpt::read_pod<uint8_t>(in);
    Shape shape(rank);
    for (size_t d = 0; d < rank; ++d) shape[d] = size_t(ckpt::read_pod<uint64_t>(in));
    Node<T>* node = params.node(i);
    check(shape == node->shape, "checkpoint: shape mismatch for ", name, ": file ",
          shape_str(shape), " vs model ", shape_str(node->shape));
    in.read(reinterpret_cast<char*>(node->value.data()),
            std::streamsize(node->value.size() * sizeof(T)));
    check(in.good(), "checkpoint: truncated values for ", name);
  }
}

}  // namespace mtsc::ad
