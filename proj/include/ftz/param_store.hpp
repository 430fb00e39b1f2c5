#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ftz/tensor.hpp"

namespace ftz {

// Named tensors partitioned into frozen and trainable sets. Iteration order
// is insertion order, which keeps initialization, optimization and
// serialization deterministic.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor tensor, bool frozen);
  bool contains(const std::string& name) const;
  Tensor get(const std::string& name) const;  // missing name -> CheckpointError
  bool frozen(const std::string& name) const;
  void set_frozen(const std::string& name, bool frozen);

  const std::vector<std::string>& names() const { return order_; }
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  size_t size() const { return order_.size(); }

  // Checkpoint layout: magic "FTZ1"; u32 LE tensor count; manifest of
  // per-tensor records (u16 LE name length, UTF-8 name, u8 dtype code with
  // 0 = 32-bit float, u8 frozen flag, u8 rank, rank x u64 LE extents);
  // then raw tensor data in manifest order, row-major, little-endian
  // IEEE-754 single precision. No padding, no checksum.
  void save(const std::string& path) const;
  static ParameterStore load(const std::string& path);

 private:
  struct Entry {
    Tensor tensor;
    bool frozen = false;
  };
  const Entry& entry(const std::string& name) const;

  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

// SHA-256 hex digest over the named tensors (sorted by name): for each, the
// UTF-8 name followed by the row-major little-endian f32 data bytes.
std::string sha256_of_params(const ParameterStore& store,
                             const std::vector<std::string>& prefixes);

std::string sha256_hex(const void* data, size_t size);

}  // namespace ftz
