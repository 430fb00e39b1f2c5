#include "ftz/param_store.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

namespace ftz {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'Z', '1'};
constexpr uint8_t kDtypeF32 = 0;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  const uint32_t bits = std::bit_cast<uint32_t>(v);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const uint8_t* data, size_t size, std::string path)
      : data_(data), size_(size), path_(std::move(path)) {}

  void need(size_t n) const {
    if (pos_ + n > size_) throw CheckpointError("truncated checkpoint file: " + path_);
  }
  const uint8_t* take(size_t n) {
    need(n);
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  uint16_t u16() {
    const uint8_t* p = take(2);
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    const uint8_t* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const uint8_t* p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    return std::bit_cast<float>(bits);
  }
  size_t remaining() const { return size_ - pos_; }
  const std::string& path() const { return path_; }

 private:
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  std::string path_;
};

std::vector<uint8_t> f32_bytes(const Tensor& t) {
  std::vector<uint8_t> out;
  out.reserve(t.numel() * 4);
  for (double v : t.vec()) put_f32(out, static_cast<float>(v));
  return out;
}

}  // namespace

void ParameterStore::add(const std::string& name, Tensor tensor, bool frozen) {
  if (entries_.count(name)) throw CheckpointError("duplicate tensor name: " + name);
  if (!tensor.defined()) throw Error("ParameterStore::add: undefined tensor for " + name);
  order_.push_back(name);
  entries_[name] = Entry{std::move(tensor), frozen};
}

bool ParameterStore::contains(const std::string& name) const { return entries_.count(name) > 0; }

const ParameterStore::Entry& ParameterStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw CheckpointError("missing parameter: " + name);
  return it->second;
}

Tensor ParameterStore::get(const std::string& name) const { return entry(name).tensor; }

bool ParameterStore::frozen(const std::string& name) const { return entry(name).frozen; }

void ParameterStore::set_frozen(const std::string& name, bool frozen) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw CheckpointError("missing parameter: " + name);
  it->second.frozen = frozen;
}

std::vector<std::string> ParameterStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const std::string& name : order_) {
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  }
  return out;
}

void ParameterStore::save(const std::string& path) const {
  std::vector<uint8_t> bytes;
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u32(bytes, static_cast<uint32_t>(order_.size()));
  for (const std::string& name : order_) {
    const Entry& e = entries_.at(name);
    if (name.size() > 0xffff) throw CheckpointError("tensor name too long: " + name);
    put_u16(bytes, static_cast<uint16_t>(name.size()));
    bytes.insert(bytes.end(), name.begin(), name.end());
    bytes.push_back(kDtypeF32);
    bytes.push_back(e.frozen ? 1 : 0);
    const Shape& shape = e.tensor.shape();
    bytes.push_back(static_cast<uint8_t>(shape.size()));
    for (int extent : shape) put_u64(bytes, static_cast<uint64_t>(extent));
  }
  for (const std::string& name : order_) {
    const std::vector<uint8_t> data = f32_bytes(entries_.at(name).tensor);
    bytes.insert(bytes.end(), data.begin(), data.end());
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw IoError("short write: " + path);
  }
}

ParameterStore ParameterStore::load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> bytes;
  uint8_t buffer[1 << 16];
  size_t got = 0;
  while ((got = std::fread(buffer, 1, sizeof(buffer), f.get())) > 0) {
    bytes.insert(bytes.end(), buffer, buffer + got);
  }
  Reader reader(bytes.data(), bytes.size(), path);

  const uint8_t* magic = reader.take(4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("bad magic in checkpoint file: " + path);
  }
  const uint32_t count = reader.u32();
  struct Record {
    std::string name;
    bool frozen;
    Shape shape;
  };
  std::vector<Record> manifest;
  manifest.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = reader.u16();
    const uint8_t* name_bytes = reader.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const uint8_t dtype = *reader.take(1);
    if (dtype != kDtypeF32) {
      throw CheckpointError("unknown dtype code " + std::to_string(dtype) + " for tensor " + name);
    }
    const uint8_t frozen = *reader.take(1);
    const uint8_t rank = *reader.take(1);
    Shape shape(rank);
    for (uint8_t r = 0; r < rank; ++r) {
      const uint64_t extent = reader.u64();
      if (extent == 0 || extent > static_cast<uint64_t>(1) << 31) {
        throw CheckpointError("bad extent in checkpoint for tensor " + name);
      }
      shape[r] = static_cast<int>(extent);
    }
    manifest.push_back(Record{std::move(name), frozen != 0, std::move(shape)});
  }

  ParameterStore store;
  for (const Record& rec : manifest) {
    const size_t n = shape_numel(rec.shape);
    std::vector<double> values(n);
    for (size_t i = 0; i < n; ++i) values[i] = static_cast<double>(reader.f32());
    store.add(rec.name, Tensor::from_data(rec.shape, std::move(values)), rec.frozen);
  }
  if (reader.remaining() != 0) {
    throw CheckpointError("trailing bytes in checkpoint file: " + path);
  }
  return store;
}

std::string sha256_hex(const void* data, size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, size, digest, &digest_len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_of_params(const ParameterStore& store,
                             const std::vector<std::string>& prefixes) {
  std::vector<std::string> selected;
  for (const std::string& prefix : prefixes) {
    for (std::string& name : store.names_with_prefix(prefix)) selected.push_back(std::move(name));
  }
  std::sort(selected.begin(), selected.end());
  std::vector<uint8_t> stream;
  for (const std::string& name : selected) {
    stream.insert(stream.end(), name.begin(), name.end());
    const std::vector<uint8_t> data = f32_bytes(store.get(name));
    stream.insert(stream.end(), data.begin(), data.end());
  }
  return sha256_hex(stream.data(), stream.size());
}

}  // namespace ftz
