// Binary checkpoint container.
//
// Layout: "LUKE", u32 version, u64 header length, JSON header, payload. All
// integers and tensor elements are little-endian. The header is
//   {"metadata": <any JSON>, "tensors": {name: {"shape", "dtype", "offset"}}}
// and tensors are packed into the payload in name order with no gaps.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "luke/io.hpp"
#include "luke/numerics/params.hpp"
#include "luke/numerics/tensor.hpp"

namespace luke {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'L', 'U', 'K', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

struct StoredTensor {
  Shape shape;
  std::string dtype;  // "f32" or "f64"
  std::string bytes;

  template <typename T>
  static StoredTensor from(const Tensor<T>& t) {
    StoredTensor s{t.shape(), dtype_name<T>(), std::string(t.size() * sizeof(T), '\0')};
    std::memcpy(s.bytes.data(), t.data().data(), s.bytes.size());
    return s;
  }

  // Converts from the stored precision when it differs from T.
  template <typename T>
  Tensor<T> as() const {
    Tensor<T> out(shape);
    if (dtype == "f32") {
      std::vector<float> v(out.size());
      std::memcpy(v.data(), bytes.data(), bytes.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = T(v[i]);
    } else {
      std::vector<double> v(out.size());
      std::memcpy(v.data(), bytes.data(), bytes.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = T(v[i]);
    }
    return out;
  }
};

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, StoredTensor> tensors;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    tensors[name] = StoredTensor::from(t);
  }

  template <typename T>
  void put_all(const std::string& prefix, const ParamStore<T>& store) {
    for (const auto& [name, t] : store) put(prefix + name, t);
  }

  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
    return it->second.as<T>();
  }

  // Every tensor whose name starts with `prefix`, with the prefix stripped.
  template <typename T>
  ParamStore<T> get_all(const std::string& prefix) const {
    ParamStore<T> out;
    for (const auto& [name, _] : tensors) {
      if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), get<T>(name));
    }
    return out;
  }
};

namespace detail {

template <typename U>
void append_le(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U read_le(const std::string& in, std::size_t at) {
  if (at + sizeof(U) > in.size()) throw CheckpointError("checkpoint truncated");
  U v;
  std::memcpy(&v, in.data() + at, sizeof(U));
  return v;
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw CheckpointError("unknown dtype '" + dtype + "'");
}

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  nlohmann::json table = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    table[name] = {{"shape", t.shape}, {"dtype", t.dtype}, {"offset", offset}};
    offset += t.bytes.size();
  }
  const std::string header =
      nlohmann::json{{"metadata", ck.metadata}, {"tensors", table}}.dump();
  std::string out(kCheckpointMagic, 4);
  detail::append_le<std::uint32_t>(out, kCheckpointVersion);
  detail::append_le<std::uint64_t>(out, header.size());
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& [_, t] : ck.tensors) out += t.bytes;
  return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const auto version = detail::read_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = detail::read_le<std::uint64_t>(bytes, 8);
  if (16 + header_len > bytes.size()) throw CheckpointError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  Checkpoint ck;
  ck.metadata = header.value("metadata", nlohmann::json::object());
  const std::size_t payload = 16 + header_len;
  std::uint64_t expected = 0;
  for (const auto& [name, entry] : header.at("tensors").items()) {
    StoredTensor t;
    t.shape = entry.at("shape").get<Shape>();
    t.dtype = entry.at("dtype").get<std::string>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset != expected) throw CheckpointError("tensor '" + name + "' is not packed in order");
    const std::size_t n = shape_size(t.shape) * detail::dtype_size(t.dtype);
    if (payload + offset + n > bytes.size()) {
      throw CheckpointError("tensor '" + name + "' extends past the end of the file");
    }
    t.bytes = bytes.substr(payload + offset, n);
    expected += n;
    ck.tensors.emplace(name, std::move(t));
  }
  if (payload + expected != bytes.size()) throw CheckpointError("trailing bytes after payload");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_atomic(path, serialize(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize(read_file(path));
}

}  // namespace luke
