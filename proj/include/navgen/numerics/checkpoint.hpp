#pragma once

// Checkpoint container:
//   byte 0        format version (kCheckpointVersion)
//   bytes 1..8    header length H, u64 little-endian
//   next H bytes  JSON header: config, config_hash, global_step and a tensor
//                 table {name, shape, dtype ("f32"|"f64"), offset, nbytes}
//   remainder     raw little-endian scalar payloads at the listed offsets
// Adam moments, when saved, appear as extra tensors named "<param>#m" and
// "<param>#v".

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "navgen/numerics/layers.hpp"

namespace navgen {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

inline constexpr std::uint8_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string config_hash(const nlohmann::json& config) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(config.dump());
  return os.str();
}

struct CheckpointInfo {
  nlohmann::json config;
  std::string config_hash;
  long global_step = 0;
  long optimizer_step = 0;
};

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct PendingTensor {
  std::string name;
  Shape shape;
  std::vector<char> bytes;
  const char* dtype;
};

template <typename T>
PendingTensor pack(const std::string& name, const Shape& shape, std::span<const T> values) {
  PendingTensor t{name, shape, std::vector<char>(values.size() * sizeof(T)), dtype_name<T>()};
  std::memcpy(t.bytes.data(), values.data(), t.bytes.size());
  return t;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store, const nlohmann::json& config,
                     long global_step, long optimizer_step = 0, bool with_optimizer = false) {
  std::vector<detail::PendingTensor> tensors;
  for (const auto& p : store.all()) {
    tensors.push_back(detail::pack<T>(p.name, p.tensor.shape(), p.tensor.data()));
    if (with_optimizer && p.adam_m.size() == p.tensor.size()) {
      tensors.push_back(detail::pack<T>(p.name + "#m", p.tensor.shape(), std::span<const T>(p.adam_m)));
      tensors.push_back(detail::pack<T>(p.name + "#v", p.tensor.shape(), std::span<const T>(p.adam_v)));
    }
  }
  nlohmann::json header;
  header["format"] = "navgen-checkpoint";
  header["config"] = config;
  header["config_hash"] = config_hash(config);
  header["global_step"] = global_step;
  header["optimizer_step"] = optimizer_step;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"dtype", t.dtype}, {"offset", offset}, {"nbytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  const std::string h = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os.put(static_cast<char>(kCheckpointVersion));
  const std::uint64_t len = h.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& t : tensors) os.write(t.bytes.data(), static_cast<std::streamsize>(t.bytes.size()));
  if (!os) throw CheckpointError("write failed: " + path);
}

inline nlohmann::json read_checkpoint_header(std::ifstream& is, const std::string& path) {
  const int version = is.get();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is || len > (1ull << 32)) throw CheckpointError("corrupt checkpoint header: " + path);
  std::string h(len, '\0');
  is.read(h.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError("truncated checkpoint header: " + path);
  return nlohmann::json::parse(h);
}

inline CheckpointInfo peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  const auto header = read_checkpoint_header(is, path);
  return {header.at("config"), header.at("config_hash").get<std::string>(), header.at("global_step").get<long>(),
          header.value("optimizer_step", 0L)};
}

/// Loads every parameter of `store` from `path`, converting dtype if needed.
/// Missing or mis-shaped tensors are errors.
template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, ParamStore<T>& store, bool with_optimizer = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  const auto header = read_checkpoint_header(is, path);
  const auto base = is.tellg();

  std::map<std::string, nlohmann::json> table;
  for (const auto& t : header.at("tensors")) table[t.at("name").template get<std::string>()] = t;

  auto read_into = [&](const nlohmann::json& entry, std::span<T> dst, const std::string& name) {
    const auto dtype = entry.at("dtype").template get<std::string>();
    const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (!width) throw CheckpointError("unknown dtype " + dtype + " for " + name);
    const auto nbytes = entry.at("nbytes").template get<std::uint64_t>();
    if (nbytes != dst.size() * width) throw CheckpointError("payload size mismatch for " + name);
    std::vector<char> buf(nbytes);
    is.seekg(base + static_cast<std::streamoff>(entry.at("offset").template get<std::uint64_t>()));
    is.read(buf.data(), static_cast<std::streamsize>(nbytes));
    if (!is) throw CheckpointError("truncated payload for " + name);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (width == 4) {
        float v;
        std::memcpy(&v, buf.data() + i * 4, 4);
        dst[i] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, buf.data() + i * 8, 8);
        dst[i] = static_cast<T>(v);
      }
    }
  };

  for (auto& p : store.all()) {
    auto it = table.find(p.name);
    if (it == table.end()) throw CheckpointError("checkpoint " + path + " lacks parameter " + p.name);
    const auto shape = it->second.at("shape").template get<Shape>();
    if (shape != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": checkpoint " + shape_str(shape) + " vs model " +
                            shape_str(p.tensor.shape()));
    }
    read_into(it->second, p.tensor.mutable_data(), p.name);
    if (with_optimizer) {
      auto im = table.find(p.name + "#m");
      auto iv = table.find(p.name + "#v");
      if (im != table.end() && iv != table.end()) {
        p.adam_m.assign(p.tensor.size(), T(0));
        p.adam_v.assign(p.tensor.size(), T(0));
        read_into(im->second, p.adam_m, p.name + "#m");
        read_into(iv->second, p.adam_v, p.name + "#v");
      }
    }
  }
  return {header.at("config"), header.at("config_hash").template get<std::string>(), header.at("global_step").template get<long>(),
          header.value("optimizer_step", 0L)};
}

}  // namespace navgen
