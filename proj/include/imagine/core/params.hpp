#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imagine/core/rng.hpp"
#include "imagine/core/tensor.hpp"

namespace imagine {

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value, accumulated by Tape::backward
  Tensor<T> adam_m;
  Tensor<T> adam_v;
};

/// Named parameter container. Entries are created on first access with
/// variance-scaling fan-in initialization (zero biases); the init stream is
/// seeded from the entry name so results do not depend on creation order.
/// std::map keeps iteration (and thus optimizer updates) deterministic.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t init_seed = 0) : init_seed_(init_seed) {}

  /// Weight tensor: fan-in scaled normal init. `fan_in` defaults to the
  /// product of all dimensions but the last.
  ParamEntry<T>& weight(const std::string& name, Shape shape, long fan_in = -1) {
    auto it = entries_.find(name);
    if (it != entries_.end()) {
      IM_CHECK(it->second.value.shape() == shape,
               "parameter " + name + " redefined with different shape");
      return it->second;
    }
    ParamEntry<T> e;
    e.value = Tensor<T>(shape);
    if (fan_in < 0) {
      fan_in = 1;
      for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    }
    Rng rng(init_seed_ ^ hash_name(name));
    const double stddev = std::sqrt(1.0 / static_cast<double>(std::max<long>(fan_in, 1)));
    rng.fill_normal(e.value, stddev);
    e.grad = Tensor<T>(shape);
    auto [pos, inserted] = entries_.emplace(name, std::move(e));
    (void)inserted;
    return pos->second;
  }

  /// Bias tensor: zero init.
  ParamEntry<T>& bias(const std::string& name, Shape shape) {
    auto it = entries_.find(name);
    if (it != entries_.end()) {
      IM_CHECK(it->second.value.shape() == shape,
               "parameter " + name + " redefined with different shape");
      return it->second;
    }
    ParamEntry<T> e;
    e.value = Tensor<T>(shape);
    e.grad = Tensor<T>(shape);
    auto [pos, inserted] = entries_.emplace(name, std::move(e));
    (void)inserted;
    return pos->second;
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  ParamEntry<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    IM_CHECK(it != entries_.end(), "unknown parameter " + name);
    return it->second;
  }
  const ParamEntry<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    IM_CHECK(it != entries_.end(), "unknown parameter " + name);
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, e] : entries_) e.grad.zero();
  }

  long param_count() const {
    long n = 0;
    for (const auto& [name, e] : entries_) n += e.value.numel();
    return n;
  }

  size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// 64-bit digest of all parameter bytes, in name order. Used by the
  /// frozen-parameter checks.
  uint64_t value_digest() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* p, size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
      }
    };
    for (const auto& [name, e] : entries_) {
      mix(name.data(), name.size());
      mix(e.value.data(), sizeof(T) * static_cast<size_t>(e.value.numel()));
    }
    return h;
  }

  void copy_values_from(const ParamStore<T>& other) {
    for (const auto& [name, e] : other.entries_) {
      auto it = entries_.find(name);
      if (it == entries_.end()) {
        ParamEntry<T> ne;
        ne.value = e.value;
        ne.grad = Tensor<T>(e.value.shape());
        entries_.emplace(name, std::move(ne));
      } else {
        IM_CHECK(it->second.value.shape() == e.value.shape(),
                 "copy_values_from: shape mismatch for " + name);
        it->second.value = e.value;
      }
    }
  }

  uint64_t init_seed() const { return init_seed_; }

 private:
  uint64_t init_seed_ = 0;
  std::map<std::string, ParamEntry<T>> entries_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment SGD over a ParamStore. Optionally restricted to names
/// with a given prefix; everything else is left untouched (frozen).
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}, std::string prefix = "")
      : cfg_(cfg), prefix_(std::move(prefix)) {}

  void step(ParamStore<T>& ps) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& [name, e] : ps) {
      if (!prefix_.empty() && name.rfind(prefix_, 0) != 0) continue;
      if (e.adam_m.empty()) {
        e.adam_m = Tensor<T>(e.value.shape());
        e.adam_v = Tensor<T>(e.value.shape());
      }
      T* w = e.value.data();
      const T* g = e.grad.data();
      T* m = e.adam_m.data();
      T* v = e.adam_v.data();
      const long n = e.value.numel();
      for (long i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        w[i] -= static_cast<T>(cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::string prefix_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint archive: JSON manifest (names, shapes, dtype, user metadata)
// followed by raw little-endian tensor data in manifest order.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'I', 'M', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void save_checkpoint(const ParamStore<T>& ps, const std::string& path,
                     const nlohmann::json& metadata = {}) {
  nlohmann::json manifest;
  manifest["dtype"] = (sizeof(T) == 8) ? "f64" : "f32";
  manifest["metadata"] = metadata;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, e] : ps) {
    tensors.push_back({{"name", name}, {"shape", e.value.shape()}});
  }
  const std::string header = manifest.dump();
  std::ofstream f(path, std::ios::binary);
  IM_CHECK(f.good(), "cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t hlen = header.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header.data(), static_cast<std::streamsize>(hlen));
  for (const auto& [name, e] : ps) {
    f.write(reinterpret_cast<const char*>(e.value.data()),
            static_cast<std::streamsize>(sizeof(T) * e.value.numel()));
  }
  IM_CHECK(f.good(), "checkpoint write failed: " + path);
}

template <typename T>
nlohmann::json load_checkpoint(ParamStore<T>& ps, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  IM_CHECK(f.good(), "cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  IM_CHECK(std::equal(magic, magic + 8, kCheckpointMagic), "bad checkpoint magic: " + path);
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  const nlohmann::json manifest = nlohmann::json::parse(header);
  const std::string dtype = manifest.at("dtype");
  IM_CHECK(dtype == "f64" || dtype == "f32", "unknown checkpoint dtype " + dtype);
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name");
    const Shape shape = t.at("shape").get<Shape>();
    const long n = Tensor<T>::numel_of(shape);
    Tensor<T> value(shape);
    if (dtype == "f64") {
      std::vector<double> buf(n);
      f.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(sizeof(double) * n));
      for (long i = 0; i < n; ++i) value[i] = static_cast<T>(buf[i]);
    } else {
      std::vector<float> buf(n);
      f.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(sizeof(float) * n));
      for (long i = 0; i < n; ++i) value[i] = static_cast<T>(buf[i]);
    }
    if (ps.contains(name)) {
      ps.at(name).value = std::move(value);
    } else {
      auto& e = ps.bias(name, shape);  // creates zeroed entry, then overwrite
      e.value = std::move(value);
    }
  }
  IM_CHECK(f.good(), "checkpoint read failed: " + path);
  return manifest.at("metadata");
}

}  // namespace imagine
