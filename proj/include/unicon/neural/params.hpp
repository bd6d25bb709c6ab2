#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "unicon/binio.hpp"
#include "unicon/tensor.hpp"

namespace unicon::neural {

// Ordered collection of named parameter arrays. Insertion order is the
// serialization order; shapes never change after add().
class ParamStore {
 public:
  Tensor& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor(std::move(shape)));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor& operator[](const std::string& name) { return entries_[locate(name)].second; }
  const Tensor& operator[](const std::string& name) const { return entries_[locate(name)].second; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  // Same names and shapes, all zeros.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, t] : entries_) out.add(name, t.shape());
    return out;
  }

  bool same_layout(const ParamStore& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first != other.entries_[i].first ||
          entries_[i].second.shape() != other.entries_[i].second.shape())
        return false;
    return true;
  }

  void zero() {
    for (auto& [name, t] : entries_) t.fill(0.0);
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t locate(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter " + name);
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

// He initialization: rank-2 weights ~ N(0, 2/fan_in) with fan_in the column
// count; everything else (biases, vectors) is set to zero.
inline void he_init(ParamStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : store) {
    if (t.rank() == 2) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(t.dim(1))));
      for (double& x : t.values()) x = dist(rng);
    } else {
      t.fill(0.0);
    }
  }
}

inline constexpr char kCheckpointMagic[] = "UCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ParamStore& store) {
  binio::Writer w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    if (name.size() > 0xffff) throw ValidationError("parameter name too long: " + name);
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double x : t.values()) w.f64(x);
  }
  return w.buffer();
}

inline ParamStore decode_checkpoint(std::string bytes, const std::string& source) {
  binio::Reader r(std::move(bytes), source);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw ValidationError(source + ": bad magic");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw ValidationError(source + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = r.uint<std::uint32_t>();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.uint<std::uint16_t>();
    std::string name(r.bytes(len));
    const auto rank = r.uint<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.uint<std::uint32_t>();
    Tensor& t = store.add(name, shape);
    for (double& x : t.values()) x = r.f64();
  }
  if (!r.at_end()) throw ValidationError(source + ": trailing bytes after checkpoint");
  return store;
}

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  binio::write_file(path, encode_checkpoint(store));
}

inline ParamStore load_checkpoint(const std::string& path) {
  return decode_checkpoint(binio::read_file(path), path);
}

}  // namespace unicon::neural
