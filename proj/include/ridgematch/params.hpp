#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ridgematch/error.hpp"
#include "ridgematch/rng.hpp"
#include "ridgematch/tensor.hpp"

namespace ridgematch {

// Named parameter matrices in insertion order. The order is the checkpoint
// order, so it must be deterministic.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, Matrix<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Matrix<T>& get(const std::string& name) const { return entries_[lookup(name)].second; }
  Matrix<T>& get(const std::string& name) { return entries_[lookup(name)].second; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : entries_) n += m.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, m] : entries_) out.add(name, m.template cast<U>());
    return out;
  }

  // Appends every entry of `other`; names must not collide.
  void merge(const ParamStore& other) {
    for (const auto& [name, m] : other) add(name, m);
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<std::pair<std::string, Matrix<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Per-parameter gradients, keyed like the ParamStore they belong to.
template <typename T>
using GradRecord = ParamStore<T>;

namespace init {

// Zero-mean normal weights scaled by 1/√fan_in.
template <typename T>
Matrix<T> fan_in_normal(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Matrix<T> m(rows, cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : m.data()) v = static_cast<T>(rng.normal() * s);
  return m;
}

template <typename T>
Matrix<T> normal(std::size_t rows, std::size_t cols, double stddev, CounterRng& rng) {
  Matrix<T> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<T>(rng.normal() * stddev);
  return m;
}

}  // namespace init
}  // namespace ridgematch
