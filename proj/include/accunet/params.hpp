#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "accunet/tensor.hpp"

namespace accunet {

// Named, ordered collection of parameter tensors. Learnable entries are the
// optimizer's targets; non-learnable entries (BN running stats) ride along in
// checkpoints but are excluded from parameter counts.
template <typename T>
class ParamStoreT {
 public:
  struct Entry {
    std::string name;
    TensorT<T> tensor;
    bool learnable;
  };

  TensorT<T>& add(const std::string& name, TensorT<T> tensor, bool learnable = true) {
    if (index_.count(name))
      throw ValueError("ParamStore: duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(tensor), learnable});
    return entries_.back().tensor;
  }

  const TensorT<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
  }

  TensorT<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  int64_t learnable_count() const {
    int64_t total = 0;
    for (const auto& e : entries_)
      if (e.learnable) total += e.tensor.numel();
    return total;
  }

  size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// Kaiming-uniform fan-in initialization with leaky-relu gain.
template <typename T>
TensorT<T> kaiming_uniform(Shape s, int64_t fan_in, double slope, Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  const double bound = gain * std::sqrt(3.0 / double(fan_in));
  return TensorT<T>::uniform(s, rng, T(-bound), T(bound));
}

}  // namespace accunet
