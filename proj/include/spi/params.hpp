#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "spi/tensor.hpp"

namespace spi {

// Named trainable (and persistent non-trainable) tensors. Insertion order is
// preserved and defines serialization order. References returned by at() stay
// valid across later insertions.
template <class T>
class ParameterSetT {
 public:
  TensorT<T>& add(const std::string& name, TensorT<T> t) {
    auto [it, fresh] = map_.emplace(name, std::move(t));
    if (!fresh) throw std::invalid_argument("parameter exists: " + name);
    order_.push_back(name);
    return it->second;
  }

  TensorT<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("no parameter: " + name);
    return it->second;
  }

  const TensorT<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("no parameter: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return map_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, TensorT<T>> map_;
};

using ParameterSet = ParameterSetT<float>;

// "TSTW" container: magic, version u32 LE, entry count u32 LE, then per entry
// name (u16 length + UTF-8), rank u8, extents u32 LE, raw f32 LE data.
// Round trips are bit-exact.
void save_tstw(const ParameterSet& params, const std::string& path);
ParameterSet load_tstw(const std::string& path);

}  // namespace spi
