#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "pddpm/tensor.hpp"

namespace pddpm::nn {

// Named parameter tensors plus Adam moments, in insertion order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor first_moment;
    Tensor second_moment;
  };

  // Throws ArgumentError on a duplicate name. Moments start at zero.
  void add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

using Gradients = std::map<std::string, Tensor>;

}  // namespace pddpm::nn
