#include "pddpm/nn/param_store.hpp"

#include "pddpm/error.hpp"

namespace pddpm::nn {

void ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ArgumentError("param store: duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  Tensor m(value.shape(), 0.0f);
  Tensor v(value.shape(), 0.0f);
  entries_.push_back(Entry{std::move(name), std::move(value), std::move(m), std::move(v)});
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("param store: unknown parameter '" + name + "'");
  return entries_[it->second];
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("param store: unknown parameter '" + name + "'");
  return entries_[it->second];
}

const Tensor& ParamStore::at(const std::string& name) const { return entry(name).value; }
Tensor& ParamStore::at(const std::string& name) { return entry(name).value; }

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (step_ != other.step_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || !(a.value == b.value) || !(a.first_moment == b.first_moment) ||
        !(a.second_moment == b.second_moment)) {
      return false;
    }
  }
  return true;
}

}  // namespace pddpm::nn
