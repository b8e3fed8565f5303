#pragma once

#include <map>
#include <string>
#include <vector>

#include "aem/tape.hpp"
#include "aem/types.hpp"

namespace aem {

// Named tensors in insertion order. Frozen entries never receive updates and
// are bound as constants on tapes.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    bool frozen = false;
  };

  void add(const std::string& name, Matrix value, bool frozen = false) {
    if (index_.count(name)) fail(ErrKind::config, "param already registered: " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back({name, std::move(value), frozen});
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Matrix& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrKind::config, "unknown param: " + name);
    return entries_[it->second].value;
  }
  const Matrix& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrKind::config, "unknown param: " + name);
    return entries_[it->second].value;
  }

  bool frozen(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrKind::config, "unknown param: " + name);
    return entries_[it->second].frozen;
  }

  void set_frozen(const std::string& name, bool frozen) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrKind::config, "unknown param: " + name);
    entries_[it->second].frozen = frozen;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
};

using ParamMap = std::map<std::string, num::Value>;

// Learnable entries become leaves, frozen ones constants.
inline ParamMap bind(num::Tape& tape, const ParamStore& params) {
  ParamMap out;
  for (const auto& e : params.entries())
    out[e.name] = e.frozen ? tape.constant(e.value) : tape.leaf(e.value, e.name);
  return out;
}

// Everything constant: inference-only forward passes.
inline ParamMap bind_const(num::Tape& tape, const ParamStore& params) {
  ParamMap out;
  for (const auto& e : params.entries()) out[e.name] = tape.constant(e.value);
  return out;
}

}  // namespace aem
