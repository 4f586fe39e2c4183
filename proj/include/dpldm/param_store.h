// Copyright 2026 The dpldm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPLDM_PARAM_STORE_H_
#define DPLDM_PARAM_STORE_H_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dpldm {

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool frozen = false;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Ordered, named parameter tensors backed by one contiguous buffer. Order of
// insertion is the canonical order for flat gradient vectors.
class ParamStore {
 public:
  // Appends a zero-initialized tensor. Throws on duplicate names.
  std::span<double> Add(const std::string& name, std::vector<int> shape);

  bool Contains(std::string_view name) const;
  const ParamEntry& Entry(std::string_view name) const;
  std::span<double> Get(std::string_view name);
  std::span<const double> Get(std::string_view name) const;

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  std::size_t total_size() const { return values_.size(); }
  std::size_t unfrozen_size() const;

  void SetFrozen(std::string_view name, bool frozen);
  // Freezes or unfreezes every entry whose name starts with `prefix`.
  int SetFrozenPrefix(std::string_view prefix, bool frozen);

  // Copies unfrozen slots of a full-size vector, in entry order.
  std::vector<double> GatherUnfrozen(std::span<const double> full) const;
  // Adds `scale * compact` to the unfrozen slots of a full-size vector.
  void ScatterAddUnfrozen(std::span<const double> compact, double scale,
                          std::span<double> full) const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::size_t IndexOf(std::string_view name) const;

  std::vector<ParamEntry> entries_;
  std::vector<double> values_;
};

}  // namespace dpldm

#endif  // DPLDM_PARAM_STORE_H_
