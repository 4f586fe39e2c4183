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

#include "dpldm/param_store.h"

#include "dpldm/error.h"
#include "dpldm/tensor.h"

namespace dpldm {

std::span<double> ParamStore::Add(const std::string& name,
                                  std::vector<int> shape) {
  Require(!Contains(name), ErrorCode::kInvalidArgument,
          "duplicate parameter name " + name);
  ParamEntry e;
  e.name = name;
  e.size = ShapeSize(shape);
  e.shape = std::move(shape);
  e.offset = values_.size();
  values_.resize(values_.size() + e.size, 0.0);
  entries_.push_back(std::move(e));
  return Get(name);
}

std::size_t ParamStore::IndexOf(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  Fail(ErrorCode::kInvalidArgument,
       "unknown parameter " + std::string(name));
}

bool ParamStore::Contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const ParamEntry& ParamStore::Entry(std::string_view name) const {
  return entries_[IndexOf(name)];
}

std::span<double> ParamStore::Get(std::string_view name) {
  const ParamEntry& e = entries_[IndexOf(name)];
  return std::span<double>(values_).subspan(e.offset, e.size);
}

std::span<const double> ParamStore::Get(std::string_view name) const {
  const ParamEntry& e = entries_[IndexOf(name)];
  return std::span<const double>(values_).subspan(e.offset, e.size);
}

std::size_t ParamStore::unfrozen_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (!e.frozen) n += e.size;
  }
  return n;
}

void ParamStore::SetFrozen(std::string_view name, bool frozen) {
  entries_[IndexOf(name)].frozen = frozen;
}

int ParamStore::SetFrozenPrefix(std::string_view prefix, bool frozen) {
  int n = 0;
  for (auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) == 0) {
      e.frozen = frozen;
      ++n;
    }
  }
  return n;
}

std::vector<double> ParamStore::GatherUnfrozen(
    std::span<const double> full) const {
  Require(full.size() == values_.size(), ErrorCode::kShapeMismatch,
          "gradient length does not match parameter store");
  std::vector<double> out;
  out.reserve(unfrozen_size());
  for (const auto& e : entries_) {
    if (e.frozen) continue;
    out.insert(out.end(), full.begin() + static_cast<std::ptrdiff_t>(e.offset),
               full.begin() + static_cast<std::ptrdiff_t>(e.offset + e.size));
  }
  return out;
}

void ParamStore::ScatterAddUnfrozen(std::span<const double> compact,
                                    double scale,
                                    std::span<double> full) const {
  Require(compact.size() == unfrozen_size() && full.size() == values_.size(),
          ErrorCode::kShapeMismatch, "scatter length mismatch");
  std::size_t k = 0;
  for (const auto& e : entries_) {
    if (e.frozen) continue;
    for (std::size_t i = 0; i < e.size; ++i) {
      full[e.offset + i] += scale * compact[k++];
    }
  }
}

}  // namespace dpldm
