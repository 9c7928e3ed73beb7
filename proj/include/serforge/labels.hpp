/* Copyright 2026 The SER-Forge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "serforge/error.hpp"

namespace serforge {

// Ordered, duplicate-free class names. The position of a name is its class
// index and the row of the classification head that scores it.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) fail(ErrorKind::kLabel, "label set is empty");
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) fail(ErrorKind::kLabel, "empty label name");
      if (!seen.insert(n).second) fail(ErrorKind::kLabel, "duplicate label '" + n + "'");
    }
  }

  // Five emotions plus neutral, alphabetical.
  static LabelSet shemo6() { return LabelSet({"anger", "fear", "happiness", "neutral", "sadness", "surprise"}); }
  // The four-class source-domain taxonomy.
  static LabelSet src4() { return LabelSet({"anger", "happiness", "neutral", "sadness"}); }

  // "SHEMO6", "SRC4", or a comma-separated custom list.
  static LabelSet parse(const std::string& spec) {
    if (spec == "SHEMO6" || spec == "shemo6") return shemo6();
    if (spec == "SRC4" || spec == "src4") return src4();
    std::vector<std::string> names;
    std::string cur;
    for (char c : spec) {
      if (c == ',') {
        names.push_back(cur);
        cur.clear();
      } else if (c != ' ') {
        cur += c;
      }
    }
    names.push_back(cur);
    return LabelSet(std::move(names));
  }

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  std::size_t index_of(const std::string& name) const {
    auto idx = find(name);
    if (!idx) fail(ErrorKind::kLabel, "label '" + name + "' is not in {" + joined() + "}");
    return *idx;
  }

  std::string joined() const {
    std::string s;
    for (std::size_t i = 0; i < names_.size(); ++i) s += (i ? "," : "") + names_[i];
    return s;
  }

  bool operator==(const LabelSet&) const = default;

 private:
  std::vector<std::string> names_;
};

using LabelAliases = std::map<std::string, std::string>;

// Alternate spellings found in corpus metadata, mapped to canonical names.
inline LabelAliases default_label_aliases() { return {{"joy", "happiness"}, {"happy", "happiness"}, {"angry", "anger"}, {"sad", "sadness"}}; }

}  // namespace serforge
