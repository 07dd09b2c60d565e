// Copyright 2026 The refgame Authors
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

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "refgame/common.hpp"

namespace refgame {

// Fixed bidirectional token <-> id map. Text is tokenized by lowercasing
// and splitting on whitespace.
class Vocabulary {
 public:
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kSep = "<sep>";
  static constexpr std::string_view kUnknown = "unknown";

  Vocabulary() = default;
  // Adds the special tokens first, then `words` in order (duplicates skipped).
  explicit Vocabulary(std::span<const std::string> words);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view word) const;
  TokenId id(std::string_view word) const;  // throws on unknown words
  bool contains(std::string_view word) const { return find(word).has_value(); }

  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId sep() const { return sep_; }
  TokenId unknown() const { return unknown_; }

  TokenSequence encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  TokenId add(std::string_view word);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId bos_ = -1, eos_ = -1, sep_ = -1, unknown_ = -1;
};

// Lowercase + whitespace split.
std::vector<std::string> split_words(std::string_view text);

}  // namespace refgame
