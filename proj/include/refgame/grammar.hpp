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

// Context-free grammar with an Earley recognizer.
//
// Text format (one rule group per line, '#' starts a comment):
//
//   %version world-v1
//   %start S
//   %function the of is
//   S -> DECL . | QUES ?
//   DECL -> the ATTR of ENT is VAL
//
// Symbols that appear on some left-hand side are nonterminals; every other
// symbol is a terminal. Without %start, the first rule's LHS is the start.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "refgame/common.hpp"

namespace refgame {

struct Rule {
  std::string lhs;
  std::vector<std::string> rhs;
};

class Grammar {
 public:
  Grammar() = default;

  static Grammar parse(std::string_view text);
  static Grammar load(const std::filesystem::path& path);
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  // Right-hand sides must be nonempty.
  void add_rule(std::string lhs, std::vector<std::string> rhs);
  void set_start(std::string symbol) { start_ = std::move(symbol); }
  void set_version(std::string v) { version_ = std::move(v); }
  void add_function_word(std::string w) { function_words_.insert(std::move(w)); }

  const std::string& start() const;
  const std::string& version() const { return version_; }
  const std::vector<Rule>& rules() const { return rules_; }
  bool is_nonterminal(std::string_view symbol) const;
  std::vector<std::string> terminals() const;
  const std::unordered_set<std::string>& function_words() const { return function_words_; }

  // True iff `sentence` derives from the start symbol.
  bool recognizes(std::span<const std::string> sentence) const;

  // Random derivation from the start symbol (uniform over alternatives).
  std::vector<std::string> sample(Rng& rng, std::size_t max_depth = 64) const;

 private:
  struct Compiled {
    std::unordered_map<std::string, int> symbol_ids;
    std::vector<bool> nonterminal;
    std::vector<int> lhs;
    std::vector<std::vector<int>> rhs;
    std::vector<std::vector<int>> rules_by_lhs;
    int start = -1;
  };
  const Compiled& compiled() const;
  void sample_into(const std::string& symbol, Rng& rng, std::size_t depth,
                   std::size_t max_depth, std::vector<std::string>& out) const;

  std::vector<Rule> rules_;
  std::string start_;
  std::string version_;
  std::unordered_set<std::string> function_words_;
  mutable std::shared_ptr<const Compiled> compiled_;
};

}  // namespace refgame
