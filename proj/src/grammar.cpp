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

#include "refgame/grammar.hpp"

#include <fstream>
#include <memory>
#include <sstream>

#include "refgame/vocab.hpp"

namespace refgame {

Grammar Grammar::parse(std::string_view text) {
  Grammar g;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> parts;
    for (std::string p; ls >> p;) parts.push_back(p);
    if (parts.empty()) continue;
    const auto where = "grammar line " + std::to_string(line_no) + ": ";
    if (parts[0] == "%version") {
      if (parts.size() != 2) throw Error(where + "%version takes one argument");
      g.version_ = parts[1];
      continue;
    }
    if (parts[0] == "%start") {
      if (parts.size() != 2) throw Error(where + "%start takes one argument");
      g.start_ = parts[1];
      continue;
    }
    if (parts[0] == "%function") {
      for (std::size_t i = 1; i < parts.size(); ++i) g.function_words_.insert(parts[i]);
      continue;
    }
    if (parts.size() < 3 || parts[1] != "->") throw Error(where + "expected 'LHS -> RHS'");
    std::vector<std::string> rhs;
    for (std::size_t i = 2; i <= parts.size(); ++i) {
      if (i == parts.size() || parts[i] == "|") {
        if (rhs.empty()) throw Error(where + "empty right-hand side");
        g.add_rule(parts[0], std::move(rhs));
        rhs.clear();
      } else {
        rhs.push_back(parts[i]);
      }
    }
  }
  if (g.rules_.empty()) throw Error("grammar has no rules");
  return g;
}

Grammar Grammar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open grammar file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Grammar::to_text() const {
  std::ostringstream out;
  if (!version_.empty()) out << "%version " << version_ << "\n";
  out << "%start " << start() << "\n";
  if (!function_words_.empty()) {
    std::vector<std::string> fw(function_words_.begin(), function_words_.end());
    std::sort(fw.begin(), fw.end());
    out << "%function";
    for (const auto& w : fw) out << ' ' << w;
    out << "\n";
  }
  // Group consecutive alternatives that share a LHS.
  for (std::size_t i = 0; i < rules_.size();) {
    out << rules_[i].lhs << " ->";
    std::size_t j = i;
    for (; j < rules_.size() && rules_[j].lhs == rules_[i].lhs; ++j) {
      if (j != i) out << " |";
      for (const auto& s : rules_[j].rhs) out << ' ' << s;
    }
    out << "\n";
    i = j;
  }
  return out.str();
}

void Grammar::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write grammar file: " + path.string());
  out << to_text();
}

void Grammar::add_rule(std::string lhs, std::vector<std::string> rhs) {
  if (rhs.empty()) throw Error("rule for '" + lhs + "' has an empty right-hand side");
  rules_.push_back({std::move(lhs), std::move(rhs)});
  compiled_.reset();
}

const std::string& Grammar::start() const {
  if (!start_.empty()) return start_;
  if (rules_.empty()) throw Error("grammar has no rules");
  return rules_.front().lhs;
}

bool Grammar::is_nonterminal(std::string_view symbol) const {
  for (const auto& r : rules_) {
    if (r.lhs == symbol) return true;
  }
  return false;
}

std::vector<std::string> Grammar::terminals() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : rules_) {
    for (const auto& s : r.rhs) {
      if (!is_nonterminal(s) && seen.insert(s).second) out.push_back(s);
    }
  }
  return out;
}

const Grammar::Compiled& Grammar::compiled() const {
  if (compiled_) return *compiled_;
  auto c = std::make_shared<Compiled>();
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = c->symbol_ids.emplace(s, static_cast<int>(c->nonterminal.size()));
    if (inserted) c->nonterminal.push_back(false);
    return it->second;
  };
  for (const auto& r : rules_) c->nonterminal[static_cast<std::size_t>(intern(r.lhs))] = true;
  for (const auto& r : rules_) {
    c->lhs.push_back(intern(r.lhs));
    std::vector<int> rhs;
    for (const auto& s : r.rhs) rhs.push_back(intern(s));
    c->rhs.push_back(std::move(rhs));
  }
  c->rules_by_lhs.resize(c->nonterminal.size());
  for (std::size_t i = 0; i < c->lhs.size(); ++i) {
    c->rules_by_lhs[static_cast<std::size_t>(c->lhs[i])].push_back(static_cast<int>(i));
  }
  auto it = c->symbol_ids.find(start());
  if (it == c->symbol_ids.end() || !c->nonterminal[static_cast<std::size_t>(it->second)]) {
    throw Error("start symbol '" + start() + "' has no rules");
  }
  c->start = it->second;
  compiled_ = std::move(c);
  return *compiled_;
}

namespace {

struct Item {
  int rule;
  int dot;
  int origin;
};

std::uint64_t item_key(const Item& it) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(it.rule)) << 40) ^
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(it.dot)) << 24) ^
         static_cast<std::uint64_t>(static_cast<std::uint32_t>(it.origin));
}

}  // namespace

bool Grammar::recognizes(std::span<const std::string> sentence) const {
  if (sentence.empty()) return false;
  const Compiled& g = compiled();
  std::vector<int> input;
  input.reserve(sentence.size());
  for (const auto& w : sentence) {
    auto it = g.symbol_ids.find(w);
    if (it == g.symbol_ids.end() || g.nonterminal[static_cast<std::size_t>(it->second)]) {
      return false;
    }
    input.push_back(it->second);
  }
  const std::size_t n = input.size();
  std::vector<std::vector<Item>> sets(n + 1);
  std::vector<std::unordered_set<std::uint64_t>> seen(n + 1);
  auto add = [&](std::size_t k, Item item) {
    if (seen[k].insert(item_key(item)).second) sets[k].push_back(item);
  };
  for (int r : g.rules_by_lhs[static_cast<std::size_t>(g.start)]) add(0, {r, 0, 0});

  for (std::size_t k = 0; k <= n; ++k) {
    for (std::size_t idx = 0; idx < sets[k].size(); ++idx) {
      const Item item = sets[k][idx];
      const auto& rhs = g.rhs[static_cast<std::size_t>(item.rule)];
      if (static_cast<std::size_t>(item.dot) < rhs.size()) {
        const int sym = rhs[static_cast<std::size_t>(item.dot)];
        if (g.nonterminal[static_cast<std::size_t>(sym)]) {
          for (int r : g.rules_by_lhs[static_cast<std::size_t>(sym)]) {
            add(k, {r, 0, static_cast<int>(k)});
          }
        } else if (k < n && input[k] == sym) {
          add(k + 1, {item.rule, item.dot + 1, item.origin});
        }
      } else {
        const int lhs = g.lhs[static_cast<std::size_t>(item.rule)];
        auto& origin_set = sets[static_cast<std::size_t>(item.origin)];
        // No empty rules, so origin < k and origin_set is not being extended.
        for (std::size_t j = 0; j < origin_set.size(); ++j) {
          const Item prev = origin_set[j];
          const auto& prhs = g.rhs[static_cast<std::size_t>(prev.rule)];
          if (static_cast<std::size_t>(prev.dot) < prhs.size() &&
              prhs[static_cast<std::size_t>(prev.dot)] == lhs) {
            add(k, {prev.rule, prev.dot + 1, prev.origin});
          }
        }
      }
    }
  }
  for (const Item& item : sets[n]) {
    if (item.origin == 0 && g.lhs[static_cast<std::size_t>(item.rule)] == g.start &&
        static_cast<std::size_t>(item.dot) == g.rhs[static_cast<std::size_t>(item.rule)].size()) {
      return true;
    }
  }
  return false;
}

std::vector<std::string> Grammar::sample(Rng& rng, std::size_t max_depth) const {
  std::vector<std::string> out;
  sample_into(start(), rng, 0, max_depth, out);
  return out;
}

void Grammar::sample_into(const std::string& symbol, Rng& rng, std::size_t depth,
                          std::size_t max_depth, std::vector<std::string>& out) const {
  if (depth > max_depth) throw Error("grammar sampling exceeded max depth");
  std::vector<const Rule*> options;
  for (const auto& r : rules_) {
    if (r.lhs == symbol) options.push_back(&r);
  }
  if (options.empty()) {
    out.push_back(symbol);
    return;
  }
  const Rule* pick = options[rng.below(options.size())];
  for (const auto& s : pick->rhs) sample_into(s, rng, depth + 1, max_depth, out);
}

}  // namespace refgame
