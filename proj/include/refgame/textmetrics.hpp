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

// Scalar text measurements over token sequences: the game's reward
// (ROUGE-L F1) and the drift diagnostics logged during training.
//
// The sequence algorithms are templates so they work on token ids as well
// as on plain strings.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "refgame/common.hpp"
#include "refgame/vocab.hpp"

namespace refgame::textmetrics {

template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS-based F1. Zero when either side is empty or nothing matches.
template <class T>
double rouge_l_f1(std::span<const T> hypothesis, std::span<const T> reference) {
  const std::size_t l = lcs_length(hypothesis, reference);
  if (l == 0) return 0.0;
  const double p = static_cast<double>(l) / static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(l) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

template <class T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Token-level Levenshtein distance divided by the longer length.
template <class T>
double edit_distance_norm(std::span<const T> a, std::span<const T> b) {
  const std::size_t n = std::max(a.size(), b.size());
  if (n == 0) return 0.0;
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(n);
}

// Corpus-style 4-gram BLEU with brevity penalty for a single reference.
// Unigram precision is unsmoothed; orders 2..4 use add-one smoothing so a
// short hypothesis still gets a defined score.
template <class T>
double bleu(std::span<const T> hypothesis, std::span<const T> reference) {
  constexpr std::size_t kMaxOrder = 4;
  if (hypothesis.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    std::map<std::vector<T>, std::size_t> ref_counts;
    if (reference.size() >= n) {
      for (std::size_t i = 0; i + n <= reference.size(); ++i) {
        ++ref_counts[std::vector<T>(reference.begin() + i, reference.begin() + i + n)];
      }
    }
    std::size_t total = 0, matched = 0;
    if (hypothesis.size() >= n) {
      std::map<std::vector<T>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= hypothesis.size(); ++i) {
        ++hyp_counts[std::vector<T>(hypothesis.begin() + i, hypothesis.begin() + i + n)];
      }
      for (const auto& [gram, count] : hyp_counts) {
        total += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched += std::min(count, it->second);
      }
    }
    double precision;
    if (n == 1) {
      if (matched == 0) return 0.0;
      precision = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      precision = static_cast<double>(matched + 1) / static_cast<double>(total + 1);
    }
    log_sum += std::log(precision);
  }
  const double c = static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(brevity * std::exp(log_sum / kMaxOrder), 0.0, 1.0);
}

// Vector conveniences (template deduction does not see through span).
template <class T>
double rouge_l_f1(const std::vector<T>& h, const std::vector<T>& r) {
  return rouge_l_f1(std::span<const T>(h), std::span<const T>(r));
}
template <class T>
double bleu(const std::vector<T>& h, const std::vector<T>& r) {
  return bleu(std::span<const T>(h), std::span<const T>(r));
}
template <class T>
double edit_distance_norm(const std::vector<T>& a, const std::vector<T>& b) {
  return edit_distance_norm(std::span<const T>(a), std::span<const T>(b));
}
template <class T>
std::size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  return levenshtein(std::span<const T>(a), std::span<const T>(b));
}

// Function-word inventory. File format: one token per line, '#' comments.
class StopwordList {
 public:
  StopwordList() = default;
  explicit StopwordList(std::vector<std::string> words);
  static StopwordList load(const std::filesystem::path& path);

  // Resolves the words against `vocab`; words outside the vocabulary are
  // kept in words() but cannot match any id.
  void bind(const Vocabulary& vocab);

  bool contains(std::string_view word) const { return words_set_.count(std::string(word)) > 0; }
  bool contains(TokenId id) const { return ids_.count(id) > 0; }
  const std::vector<std::string>& words() const { return words_; }
  bool empty() const { return words_.empty(); }

 private:
  std::vector<std::string> words_;
  std::unordered_set<std::string> words_set_;
  std::unordered_set<TokenId> ids_;
};

double function_word_fraction(std::span<const TokenId> text, const StopwordList& stopwords);
double function_word_fraction(std::span<const std::string> text, const StopwordList& stopwords);

bool is_terminal_punctuation(std::string_view token);
bool is_punctuation(std::string_view token);

struct SentenceWordStats {
  double mean_sentence_length = 0.0;  // tokens per sentence, terminators excluded
  double mean_word_length = 0.0;      // characters per non-punctuation token
};

SentenceWordStats sentence_and_word_stats(std::span<const std::string> text);
SentenceWordStats sentence_and_word_stats(std::span<const TokenId> text, const Vocabulary& vocab);

struct MetricReport {
  double rouge_l_f1 = 0.0;
  double bleu = 0.0;
  double edit_distance_norm = 0.0;
  double function_word_fraction = 0.0;
  double mean_sentence_length_tokens = 0.0;
  double mean_word_length_chars = 0.0;
  std::size_t token_count = 0;
};

// Measures `text` against `reference` (for episode records: the summary
// against its source passage).
MetricReport measure(std::span<const TokenId> text, std::span<const TokenId> reference,
                     const Vocabulary& vocab, const StopwordList& stopwords);

}  // namespace refgame::textmetrics
