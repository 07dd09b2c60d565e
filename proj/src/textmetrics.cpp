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

#include "refgame/textmetrics.hpp"

#include <fstream>

namespace refgame::textmetrics {

StopwordList::StopwordList(std::vector<std::string> words) : words_(std::move(words)) {
  for (const auto& w : words_) words_set_.insert(w);
}

StopwordList StopwordList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stopword list: " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto parts = split_words(line);
    if (parts.empty() || parts.front().starts_with('#')) continue;
    words.push_back(parts.front());
  }
  if (words.empty()) throw Error("stopword list is empty: " + path.string());
  return StopwordList(std::move(words));
}

void StopwordList::bind(const Vocabulary& vocab) {
  ids_.clear();
  for (const auto& w : words_) {
    if (auto id = vocab.find(w)) ids_.insert(*id);
  }
}

double function_word_fraction(std::span<const TokenId> text, const StopwordList& stopwords) {
  if (text.empty()) return 0.0;
  std::size_t n = 0;
  for (TokenId t : text) n += stopwords.contains(t) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(text.size());
}

double function_word_fraction(std::span<const std::string> text, const StopwordList& stopwords) {
  if (text.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& t : text) n += stopwords.contains(t) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(text.size());
}

bool is_terminal_punctuation(std::string_view token) {
  return token == "." || token == "?" || token == "!";
}

bool is_punctuation(std::string_view token) {
  return is_terminal_punctuation(token) || token == "," || token == ";" || token == ":";
}

SentenceWordStats sentence_and_word_stats(std::span<const std::string> text) {
  SentenceWordStats out;
  std::size_t sentences = 0, sentence_tokens = 0, current = 0;
  std::size_t words = 0, chars = 0;
  for (const auto& tok : text) {
    if (is_terminal_punctuation(tok)) {
      ++sentences;
      sentence_tokens += current;
      current = 0;
      continue;
    }
    ++current;
    if (!is_punctuation(tok)) {
      ++words;
      chars += tok.size();
    }
  }
  if (current > 0) {
    ++sentences;
    sentence_tokens += current;
  }
  if (sentences > 0) {
    out.mean_sentence_length = static_cast<double>(sentence_tokens) / static_cast<double>(sentences);
  }
  if (words > 0) out.mean_word_length = static_cast<double>(chars) / static_cast<double>(words);
  return out;
}

SentenceWordStats sentence_and_word_stats(std::span<const TokenId> text, const Vocabulary& vocab) {
  std::vector<std::string> words;
  words.reserve(text.size());
  for (TokenId t : text) words.push_back(vocab.token(t));
  return sentence_and_word_stats(std::span<const std::string>(words));
}

MetricReport measure(std::span<const TokenId> text, std::span<const TokenId> reference,
                     const Vocabulary& vocab, const StopwordList& stopwords) {
  MetricReport r;
  r.rouge_l_f1 = rouge_l_f1(text, reference);
  r.bleu = bleu(text, reference);
  r.edit_distance_norm = edit_distance_norm(text, reference);
  r.function_word_fraction = function_word_fraction(text, stopwords);
  const auto stats = sentence_and_word_stats(text, vocab);
  r.mean_sentence_length_tokens = stats.mean_sentence_length;
  r.mean_word_length_chars = stats.mean_word_length;
  r.token_count = text.size();
  return r;
}

}  // namespace refgame::textmetrics
