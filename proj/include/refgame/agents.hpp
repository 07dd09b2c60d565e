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

// Game roles. The speaker wraps a trainable PolicyModel. Listeners are
// immutable once built: they answer questions from a summary alone and
// expose a frozen language model for surprisal.

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "refgame/corpus.hpp"
#include "refgame/lm.hpp"
#include "refgame/model.hpp"

namespace refgame {

struct Speaker {
  PolicyModel policy;
  DecodeConfig decode;
};

// "passage <sep>"
TokenSequence speaker_prompt(std::span<const TokenId> passage, const Vocabulary& vocab);

// Samples a summary of `passage` (no instruction prefix). The decode seed
// is replaced by `seed`. Throws UsageError for an empty passage.
Generation speak(const Speaker& speaker, std::span<const TokenId> passage, std::uint64_t seed);

enum class ListenerKind { kOracle, kLearned };

struct OracleRules {
  int window = 6;       // tokens on each side of the entity mention
  double noise = 0.0;   // probability of replacing the answer with a random value
  std::uint64_t noise_seed = 0;
};

class Listener {
 public:
  // `lm` supplies surprisals only.
  static Listener oracle(const World& world, PolicyModel lm, OracleRules rules = {});
  // `qa` answers questions; `lm` supplies surprisals.
  static Listener learned(const World& world, PolicyModel qa, PolicyModel lm);

  ListenerKind kind() const { return kind_; }
  const PolicyModel& lm() const { return *lm_; }
  // Null for the oracle.
  const PolicyModel* qa_model() const { return qa_.get(); }
  const OracleRules& rules() const { return rules_; }

  // Answer tokens; [unknown] when nothing can be extracted.
  TokenSequence listen(std::span<const TokenId> summary, std::span<const TokenId> question) const;

  // Unconditional surprisal under the frozen LM. Texts longer than the
  // context window are scored in consecutive window-sized chunks.
  double surprisal(std::span<const TokenId> text) const;

  // Serialized frozen state, for immutability audits.
  std::string state_bytes() const;

 private:
  Listener(ListenerKind kind, std::shared_ptr<const World> world,
           std::shared_ptr<const PolicyModel> qa, std::shared_ptr<const PolicyModel> lm,
           OracleRules rules)
      : kind_(kind), world_(std::move(world)), qa_(std::move(qa)), lm_(std::move(lm)),
        rules_(rules) {}

  TokenSequence listen_oracle(std::span<const TokenId> summary,
                              std::span<const TokenId> question) const;
  TokenSequence listen_learned(std::span<const TokenId> summary,
                               std::span<const TokenId> question) const;

  ListenerKind kind_;
  std::shared_ptr<const World> world_;
  std::shared_ptr<const PolicyModel> qa_;
  std::shared_ptr<const PolicyModel> lm_;
  OracleRules rules_;
};

inline TokenSequence listen(const Listener& l, std::span<const TokenId> summary,
                            std::span<const TokenId> question) {
  return l.listen(summary, question);
}

inline double listener_surprisal(const Listener& l, std::span<const TokenId> text) {
  return l.surprisal(text);
}

// Learned listener input: "summary <sep> question <sep>".
TokenSequence listener_prompt(std::span<const TokenId> summary, std::span<const TokenId> question,
                              const Vocabulary& vocab, std::size_t context_window);

struct ListenerConfig {
  PretrainConfig training{.steps = 10000,
                          .batch_size = 64,
                          .learning_rate = 1e-3,
                          .max_grad_norm = 1.0,
                          .held_out_fraction = 0.02,
                          .eval_interval = 500,
                          .seed = 11,
                          .warmup_steps = 300,
                          .cosine_decay = true};
  int n_train_examples = 20000;
  int n_eval_examples = 300;
  double accuracy_threshold = 0.9;
  // Shares of the training mix besides full-passage QA.
  double partial_fraction = 0.15;   // random sentence subsets that keep the asked fact
  double missing_fraction = 0.1;    // subsets without the asked fact, answered "unknown"
  double empty_fraction = 0.05;     // empty context, answered "unknown"
  double target_fraction = 0.05;    // context is the answer itself
  double contrast_fraction = 0.2;   // other entities' sentences all on the asked attribute
  double telegraphic_fraction = 0.0;  // QA on passages with stopwords removed
  // Passages losing each token with a rate drawn from [0, max_deletion];
  // answered "unknown" once the fact sentence loses its entity, attribute
  // or value.
  double deletion_fraction = 0.35;
  double max_deletion = 0.7;

  void validate() const;
};

struct ListenerTraining {
  Listener listener;
  double held_out_accuracy = 0.0;
  bool below_threshold = false;  // warning flag: accuracy_threshold not reached
  PretrainResult log;
};

// The training mix for the learned listener.
std::vector<LmExample> listener_training_examples(const World& world,
                                                  std::span<const QAExample> corpus,
                                                  const ListenerConfig& cfg,
                                                  std::size_t context_window);

// Exact-match accuracy of `listener` on full passages.
double listener_accuracy(const Listener& listener, std::span<const QAExample> examples);

// Fine-tunes a fresh QA model on `corpus` and freezes it together with the
// surprisal LM `lm`. Falling short of cfg.accuracy_threshold on `held_out`
// is reported through the result's warning flag, not an exception.
ListenerTraining train_listener(const World& world, std::span<const QAExample> corpus,
                                std::span<const QAExample> held_out, const ModelDims& dims,
                                const ListenerConfig& cfg, std::uint64_t init_seed,
                                PolicyModel lm,
                                const std::function<void(const PretrainLogRow&)>& on_step = {});

}  // namespace refgame
