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

// A small decoder-only transformer over a fixed vocabulary with a scalar
// value head. All parameters live in one contiguous vector so optimizers,
// checkpoints and finite-difference checks can treat them uniformly.
//
// Architecture: token + learned absolute position embeddings, n_layers of
// pre-RMSNorm blocks (multi-head causal self-attention with rotary
// query / key positions, GELU MLP), a final
// RMSNorm, an output projection to vocabulary logits and a linear value
// head. The output projection starts at zero so the initial next-token
// distribution is exactly uniform. The value head reads the final hidden
// state with gradients stopped, so value regression never moves the trunk.

#include <cstdint>
#include <span>
#include <vector>

#include "refgame/common.hpp"
#include "refgame/vocab.hpp"

namespace refgame {

struct ModelDims {
  int context_window = 128;  // tokens after the implicit <bos>
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 64;

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ParamLayout {
  struct Layer {
    std::size_t ln1, wq, wk, wv, wo, ln2, w1, b1, w2, b2;
  };
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<Layer> layers;
  std::size_t ln_f = 0, w_out = 0, b_out = 0, value_w = 0, value_b = 0;
  std::size_t total = 0;
};

class PolicyModel {
 public:
  PolicyModel(Vocabulary vocab, ModelDims dims, std::uint64_t init_seed);

  const Vocabulary& vocab() const { return vocab_; }
  const ModelDims& dims() const { return dims_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  const ParamLayout& layout() const { return layout_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  // Index range [begin, end) of the value head parameters.
  std::size_t value_head_begin() const { return layout_.value_w; }
  std::size_t value_head_end() const { return layout_.value_b + 1; }

  friend bool operator==(const PolicyModel& a, const PolicyModel& b) {
    return a.vocab_ == b.vocab_ && a.dims_ == b.dims_ && a.params_ == b.params_;
  }

 private:
  friend PolicyModel make_model_from_params(Vocabulary, ModelDims, std::vector<double>);
  PolicyModel(Vocabulary vocab, ModelDims dims);

  Vocabulary vocab_;
  ModelDims dims_;
  ParamLayout layout_;
  std::vector<double> params_;
};

ParamLayout compute_layout(std::size_t vocab_size, const ModelDims& dims);

// Rebuilds a model from stored parameters (checkpoint loading).
PolicyModel make_model_from_params(Vocabulary vocab, ModelDims dims, std::vector<double> params);

// Activations for one token sequence. Position 0 always holds <bos>;
// appended tokens occupy positions 1, 2, ... The logits at position t
// score the token at position t + 1. Activations are retained so that
// backward() can run after a teacher-forced pass, and so that incremental
// decoding reuses earlier keys and values.
class ForwardPass {
 public:
  explicit ForwardPass(const PolicyModel& model);

  // Throws Error when the sequence would exceed the context window.
  void append(std::span<const TokenId> tokens);
  void append(TokenId token) { append(std::span<const TokenId>(&token, 1)); }
  // Drops positions >= n (n >= 1).
  void truncate(std::size_t n);

  std::size_t length() const { return tokens_.size(); }
  std::span<const TokenId> tokens() const { return tokens_; }
  std::span<const double> logits(std::size_t pos) const;
  double value(std::size_t pos) const { return values_.at(pos); }
  const PolicyModel& model() const { return *model_; }

  // Accumulates parameter gradients into `grad` (size param_count) given
  // dL/dlogits (length() x vocab, row-major) and dL/dvalue (length()).
  // Rows of `dlogits` that are entirely zero are skipped.
  void backward(std::span<const double> dlogits, std::span<const double> dvalue,
                std::span<double> grad) const;

 private:
  void compute_position(std::size_t t);

  const PolicyModel* model_;
  std::size_t d_, f_, h_, dh_, v_;
  std::vector<TokenId> tokens_;
  struct LayerActs {
    std::vector<double> x_in, inv1, n1, q, k, v, probs, ctx, x_mid, inv2, n2, pre, act;
  };
  std::vector<LayerActs> layers_;
  std::vector<double> x_final_, inv_f_, f_out_, logits_, values_;
  std::vector<double> rope_cos_, rope_sin_;  // [position][head_dim / 2]
};

}  // namespace refgame
