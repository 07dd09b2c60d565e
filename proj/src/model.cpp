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

#include "refgame/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "refgame/kernels.hpp"

namespace refgame {
namespace {

constexpr double kNormEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

// y = g * x / rms(x); returns 1 / rms(x).
double rms_forward(const double* x, const double* g, double* y, std::size_t n) {
  const double ms = kernels::active().dot(x, x, n) / static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(ms + kNormEps);
  for (std::size_t i = 0; i < n; ++i) y[i] = g[i] * x[i] * inv;
  return inv;
}

// Accumulates dx and dg for y = g * x * inv.
void rms_backward(const double* dy, const double* x, double inv, const double* g, double* dx,
                  double* dg, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dg[i] += dy[i] * x[i] * inv;
    s += dy[i] * g[i] * x[i];
  }
  const double coef = inv * inv * inv * s / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * g[i] * inv - coef * x[i];
}

// Rotates each (2i, 2i+1) pair of every head by angle pos * freq_i, using
// the precomputed cos / sin rows for `pos`. sign = -1 applies the inverse.
void rotate(double* x, const double* cos_row, const double* sin_row, std::size_t n_heads,
            std::size_t head_dim, double sign) {
  for (std::size_t hd = 0; hd < n_heads; ++hd) {
    double* xh = x + hd * head_dim;
    for (std::size_t i = 0; i < head_dim / 2; ++i) {
      const double c = cos_row[i], sn = sign * sin_row[i];
      const double a = xh[2 * i], b = xh[2 * i + 1];
      xh[2 * i] = a * c - b * sn;
      xh[2 * i + 1] = a * sn + b * c;
    }
  }
}

}  // namespace

void ModelDims::validate() const {
  if (context_window < 2) throw UsageError("ModelDims.context_window must be >= 2");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
    throw UsageError("ModelDims: all sizes must be positive");
  }
  if (d_model % n_heads != 0) throw UsageError("ModelDims.d_model must be divisible by n_heads");
  if ((d_model / n_heads) % 2 != 0) throw UsageError("ModelDims: head size must be even");
}

ParamLayout compute_layout(std::size_t vocab_size, const ModelDims& dims) {
  const auto d = static_cast<std::size_t>(dims.d_model);
  const auto f = static_cast<std::size_t>(dims.d_ff);
  const auto positions = static_cast<std::size_t>(dims.context_window) + 1;
  ParamLayout l;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  l.tok_emb = take(vocab_size * d);
  l.pos_emb = take(positions * d);
  for (int i = 0; i < dims.n_layers; ++i) {
    ParamLayout::Layer layer{};
    layer.ln1 = take(d);
    layer.wq = take(d * d);
    layer.wk = take(d * d);
    layer.wv = take(d * d);
    layer.wo = take(d * d);
    layer.ln2 = take(d);
    layer.w1 = take(f * d);
    layer.b1 = take(f);
    layer.w2 = take(d * f);
    layer.b2 = take(d);
    l.layers.push_back(layer);
  }
  l.ln_f = take(d);
  l.w_out = take(vocab_size * d);
  l.b_out = take(vocab_size);
  l.value_w = take(d);
  l.value_b = take(1);
  l.total = off;
  return l;
}

PolicyModel::PolicyModel(Vocabulary vocab, ModelDims dims)
    : vocab_(std::move(vocab)), dims_(dims) {
  dims_.validate();
  if (vocab_.size() < 2) throw UsageError("PolicyModel: vocabulary too small");
  layout_ = compute_layout(vocab_.size(), dims_);
  params_.assign(layout_.total, 0.0);
}

PolicyModel::PolicyModel(Vocabulary vocab, ModelDims dims, std::uint64_t init_seed)
    : PolicyModel(std::move(vocab), dims) {
  Rng rng(init_seed);
  const auto d = static_cast<std::size_t>(dims_.d_model);
  const auto f = static_cast<std::size_t>(dims_.d_ff);
  auto fill_normal = [&](std::size_t at, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i) params_[at + i] = stddev * rng.normal();
  };
  auto fill_const = [&](std::size_t at, std::size_t n, double v) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(at), n, v);
  };
  const auto positions = static_cast<std::size_t>(dims_.context_window) + 1;
  fill_normal(layout_.tok_emb, vocab_.size() * d, 0.1);
  fill_normal(layout_.pos_emb, positions * d, 0.1);
  const double proj_scale = 1.0 / std::sqrt(2.0 * dims_.n_layers);
  for (const auto& layer : layout_.layers) {
    fill_const(layer.ln1, d, 1.0);
    fill_normal(layer.wq, d * d, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(layer.wk, d * d, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(layer.wv, d * d, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(layer.wo, d * d, proj_scale / std::sqrt(static_cast<double>(d)));
    fill_const(layer.ln2, d, 1.0);
    fill_normal(layer.w1, f * d, 1.0 / std::sqrt(static_cast<double>(d)));
    fill_normal(layer.w2, d * f, proj_scale / std::sqrt(static_cast<double>(f)));
  }
  fill_const(layout_.ln_f, d, 1.0);
  // w_out, b_out and the value head stay zero.
}

PolicyModel make_model_from_params(Vocabulary vocab, ModelDims dims, std::vector<double> params) {
  PolicyModel m(std::move(vocab), dims);
  if (params.size() != m.params_.size()) {
    throw Error("parameter count mismatch: expected " + std::to_string(m.params_.size()) +
                ", got " + std::to_string(params.size()));
  }
  m.params_ = std::move(params);
  return m;
}

ForwardPass::ForwardPass(const PolicyModel& model)
    : model_(&model),
      d_(static_cast<std::size_t>(model.dims().d_model)),
      f_(static_cast<std::size_t>(model.dims().d_ff)),
      h_(static_cast<std::size_t>(model.dims().n_heads)),
      dh_(d_ / h_),
      v_(model.vocab_size()),
      layers_(static_cast<std::size_t>(model.dims().n_layers)) {
  const auto positions = static_cast<std::size_t>(model.dims().context_window) + 1;
  const std::size_t half = dh_ / 2;
  rope_cos_.resize(positions * half);
  rope_sin_.resize(positions * half);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dh_));
      rope_cos_[pos * half + i] = std::cos(static_cast<double>(pos) * freq);
      rope_sin_[pos * half + i] = std::sin(static_cast<double>(pos) * freq);
    }
  }
  append(model.vocab().bos());
}

void ForwardPass::append(std::span<const TokenId> tokens) {
  const auto capacity = static_cast<std::size_t>(model_->dims().context_window) + 1;
  if (tokens_.size() + tokens.size() > capacity) {
    throw Error("sequence of " + std::to_string(tokens_.size() + tokens.size() - 1) +
                " tokens exceeds the context window of " +
                std::to_string(model_->dims().context_window));
  }
  for (TokenId tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= v_) {
      throw Error("token id out of range: " + std::to_string(tok));
    }
    tokens_.push_back(tok);
    compute_position(tokens_.size() - 1);
  }
}

void ForwardPass::truncate(std::size_t n) {
  if (n < 1 || n > tokens_.size()) throw Error("ForwardPass::truncate: bad length");
  tokens_.resize(n);
  for (auto& L : layers_) {
    for (auto* buf : {&L.x_in, &L.n1, &L.q, &L.k, &L.v, &L.ctx, &L.x_mid, &L.n2}) {
      buf->resize(n * d_);
    }
    L.inv1.resize(n);
    L.inv2.resize(n);
    L.pre.resize(n * f_);
    L.act.resize(n * f_);
    L.probs.resize(h_ * n * (n + 1) / 2);
  }
  x_final_.resize(n * d_);
  inv_f_.resize(n);
  f_out_.resize(n * d_);
  logits_.resize(n * v_);
  values_.resize(n);
}

std::span<const double> ForwardPass::logits(std::size_t pos) const {
  if (pos >= tokens_.size()) throw Error("ForwardPass::logits: position out of range");
  return std::span<const double>(logits_).subspan(pos * v_, v_);
}

void ForwardPass::compute_position(std::size_t t) {
  const auto& K = kernels::active();
  const double* p = model_->params().data();
  const ParamLayout& lay = model_->layout();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh_));

  std::vector<double> h(d_), tmp(std::max(d_, f_));
  const auto tok = static_cast<std::size_t>(tokens_[t]);
  for (std::size_t i = 0; i < d_; ++i) {
    h[i] = p[lay.tok_emb + tok * d_ + i] + p[lay.pos_emb + t * d_ + i];
  }

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    LayerActs& A = layers_[l];
    const auto& W = lay.layers[l];
    A.x_in.insert(A.x_in.end(), h.begin(), h.end());
    A.n1.resize((t + 1) * d_);
    A.inv1.push_back(rms_forward(h.data(), p + W.ln1, A.n1.data() + t * d_, d_));
    const double* n1 = A.n1.data() + t * d_;
    A.q.resize((t + 1) * d_);
    A.k.resize((t + 1) * d_);
    A.v.resize((t + 1) * d_);
    K.matvec(p + W.wq, n1, A.q.data() + t * d_, d_, d_);
    K.matvec(p + W.wk, n1, A.k.data() + t * d_, d_, d_);
    K.matvec(p + W.wv, n1, A.v.data() + t * d_, d_, d_);
    const double* rc = rope_cos_.data() + t * (dh_ / 2);
    const double* rs = rope_sin_.data() + t * (dh_ / 2);
    rotate(A.q.data() + t * d_, rc, rs, h_, dh_, 1.0);
    rotate(A.k.data() + t * d_, rc, rs, h_, dh_, 1.0);

    A.probs.resize(h_ * (t + 1) * (t + 2) / 2);
    A.ctx.resize((t + 1) * d_);
    double* ctx = A.ctx.data() + t * d_;
    std::fill_n(ctx, d_, 0.0);
    for (std::size_t hd = 0; hd < h_; ++hd) {
      double* pr = A.probs.data() + h_ * t * (t + 1) / 2 + hd * (t + 1);
      const double* q = A.q.data() + t * d_ + hd * dh_;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= t; ++j) {
        pr[j] = K.dot(q, A.k.data() + j * d_ + hd * dh_, dh_) * scale;
        mx = std::max(mx, pr[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        pr[j] = std::exp(pr[j] - mx);
        z += pr[j];
      }
      for (std::size_t j = 0; j <= t; ++j) {
        pr[j] /= z;
        K.axpy(pr[j], A.v.data() + j * d_ + hd * dh_, ctx + hd * dh_, dh_);
      }
    }
    K.matvec(p + W.wo, ctx, tmp.data(), d_, d_);
    for (std::size_t i = 0; i < d_; ++i) h[i] += tmp[i];
    A.x_mid.insert(A.x_mid.end(), h.begin(), h.end());

    A.n2.resize((t + 1) * d_);
    A.inv2.push_back(rms_forward(h.data(), p + W.ln2, A.n2.data() + t * d_, d_));
    A.pre.resize((t + 1) * f_);
    A.act.resize((t + 1) * f_);
    double* pre = A.pre.data() + t * f_;
    double* act = A.act.data() + t * f_;
    K.matvec(p + W.w1, A.n2.data() + t * d_, pre, f_, d_);
    for (std::size_t i = 0; i < f_; ++i) {
      pre[i] += p[W.b1 + i];
      act[i] = gelu(pre[i]);
    }
    K.matvec(p + W.w2, act, tmp.data(), d_, f_);
    for (std::size_t i = 0; i < d_; ++i) h[i] += tmp[i] + p[W.b2 + i];
  }

  x_final_.insert(x_final_.end(), h.begin(), h.end());
  f_out_.resize((t + 1) * d_);
  inv_f_.push_back(rms_forward(h.data(), p + lay.ln_f, f_out_.data() + t * d_, d_));
  const double* fo = f_out_.data() + t * d_;
  logits_.resize((t + 1) * v_);
  K.matvec(p + lay.w_out, fo, logits_.data() + t * v_, v_, d_);
  for (std::size_t i = 0; i < v_; ++i) logits_[t * v_ + i] += p[lay.b_out + i];
  values_.push_back(K.dot(p + lay.value_w, fo, d_) + p[lay.value_b]);
}

void ForwardPass::backward(std::span<const double> dlogits, std::span<const double> dvalue,
                           std::span<double> grad) const {
  const std::size_t T = tokens_.size();
  if (dlogits.size() != T * v_ || dvalue.size() != T) {
    throw Error("ForwardPass::backward: gradient shape mismatch");
  }
  if (grad.size() != model_->param_count()) throw Error("ForwardPass::backward: bad grad size");
  const auto& K = kernels::active();
  const double* p = model_->params().data();
  double* g = grad.data();
  const ParamLayout& lay = model_->layout();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh_));

  // Output head and final norm.
  std::vector<double> dh(T * d_, 0.0), df(d_);
  for (std::size_t t = 0; t < T; ++t) {
    const double* fo = f_out_.data() + t * d_;
    if (dvalue[t] != 0.0) {
      K.axpy(dvalue[t], fo, g + lay.value_w, d_);
      g[lay.value_b] += dvalue[t];
    }
    const double* dl = dlogits.data() + t * v_;
    if (std::all_of(dl, dl + v_, [](double x) { return x == 0.0; })) continue;
    K.outer_acc(dl, fo, g + lay.w_out, v_, d_);
    for (std::size_t i = 0; i < v_; ++i) g[lay.b_out + i] += dl[i];
    std::fill(df.begin(), df.end(), 0.0);
    K.matvec_t_acc(p + lay.w_out, dl, df.data(), v_, d_);
    rms_backward(df.data(), x_final_.data() + t * d_, inv_f_[t], p + lay.ln_f,
                 dh.data() + t * d_, g + lay.ln_f, d_);
  }

  std::vector<double> dmid(T * d_), dq(T * d_), dk(T * d_), dv(T * d_);
  std::vector<double> dact(f_), dctx(d_), dn(d_), dp;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const LayerActs& A = layers_[l];
    const auto& W = lay.layers[l];

    // MLP block: h_out = x_mid + W2 gelu(W1 n2 + b1) + b2.
    dmid = dh;
    for (std::size_t t = 0; t < T; ++t) {
      const double* dout = dh.data() + t * d_;
      K.outer_acc(dout, A.act.data() + t * f_, g + W.w2, d_, f_);
      K.axpy(1.0, dout, g + W.b2, d_);
      std::fill(dact.begin(), dact.end(), 0.0);
      K.matvec_t_acc(p + W.w2, dout, dact.data(), d_, f_);
      const double* pre = A.pre.data() + t * f_;
      for (std::size_t i = 0; i < f_; ++i) dact[i] *= gelu_grad(pre[i]);
      K.outer_acc(dact.data(), A.n2.data() + t * d_, g + W.w1, f_, d_);
      K.axpy(1.0, dact.data(), g + W.b1, f_);
      std::fill(dn.begin(), dn.end(), 0.0);
      K.matvec_t_acc(p + W.w1, dact.data(), dn.data(), f_, d_);
      rms_backward(dn.data(), A.x_mid.data() + t * d_, A.inv2[t], p + W.ln2,
                   dmid.data() + t * d_, g + W.ln2, d_);
    }

    // Attention block: x_mid = x_in + Wo ctx.
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    dh = dmid;
    for (std::size_t t = 0; t < T; ++t) {
      const double* dout = dmid.data() + t * d_;
      K.outer_acc(dout, A.ctx.data() + t * d_, g + W.wo, d_, d_);
      std::fill(dctx.begin(), dctx.end(), 0.0);
      K.matvec_t_acc(p + W.wo, dout, dctx.data(), d_, d_);
      dp.resize(t + 1);
      for (std::size_t hd = 0; hd < h_; ++hd) {
        const double* pr = A.probs.data() + h_ * t * (t + 1) / 2 + hd * (t + 1);
        const double* dc = dctx.data() + hd * dh_;
        double s = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          dp[j] = K.dot(dc, A.v.data() + j * d_ + hd * dh_, dh_);
          K.axpy(pr[j], dc, dv.data() + j * d_ + hd * dh_, dh_);
          s += pr[j] * dp[j];
        }
        const double* q = A.q.data() + t * d_ + hd * dh_;
        double* dqt = dq.data() + t * d_ + hd * dh_;
        for (std::size_t j = 0; j <= t; ++j) {
          const double ds = pr[j] * (dp[j] - s) * scale;
          if (ds == 0.0) continue;
          K.axpy(ds, A.k.data() + j * d_ + hd * dh_, dqt, dh_);
          K.axpy(ds, q, dk.data() + j * d_ + hd * dh_, dh_);
        }
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      const double* rc = rope_cos_.data() + t * (dh_ / 2);
      const double* rs = rope_sin_.data() + t * (dh_ / 2);
      rotate(dq.data() + t * d_, rc, rs, h_, dh_, -1.0);
      rotate(dk.data() + t * d_, rc, rs, h_, dh_, -1.0);
      const double* n1 = A.n1.data() + t * d_;
      K.outer_acc(dq.data() + t * d_, n1, g + W.wq, d_, d_);
      K.outer_acc(dk.data() + t * d_, n1, g + W.wk, d_, d_);
      K.outer_acc(dv.data() + t * d_, n1, g + W.wv, d_, d_);
      std::fill(dn.begin(), dn.end(), 0.0);
      K.matvec_t_acc(p + W.wq, dq.data() + t * d_, dn.data(), d_, d_);
      K.matvec_t_acc(p + W.wk, dk.data() + t * d_, dn.data(), d_, d_);
      K.matvec_t_acc(p + W.wv, dv.data() + t * d_, dn.data(), d_, d_);
      rms_backward(dn.data(), A.x_in.data() + t * d_, A.inv1[t], p + W.ln1,
                   dh.data() + t * d_, g + W.ln1, d_);
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    const auto tok = static_cast<std::size_t>(tokens_[t]);
    K.axpy(1.0, dh.data() + t * d_, g + lay.tok_emb + tok * d_, d_);
    K.axpy(1.0, dh.data() + t * d_, g + lay.pos_emb + t * d_, d_);
  }
}

}  // namespace refgame
