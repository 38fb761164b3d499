#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sfmim/error.hpp"
#include "sfmim/masking.hpp"
#include "sfmim/rng.hpp"
#include "sfmim/tensor.hpp"

namespace sfmim {

enum class PosEmbedding { learned, sinusoidal };

struct ModelConfig {
  size_t patch_size = 7;  // S; tokens = S*S
  size_t bands = 0;       // B
  size_t dim = 64;        // d
  size_t layers = 5;      // L
  size_t heads = 4;
  size_t classes = 0;     // K; 0 = no classifier head targets yet
  double dropout = 0.1;
  double ln_eps = 1e-5;
  PosEmbedding pos_embedding = PosEmbedding::learned;

  size_t tokens() const { return patch_size * patch_size; }

  void validate() const {
    if (patch_size % 2 == 0 || patch_size < 1)
      throw ConfigError("model: patch size must be odd and >= 1, got " +
                        std::to_string(patch_size));
    if (bands < 2) throw ConfigError("model: bands must be >= 2");
    if (dim == 0 || heads == 0 || dim % heads != 0)
      throw ConfigError("model: dim (" + std::to_string(dim) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  }
};

template <class S>
struct EncoderLayerParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// All learnable state. Weight matrices are stored for row-vector tokens:
// an [n,d_in] activation right-multiplies an [d_in,d_out] matrix.
template <class S>
struct ModelParams {
  ModelConfig cfg;
  Tensor<S> embed_w;     // [B, d]
  Tensor<S> pos;         // [N+1, d], slot 0 belongs to the cls token
  Tensor<S> cls;         // [1, d]
  Tensor<S> mask_token;  // [1, d]
  std::vector<EncoderLayerParams<S>> layers;
  Tensor<S> final_ln_gain, final_ln_bias;  // [d]
  Tensor<S> dec_w;   // [d, B]
  Tensor<S> dec_b;   // [B]
  Tensor<S> head_w;  // [d, K]
  Tensor<S> head_b;  // [K]

  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  // Stable name -> tensor view, the order both checkpoints and the
  // optimizer iterate in. Tensor handles share storage with the params.
  std::vector<std::pair<std::string, Tensor<S>>> named_tensors();
  void zero_grad();

  // Deep copy with fresh storage (handles otherwise share nodes).
  ModelParams clone() const;
};

template <class S>
ModelParams<S> ModelParams<S>::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  constexpr double kInitStd = 0.02;
  Rng rng(seed, /*stream=*/0x6D6F64656C);  // independent of data/step streams
  size_t which = 0;
  auto randn = [&](std::vector<size_t> shape) {
    Rng r = rng.split(which++);
    return Tensor<S>::randn(std::move(shape), kInitStd, r, true);
  };
  auto zeros = [&](std::vector<size_t> shape) {
    ++which;
    return Tensor<S>::zeros(std::move(shape), true);
  };
  auto ones = [&](std::vector<size_t> shape) {
    ++which;
    return Tensor<S>::full(std::move(shape), S(1), true);
  };

  const size_t n1 = cfg.tokens() + 1;
  const size_t d = cfg.dim;
  ModelParams<S> p;
  p.cfg = cfg;
  p.embed_w = randn({cfg.bands, d});
  if (cfg.pos_embedding == PosEmbedding::learned) {
    p.pos = randn({n1, d});
  } else {
    // Fixed sin/cos table; not trained.
    std::vector<S> table(n1 * d);
    for (size_t i = 0; i < n1; ++i) {
      for (size_t j = 0; j < d; ++j) {
        const double rate =
            std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
        const double a = static_cast<double>(i) * rate;
        table[i * d + j] = static_cast<S>(j % 2 == 0 ? std::sin(a) : std::cos(a));
      }
    }
    ++which;
    p.pos = Tensor<S>({n1, d}, std::move(table), false);
  }
  p.cls = randn({1, d});
  p.mask_token = randn({1, d});
  p.layers.resize(cfg.layers);
  for (auto& layer : p.layers) {
    layer.wq = randn({d, d});
    layer.bq = zeros({d});
    layer.wk = randn({d, d});
    layer.bk = zeros({d});
    layer.wv = randn({d, d});
    layer.bv = zeros({d});
    layer.wo = randn({d, d});
    layer.bo = zeros({d});
    layer.ln1_gain = ones({d});
    layer.ln1_bias = zeros({d});
    layer.ln2_gain = ones({d});
    layer.ln2_bias = zeros({d});
    layer.mlp_w1 = randn({d, 4 * d});
    layer.mlp_b1 = zeros({4 * d});
    layer.mlp_w2 = randn({4 * d, d});
    layer.mlp_b2 = zeros({d});
  }
  p.final_ln_gain = ones({d});
  p.final_ln_bias = zeros({d});
  p.dec_w = randn({d, cfg.bands});
  p.dec_b = zeros({cfg.bands});
  const size_t k = cfg.classes > 0 ? cfg.classes : 1;
  p.head_w = randn({d, k});
  p.head_b = zeros({k});
  return p;
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> ModelParams<S>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<S>>> named;
  named.emplace_back("embed.weight", embed_w);
  named.emplace_back("pos", pos);
  named.emplace_back("cls", cls);
  named.emplace_back("mask_token", mask_token);
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string pre = "enc." + std::to_string(i) + ".";
    auto& l = layers[i];
    named.emplace_back(pre + "attn.wq", l.wq);
    named.emplace_back(pre + "attn.bq", l.bq);
    named.emplace_back(pre + "attn.wk", l.wk);
    named.emplace_back(pre + "attn.bk", l.bk);
    named.emplace_back(pre + "attn.wv", l.wv);
    named.emplace_back(pre + "attn.bv", l.bv);
    named.emplace_back(pre + "attn.wo", l.wo);
    named.emplace_back(pre + "attn.bo", l.bo);
    named.emplace_back(pre + "ln1.gain", l.ln1_gain);
    named.emplace_back(pre + "ln1.bias", l.ln1_bias);
    named.emplace_back(pre + "ln2.gain", l.ln2_gain);
    named.emplace_back(pre + "ln2.bias", l.ln2_bias);
    named.emplace_back(pre + "mlp.w1", l.mlp_w1);
    named.emplace_back(pre + "mlp.b1", l.mlp_b1);
    named.emplace_back(pre + "mlp.w2", l.mlp_w2);
    named.emplace_back(pre + "mlp.b2", l.mlp_b2);
  }
  named.emplace_back("final_ln.gain", final_ln_gain);
  named.emplace_back("final_ln.bias", final_ln_bias);
  named.emplace_back("decoder.weight", dec_w);
  named.emplace_back("decoder.bias", dec_b);
  named.emplace_back("head.weight", head_w);
  named.emplace_back("head.bias", head_b);
  return named;
}

template <class S>
void ModelParams<S>::zero_grad() {
  for (auto& [name, t] : named_tensors()) t.zero_grad();
}

template <class S>
ModelParams<S> ModelParams<S>::clone() const {
  auto& self = const_cast<ModelParams<S>&>(*this);
  ModelParams<S> copy;
  copy.cfg = cfg;
  copy.layers.resize(layers.size());
  auto dup = [](const Tensor<S>& t) {
    return Tensor<S>(t.shape(), t.values(), t.requires_grad());
  };
  copy.embed_w = dup(self.embed_w);
  copy.pos = dup(self.pos);
  copy.cls = dup(self.cls);
  copy.mask_token = dup(self.mask_token);
  for (size_t i = 0; i < layers.size(); ++i) {
    auto& s = self.layers[i];
    auto& d = copy.layers[i];
    d.wq = dup(s.wq); d.bq = dup(s.bq);
    d.wk = dup(s.wk); d.bk = dup(s.bk);
    d.wv = dup(s.wv); d.bv = dup(s.bv);
    d.wo = dup(s.wo); d.bo = dup(s.bo);
    d.ln1_gain = dup(s.ln1_gain); d.ln1_bias = dup(s.ln1_bias);
    d.ln2_gain = dup(s.ln2_gain); d.ln2_bias = dup(s.ln2_bias);
    d.mlp_w1 = dup(s.mlp_w1); d.mlp_b1 = dup(s.mlp_b1);
    d.mlp_w2 = dup(s.mlp_w2); d.mlp_b2 = dup(s.mlp_b2);
  }
  copy.final_ln_gain = dup(self.final_ln_gain);
  copy.final_ln_bias = dup(self.final_ln_bias);
  copy.dec_w = dup(self.dec_w);
  copy.dec_b = dup(self.dec_b);
  copy.head_w = dup(self.head_w);
  copy.head_b = dup(self.head_b);
  return copy;
}

// Per-forward mutable context: a dropout stream when training, nothing at
// inference.
struct ForwardCtx {
  Rng* dropout_rng = nullptr;  // null = inference (no dropout)
  double dropout = 0.0;
};

// tokens: [N,B] -> [N+1,d]; row 0 is cls + pos[0], row i is W_e(y_i) + pos[i].
template <class S>
Tensor<S> embed_tokens(const Tensor<S>& tokens, const ModelParams<S>& p) {
  if (tokens.ndim() != 2 || tokens.rows() != p.cfg.tokens() || tokens.cols() != p.cfg.bands)
    throw ContractError("embed: expected " + std::to_string(p.cfg.tokens()) + "x" +
                        std::to_string(p.cfg.bands) + " tokens, got " +
                        detail::shape_str(tokens.shape()));
  const size_t n = tokens.rows();
  std::vector<size_t> body_idx(n);
  for (size_t i = 0; i < n; ++i) body_idx[i] = i + 1;
  Tensor<S> content = add(matmul(tokens, p.embed_w), gather_rows(p.pos, body_idx));
  Tensor<S> cls_row = add(p.cls, gather_rows(p.pos, {0}));
  return concat_rows<S>({cls_row, content});
}

// Replaces the embedded rows of masked tokens with mask_token + pos (the
// cls row is never masked). Positions are mask indices over tokens 0..N-1.
template <class S>
Tensor<S> substitute_masked(const Tensor<S>& embedded, const SpatialMask& mask,
                            const ModelParams<S>& p) {
  if (mask.flags.size() + 1 != embedded.rows())
    throw ContractError("substitute: mask length " + std::to_string(mask.flags.size()) +
                        " does not match " + std::to_string(embedded.rows()) + " rows");
  const auto masked = mask.masked_indices();
  if (masked.empty()) return embedded;
  std::vector<size_t> row_idx(masked.size());
  for (size_t i = 0; i < masked.size(); ++i) row_idx[i] = masked[i] + 1;
  Tensor<S> replacement =
      add(repeat_rows(p.mask_token, row_idx.size()), gather_rows(p.pos, row_idx));
  return scatter_rows(embedded, row_idx, replacement);
}

template <class S>
Tensor<S> encoder_layer(const Tensor<S>& x, const EncoderLayerParams<S>& l, size_t heads,
                        double ln_eps, ForwardCtx& ctx) {
  const size_t d = x.cols();
  const size_t dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor<S> h = layer_norm(x, l.ln1_gain, l.ln1_bias, ln_eps);
  Tensor<S> q = add_rowvec(matmul(h, l.wq), l.bq);
  Tensor<S> k = add_rowvec(matmul(h, l.wk), l.bk);
  Tensor<S> v = add_rowvec(matmul(h, l.wv), l.bv);

  std::vector<Tensor<S>> head_outs;
  head_outs.reserve(heads);
  for (size_t i = 0; i < heads; ++i) {
    Tensor<S> qh = slice_cols(q, i * dh, dh);
    Tensor<S> kh = slice_cols(k, i * dh, dh);
    Tensor<S> vh = slice_cols(v, i * dh, dh);
    Tensor<S> attn = softmax(scale(matmul(qh, transpose(kh)), scale_factor));
    if (ctx.dropout_rng && ctx.dropout > 0.0)
      attn = dropout(attn, ctx.dropout, *ctx.dropout_rng);
    head_outs.push_back(matmul_sorted(attn, vh));
  }
  Tensor<S> attn_out = add_rowvec(matmul(concat_cols(head_outs), l.wo), l.bo);
  Tensor<S> x1 = add(x, attn_out);

  Tensor<S> m = layer_norm(x1, l.ln2_gain, l.ln2_bias, ln_eps);
  Tensor<S> hidden = gelu(add_rowvec(matmul(m, l.mlp_w1), l.mlp_b1));
  if (ctx.dropout_rng && ctx.dropout > 0.0)
    hidden = dropout(hidden, ctx.dropout, *ctx.dropout_rng);
  Tensor<S> mlp_out = add_rowvec(matmul(hidden, l.mlp_w2), l.mlp_b2);
  return add(x1, mlp_out);
}

// Pre-norm transformer stack followed by a final layer norm.
template <class S>
Tensor<S> encode(const Tensor<S>& x, const ModelParams<S>& p, ForwardCtx ctx = {}) {
  Tensor<S> h = x;
  for (const auto& layer : p.layers)
    h = encoder_layer(h, layer, p.cfg.heads, p.cfg.ln_eps, ctx);
  return layer_norm(h, p.final_ln_gain, p.final_ln_bias, p.cfg.ln_eps);
}

// Affine reconstruction of all N token spectra from encoder rows 1..N
// (cls excluded): [N+1,d] -> [N,B].
template <class S>
Tensor<S> decode(const Tensor<S>& encoded, const ModelParams<S>& p) {
  const size_t n = encoded.rows() - 1;
  std::vector<size_t> body_idx(n);
  for (size_t i = 0; i < n; ++i) body_idx[i] = i + 1;
  return add_rowvec(matmul(gather_rows(encoded, body_idx), p.dec_w), p.dec_b);
}

// Class logits from the encoded cls row: [N+1,d] -> [1,K].
template <class S>
Tensor<S> classify(const Tensor<S>& encoded, const ModelParams<S>& p) {
  return add_rowvec(matmul(gather_rows(encoded, {0}), p.head_w), p.head_b);
}

}  // namespace sfmim
