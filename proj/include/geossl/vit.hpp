#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geossl/errors.hpp"
#include "geossl/image.hpp"
#include "geossl/rng.hpp"
#include "geossl/tensor.hpp"

namespace geossl::vit {

inline constexpr double kLayerNormEps = 1e-6;

struct ViTConfig {
  int layers = 12;
  int embed_dim = 384;
  int hidden_dim = 1536;
  int heads = 6;
  int patch_size = 14;
  int image_size = 224;  // grid the positional table is trained at

  int base_grid() const { return image_size / patch_size; }

  void validate() const {
    if (layers < 0) throw std::invalid_argument("vit: layers must be nonnegative");
    if (embed_dim <= 0 || hidden_dim <= 0 || heads <= 0)
      throw std::invalid_argument("vit: dimensions must be positive");
    if (embed_dim % heads != 0)
      throw std::invalid_argument("vit: embed_dim must be divisible by heads");
    if (patch_size <= 0) throw std::invalid_argument("vit: patch_size must be positive");
    if (image_size <= 0 || image_size % patch_size != 0)
      throw std::invalid_argument("vit: image_size must be a positive multiple of patch_size");
  }
};

// Closed-form scalar count of every parameter tensor; no allocation.
inline std::int64_t param_count(const ViTConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.embed_dim;
  const std::int64_t hd = cfg.hidden_dim;
  const std::int64_t p = cfg.patch_size;
  const std::int64_t g0 = cfg.image_size / cfg.patch_size;
  const std::int64_t patch_proj = 3 * p * p * d + d;
  const std::int64_t tokens = 2 * d;  // class token + mask token
  const std::int64_t pos = (1 + g0 * g0) * d;
  const std::int64_t per_block = (3 * d * d + 3 * d)   // fused qkv
                                 + (d * d + d)         // attention output
                                 + 4 * d               // two layer norms
                                 + (d * hd + hd)       // mlp in
                                 + (hd * d + d);       // mlp out
  const std::int64_t final_norm = 2 * d;
  return patch_proj + tokens + pos + cfg.layers * per_block + final_norm;
}

template <class S>
struct BlockParamsT {
  TensorT<S> norm1_gamma, norm1_beta;
  TensorT<S> qkv_w, qkv_b;
  TensorT<S> out_w, out_b;
  TensorT<S> norm2_gamma, norm2_beta;
  TensorT<S> mlp1_w, mlp1_b;
  TensorT<S> mlp2_w, mlp2_b;
};

template <class S>
struct ViTParamsT {
  ViTConfig config;
  TensorT<S> patch_w, patch_b;   // [3*P*P x D], [D]
  TensorT<S> class_token;        // [1 x D]
  TensorT<S> mask_token;         // [1 x D]
  TensorT<S> pos_embed;          // [(1 + G0^2) x D]
  std::vector<BlockParamsT<S>> blocks;
  TensorT<S> final_gamma, final_beta;

  static ViTParamsT init(const ViTConfig& cfg, Rng& rng, bool requires_grad) {
    cfg.validate();
    const int d = cfg.embed_dim;
    const int hd = cfg.hidden_dim;
    const int pp = 3 * cfg.patch_size * cfg.patch_size;
    const int n0 = 1 + cfg.base_grid() * cfg.base_grid();
    const S w_std = S(0.02);
    ViTParamsT params;
    params.config = cfg;
    params.patch_w = TensorT<S>::randn({pp, d}, rng, w_std, requires_grad);
    params.patch_b = TensorT<S>::zeros({d}, requires_grad);
    params.class_token = TensorT<S>::randn({1, d}, rng, w_std, requires_grad);
    params.mask_token = TensorT<S>::randn({1, d}, rng, w_std, requires_grad);
    params.pos_embed = TensorT<S>::randn({n0, d}, rng, w_std, requires_grad);
    params.blocks.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& b : params.blocks) {
      b.norm1_gamma = TensorT<S>::full({d}, S(1), requires_grad);
      b.norm1_beta = TensorT<S>::zeros({d}, requires_grad);
      b.qkv_w = TensorT<S>::randn({d, 3 * d}, rng, w_std, requires_grad);
      b.qkv_b = TensorT<S>::zeros({3 * d}, requires_grad);
      b.out_w = TensorT<S>::randn({d, d}, rng, w_std, requires_grad);
      b.out_b = TensorT<S>::zeros({d}, requires_grad);
      b.norm2_gamma = TensorT<S>::full({d}, S(1), requires_grad);
      b.norm2_beta = TensorT<S>::zeros({d}, requires_grad);
      b.mlp1_w = TensorT<S>::randn({d, hd}, rng, w_std, requires_grad);
      b.mlp1_b = TensorT<S>::zeros({hd}, requires_grad);
      b.mlp2_w = TensorT<S>::randn({hd, d}, rng, w_std, requires_grad);
      b.mlp2_b = TensorT<S>::zeros({d}, requires_grad);
    }
    params.final_gamma = TensorT<S>::full({d}, S(1), requires_grad);
    params.final_beta = TensorT<S>::zeros({d}, requires_grad);
    return params;
  }

  // Stable iteration order; names double as checkpoint tensor keys.
  void for_each(const std::function<void(const std::string&, TensorT<S>&)>& fn) {
    fn("patch.weight", patch_w);
    fn("patch.bias", patch_b);
    fn("class_token", class_token);
    fn("mask_token", mask_token);
    fn("pos_embed", pos_embed);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      auto& b = blocks[i];
      fn(p + "norm1.gamma", b.norm1_gamma);
      fn(p + "norm1.beta", b.norm1_beta);
      fn(p + "qkv.weight", b.qkv_w);
      fn(p + "qkv.bias", b.qkv_b);
      fn(p + "out.weight", b.out_w);
      fn(p + "out.bias", b.out_b);
      fn(p + "norm2.gamma", b.norm2_gamma);
      fn(p + "norm2.beta", b.norm2_beta);
      fn(p + "mlp1.weight", b.mlp1_w);
      fn(p + "mlp1.bias", b.mlp1_b);
      fn(p + "mlp2.weight", b.mlp2_w);
      fn(p + "mlp2.bias", b.mlp2_b);
    }
    fn("final_norm.gamma", final_gamma);
    fn("final_norm.beta", final_beta);
  }

  std::int64_t scalar_count() {
    std::int64_t n = 0;
    for_each([&](const std::string&, TensorT<S>& t) { n += static_cast<std::int64_t>(t.numel()); });
    return n;
  }
};

template <class S>
struct EncodedT {
  TensorT<S> class_token;   // [1 x D]
  TensorT<S> patch_tokens;  // [G^2 x D], row-major over the patch grid
  int grid = 0;
};

// Flatten non-overlapping patches into a constant [G^2 x 3*P^2] matrix.
template <class S>
TensorT<S> patch_matrix(const Image& img, int patch_size) {
  if (img.height != img.width)
    throw std::invalid_argument("patch_embed: square input required, got " +
                                std::to_string(img.height) + "x" + std::to_string(img.width));
  if (img.height % patch_size != 0)
    throw std::invalid_argument("patch_embed: input side " + std::to_string(img.height) +
                                " not divisible by patch size " + std::to_string(patch_size));
  const int g = img.height / patch_size;
  const int pp = 3 * patch_size * patch_size;
  TensorT<S> out = TensorT<S>::zeros({g * g, pp});
  S* po = out.ptr();
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      S* row = po + (static_cast<std::size_t>(gy) * g + gx) * pp;
      int k = 0;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int c = 0; c < 3; ++c)
            row[k++] = static_cast<S>(img.at(gy * patch_size + py, gx * patch_size + px, c));
    }
  return out;
}

// Project patches, substitute the mask token at masked indices, prepend the
// class token, and add (grid-interpolated) positional embeddings.
template <class S>
TensorT<S> patch_embed(const Image& img, ViTParamsT<S>& params,
                       const std::vector<int>* mask = nullptr) {
  const ViTConfig& cfg = params.config;
  TensorT<S> patches = patch_matrix<S>(img, cfg.patch_size);
  const int g = img.height / cfg.patch_size;
  if (mask)
    for (int idx : *mask)
      if (idx < 0 || idx >= g * g)
        throw std::invalid_argument("patch_embed: mask index " + std::to_string(idx) +
                                    " outside the " + std::to_string(g * g) + "-cell grid");
  TensorT<S> proj = add_rowvec(matmul(patches, params.patch_w), params.patch_b);
  if (mask && !mask->empty()) proj = replace_rows(proj, params.mask_token, *mask);
  TensorT<S> tokens = concat_rows<S>({params.class_token, proj});

  const int g0 = cfg.base_grid();
  TensorT<S> pos = params.pos_embed;
  if (g != g0) {
    TensorT<S> pos_cls = slice_rows(pos, 0, 1);
    TensorT<S> pos_grid = interp_grid_rows(slice_rows(pos, 1, g0 * g0), g0, g);
    pos = concat_rows<S>({pos_cls, pos_grid});
  }
  return add(tokens, pos);
}

// Pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)).
template <class S>
TensorT<S> attention_block(const TensorT<S>& tokens, const BlockParamsT<S>& block, int heads) {
  const int d = tokens.dim(1);
  if (d % heads != 0)
    throw std::invalid_argument("attention_block: token dim not divisible by heads");
  const int dh = d / heads;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

  TensorT<S> y = layer_norm(tokens, block.norm1_gamma, block.norm1_beta, S(kLayerNormEps));
  TensorT<S> qkv = add_rowvec(matmul(y, block.qkv_w), block.qkv_b);
  std::vector<TensorT<S>> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    TensorT<S> q = slice_cols(qkv, h * dh, dh);
    TensorT<S> k = slice_cols(qkv, d + h * dh, dh);
    TensorT<S> v = slice_cols(qkv, 2 * d + h * dh, dh);
    TensorT<S> att = softmax_temp(mul_scalar(matmul(q, transpose2d(k)), scale), S(1));
    head_outs.push_back(matmul(att, v));
  }
  TensorT<S> attn_out = add_rowvec(matmul(concat_cols(head_outs), block.out_w), block.out_b);
  TensorT<S> x1 = add(tokens, attn_out);

  TensorT<S> y2 = layer_norm(x1, block.norm2_gamma, block.norm2_beta, S(kLayerNormEps));
  TensorT<S> h1 = gelu(add_rowvec(matmul(y2, block.mlp1_w), block.mlp1_b));
  TensorT<S> mlp_out = add_rowvec(matmul(h1, block.mlp2_w), block.mlp2_b);
  return add(x1, mlp_out);
}

template <class S>
EncodedT<S> vit_forward(const Image& img, ViTParamsT<S>& params,
                        const std::vector<int>* mask = nullptr) {
  TensorT<S> tokens = patch_embed(img, params, mask);
  for (const auto& block : params.blocks)
    tokens = attention_block(tokens, block, params.config.heads);
  tokens = layer_norm(tokens, params.final_gamma, params.final_beta, S(kLayerNormEps));
  if (!all_finite(tokens))
    throw NumericalError("vit_forward: non-finite activations");
  const int g = img.height / params.config.patch_size;
  EncodedT<S> enc;
  enc.class_token = slice_rows(tokens, 0, 1);
  enc.patch_tokens = slice_rows(tokens, 1, g * g);
  enc.grid = g;
  return enc;
}

// Table-row presets, keyed by size name.
inline ViTConfig preset(const std::string& name) {
  ViTConfig cfg;
  if (name == "small") {
    cfg.layers = 12; cfg.embed_dim = 384; cfg.hidden_dim = 1536; cfg.heads = 6;
  } else if (name == "base") {
    cfg.layers = 12; cfg.embed_dim = 768; cfg.hidden_dim = 3072; cfg.heads = 12;
  } else if (name == "large") {
    cfg.layers = 24; cfg.embed_dim = 1024; cfg.hidden_dim = 4096; cfg.heads = 16;
  } else if (name == "huge") {
    cfg.layers = 32; cfg.embed_dim = 1280; cfg.hidden_dim = 5120; cfg.heads = 16;
  } else if (name == "giant") {
    cfg.layers = 40; cfg.embed_dim = 1536; cfg.hidden_dim = 6144; cfg.heads = 24;
  } else {
    throw ConfigError("unknown model size: " + name);
  }
  return cfg;
}

using ViTParams = ViTParamsT<float>;
using Encoded = EncodedT<float>;

}  // namespace geossl::vit
