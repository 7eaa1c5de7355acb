#pragma once

// Stage 1: patch embedding, pre-norm transformer blocks, GAP and an MLP head
// producing a unit-norm global embedding. One encoder serves both modalities.

#include <cstdint>
#include <string>
#include <vector>

#include "ridgematch/autograd.hpp"
#include "ridgematch/error.hpp"
#include "ridgematch/image.hpp"
#include "ridgematch/ops.hpp"
#include "ridgematch/params.hpp"
#include "ridgematch/rng.hpp"
#include "ridgematch/tensor.hpp"

namespace ridgematch {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  // Hidden width of the embedding head; 0 makes the head a single linear layer.
  std::size_t head_hidden = 64;
  std::size_t embed_dim = 64;
  double ln_eps = 1e-5;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t token_count() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size; }

  void validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("encoder: image_size " + std::to_string(image_size) +
                        " not divisible by patch_size " + std::to_string(patch_size));
    }
    if (heads == 0 || width % heads != 0) {
      throw ConfigError("encoder: width " + std::to_string(width) + " not divisible by heads " +
                        std::to_string(heads));
    }
    if (width == 0 || mlp_hidden == 0 || embed_dim == 0) {
      throw ConfigError("encoder: width, mlp_hidden and embed_dim must be positive");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

template <typename T>
struct TokenSet {
  Matrix<T> tokens;  // T × d

  std::size_t count() const { return tokens.rows(); }
  std::size_t width() const { return tokens.cols(); }
};

template <typename T>
struct GlobalEmbedding {
  Matrix<T> values;  // 1 × embed_dim, unit norm

  std::size_t dim() const { return values.cols(); }
};

template <typename T>
struct Encoding {
  TokenSet<T> tokens;
  GlobalEmbedding<T> embedding;
};

// Row-major over the patch grid; each patch flattened row-major.
template <typename T>
Matrix<T> patchify(const Image& image, std::size_t p) {
  if (image.height != image.width) {
    throw ConfigError("patchify: image must be square, got " + std::to_string(image.height) +
                      "x" + std::to_string(image.width));
  }
  if (p == 0 || image.height % p != 0) {
    throw ConfigError("patchify: size " + std::to_string(image.height) +
                      " not divisible by patch " + std::to_string(p));
  }
  const std::size_t g = image.height / p;
  Matrix<T> out(g * g, p * p);
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      const std::size_t t = gy * g + gx;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          out(t, y * p + x) = static_cast<T>(image.at(gy * p + y, gx * p + x));
    }
  }
  return out;
}

template <typename T>
TokenSet<T> embed_patches(const Matrix<T>& patches, const Matrix<T>& embed_w,
                          const Matrix<T>& embed_b, const Matrix<T>& pos) {
  Matrix<T> tokens = ops::linear(patches, embed_w, embed_b);
  require_same_shape(tokens, pos, "embed_patches: positional table");
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += pos[i];
  return {std::move(tokens)};
}

inline std::string block_prefix(std::size_t l) { return "block" + std::to_string(l); }

inline std::size_t head_layer_count(const EncoderConfig& cfg) { return cfg.head_hidden == 0 ? 1 : 2; }

template <typename T>
ParamStore<T> init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(mix_key({seed, hash_string("encoder-init")}));
  const std::size_t d = cfg.width;
  ParamStore<T> p;
  p.add("patch_embed.w", init::fan_in_normal<T>(cfg.patch_dim(), d, rng));
  p.add("patch_embed.b", Matrix<T>(1, d));
  p.add("pos", init::normal<T>(cfg.token_count(), d, 0.02, rng));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = block_prefix(l);
    p.add(b + ".ln1.gamma", Matrix<T>(1, d, T(1)));
    p.add(b + ".ln1.beta", Matrix<T>(1, d));
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
      p.add(b + w, init::fan_in_normal<T>(d, d, rng));
    for (const char* w : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"}) p.add(b + w, Matrix<T>(1, d));
    p.add(b + ".ln2.gamma", Matrix<T>(1, d, T(1)));
    p.add(b + ".ln2.beta", Matrix<T>(1, d));
    p.add(b + ".mlp.w1", init::fan_in_normal<T>(d, cfg.mlp_hidden, rng));
    p.add(b + ".mlp.b1", Matrix<T>(1, cfg.mlp_hidden));
    p.add(b + ".mlp.w2", init::fan_in_normal<T>(cfg.mlp_hidden, d, rng));
    p.add(b + ".mlp.b2", Matrix<T>(1, d));
  }
  if (cfg.head_hidden == 0) {
    p.add("head.0.w", init::fan_in_normal<T>(d, cfg.embed_dim, rng));
    p.add("head.0.b", Matrix<T>(1, cfg.embed_dim));
  } else {
    p.add("head.0.w", init::fan_in_normal<T>(d, cfg.head_hidden, rng));
    p.add("head.0.b", Matrix<T>(1, cfg.head_hidden));
    p.add("head.1.w", init::fan_in_normal<T>(cfg.head_hidden, cfg.embed_dim, rng));
    p.add("head.1.b", Matrix<T>(1, cfg.embed_dim));
  }
  return p;
}

template <typename T>
AttentionParams<T> attention_params(const ParamStore<T>& p, const std::string& prefix,
                                    std::size_t heads) {
  return {p.get(prefix + ".wq"), p.get(prefix + ".wk"), p.get(prefix + ".wv"),
          p.get(prefix + ".wo"), p.get(prefix + ".bq"), p.get(prefix + ".bk"),
          p.get(prefix + ".bv"), p.get(prefix + ".bo"), heads};
}

template <typename T>
std::vector<LinearLayer<T>> head_layers(const ParamStore<T>& p, const EncoderConfig& cfg) {
  std::vector<LinearLayer<T>> layers;
  for (std::size_t i = 0; i < head_layer_count(cfg); ++i) {
    const std::string n = "head." + std::to_string(i);
    layers.push_back({p.get(n + ".w"), p.get(n + ".b")});
  }
  return layers;
}

inline void check_image(const Image& image, const EncoderConfig& cfg) {
  if (image.height != cfg.image_size || image.width != cfg.image_size) {
    throw DataError("image size " + std::to_string(image.height) + "x" +
                    std::to_string(image.width) + " does not match encoder input " +
                    std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  for (float v : image.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image values must lie in [0, 1]");
  }
}

// Token matrix after all transformer blocks.
template <typename T>
TokenSet<T> encode_tokens(const Image& image, const ParamStore<T>& p, const EncoderConfig& cfg) {
  cfg.validate();
  check_image(image, cfg);
  const T eps = static_cast<T>(cfg.ln_eps);
  Matrix<T> x = embed_patches(patchify<T>(image, cfg.patch_size), p.get("patch_embed.w"),
                              p.get("patch_embed.b"), p.get("pos"))
                    .tokens;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = block_prefix(l);
    const Matrix<T> h1 = ops::layer_norm(x, p.get(b + ".ln1.gamma"), p.get(b + ".ln1.beta"), eps);
    const Matrix<T> a = ops::multi_head_attention(h1, h1, attention_params(p, b + ".attn", cfg.heads));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += a[i];
    const Matrix<T> h2 = ops::layer_norm(x, p.get(b + ".ln2.gamma"), p.get(b + ".ln2.beta"), eps);
    Matrix<T> m = ops::linear(h2, p.get(b + ".mlp.w1"), p.get(b + ".mlp.b1"));
    m = ops::map(m, [](T v) { return ops::gelu(v); });
    m = ops::linear(m, p.get(b + ".mlp.w2"), p.get(b + ".mlp.b2"));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += m[i];
  }
  return {std::move(x)};
}

template <typename T>
GlobalEmbedding<T> embed_tokens(const TokenSet<T>& tokens, const ParamStore<T>& p,
                                const EncoderConfig& cfg) {
  return {ops::l2_normalize(ops::relu_mlp(ops::gap(tokens.tokens), head_layers(p, cfg)))};
}

// Deterministic given (image, params).
template <typename T>
Encoding<T> encode(const Image& image, const ParamStore<T>& p, const EncoderConfig& cfg) {
  TokenSet<T> tokens = encode_tokens(image, p, cfg);
  GlobalEmbedding<T> emb = embed_tokens(tokens, p, cfg);
  return {std::move(tokens), std::move(emb)};
}

// Differentiable counterpart of encode(); `patches` is the patchified image.
struct EncoderGraph {
  Var tokens;
  Var embedding;
};

template <typename T>
EncoderGraph encode_graph(ParamBinding<T>& p, Var patches, const EncoderConfig& cfg) {
  Tape<T>& t = p.tape();
  const T eps = static_cast<T>(cfg.ln_eps);
  Var x = ag::add(t, ag::linear(t, patches, p("patch_embed.w"), p("patch_embed.b")), p("pos"));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = block_prefix(l);
    Var h1 = ag::layer_norm(t, x, p(b + ".ln1.gamma"), p(b + ".ln1.beta"), eps);
    x = ag::add(t, x, ag::multi_head_attention(t, h1, h1, ag::bind_attention(p, b + ".attn", cfg.heads)));
    Var h2 = ag::layer_norm(t, x, p(b + ".ln2.gamma"), p(b + ".ln2.beta"), eps);
    Var m = ag::gelu(t, ag::linear(t, h2, p(b + ".mlp.w1"), p(b + ".mlp.b1")));
    x = ag::add(t, x, ag::linear(t, m, p(b + ".mlp.w2"), p(b + ".mlp.b2")));
  }
  Var h = ag::gap(t, x);
  const std::size_t n = head_layer_count(cfg);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = "head." + std::to_string(i);
    h = ag::linear(t, h, p(name + ".w"), p(name + ".b"));
    if (i + 1 < n) h = ag::relu(t, h);
  }
  return {x, ag::l2_normalize(t, h)};
}

}  // namespace ridgematch
