#pragma once

// Stage 2: two-way cross-attention between the token sets of a candidate
// pair, GAP of the attended tokens, and a cosine score.
//
// Each block computes both directions from the block input:
//   V' = V + MHA_v(LN_v(V), LN_q(Q))     Q' = Q + MHA_q(LN_q(Q), LN_v(V))
// followed by a pre-norm GELU MLP with residual on each stream.

#include <algorithm>
#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ridgematch/autograd.hpp"
#include "ridgematch/encoder.hpp"
#include "ridgematch/error.hpp"
#include "ridgematch/ops.hpp"
#include "ridgematch/params.hpp"
#include "ridgematch/rng.hpp"

namespace ridgematch {

struct FusionConfig {
  std::size_t blocks = 1;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  double ln_eps = 1e-5;

  void validate() const {
    if (heads == 0 || width % heads != 0) {
      throw ConfigError("fusion: width " + std::to_string(width) + " not divisible by heads " +
                        std::to_string(heads));
    }
    if (mlp_hidden == 0) throw ConfigError("fusion: mlp_hidden must be positive");
  }

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

inline std::string fusion_prefix(std::size_t j) { return "fusion" + std::to_string(j); }

template <typename T>
ParamStore<T> init_fusion(const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(mix_key({seed, hash_string("fusion-init")}));
  const std::size_t d = cfg.width;
  ParamStore<T> p;
  for (std::size_t j = 0; j < cfg.blocks; ++j) {
    const std::string b = fusion_prefix(j);
    for (const char* s : {"v", "q"}) {
      const std::string ln = b + ".ln_" + s;
      p.add(ln + ".gamma", Matrix<T>(1, d, T(1)));
      p.add(ln + ".beta", Matrix<T>(1, d));
    }
    for (const char* s : {"v", "q"}) {
      const std::string a = b + ".attn_" + s;
      for (const char* w : {".wq", ".wk", ".wv", ".wo"}) p.add(a + w, init::fan_in_normal<T>(d, d, rng));
      for (const char* w : {".bq", ".bk", ".bv", ".bo"}) p.add(a + w, Matrix<T>(1, d));
    }
    for (const char* s : {"v", "q"}) {
      const std::string ln = b + ".ln2_" + s;
      p.add(ln + ".gamma", Matrix<T>(1, d, T(1)));
      p.add(ln + ".beta", Matrix<T>(1, d));
      const std::string m = b + ".mlp_" + s;
      p.add(m + ".w1", init::fan_in_normal<T>(d, cfg.mlp_hidden, rng));
      p.add(m + ".b1", Matrix<T>(1, cfg.mlp_hidden));
      p.add(m + ".w2", init::fan_in_normal<T>(cfg.mlp_hidden, d, rng));
      p.add(m + ".b2", Matrix<T>(1, d));
    }
  }
  return p;
}

// Copies every "_v" stream parameter over its "_q" counterpart so that the
// block treats both streams identically.
template <typename T>
ParamStore<T> symmetrize_fusion(const ParamStore<T>& p) {
  ParamStore<T> out;
  for (const auto& [name, m] : p) {
    std::string src = name;
    for (const char* tag : {".ln_", ".attn_", ".ln2_", ".mlp_"}) {
      const std::string q = std::string(tag) + "q";
      if (auto pos = src.find(q); pos != std::string::npos) src.replace(pos, q.size(), std::string(tag) + "v");
    }
    out.add(name, p.get(src));
  }
  return out;
}

template <typename T>
void check_pair(const TokenSet<T>& fv, const TokenSet<T>& fq, const FusionConfig& cfg) {
  if (fv.width() != cfg.width || fq.width() != cfg.width) {
    throw DimensionError("fusion: token widths " + std::to_string(fv.width()) + "/" +
                         std::to_string(fq.width()) + " vs fusion width " +
                         std::to_string(cfg.width));
  }
  if (fv.count() == 0 || fq.count() == 0) throw DegenerateError("fusion: empty token set");
}

// Attention messages of one block, before residual and MLP.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> cross_messages(const Matrix<T>& v, const Matrix<T>& q,
                                               const ParamStore<T>& p, const FusionConfig& cfg,
                                               std::size_t block) {
  const std::string b = fusion_prefix(block);
  const T eps = static_cast<T>(cfg.ln_eps);
  const Matrix<T> nv = ops::layer_norm(v, p.get(b + ".ln_v.gamma"), p.get(b + ".ln_v.beta"), eps);
  const Matrix<T> nq = ops::layer_norm(q, p.get(b + ".ln_q.gamma"), p.get(b + ".ln_q.beta"), eps);
  return {ops::multi_head_attention(nv, nq, attention_params(p, b + ".attn_v", cfg.heads)),
          ops::multi_head_attention(nq, nv, attention_params(p, b + ".attn_q", cfg.heads))};
}

template <typename T>
std::pair<TokenSet<T>, TokenSet<T>> cross_attend(const TokenSet<T>& fv, const TokenSet<T>& fq,
                                                 const ParamStore<T>& p, const FusionConfig& cfg) {
  cfg.validate();
  check_pair(fv, fq, cfg);
  const T eps = static_cast<T>(cfg.ln_eps);
  Matrix<T> v = fv.tokens, q = fq.tokens;
  for (std::size_t j = 0; j < cfg.blocks; ++j) {
    auto [mv, mq] = cross_messages(v, q, p, cfg, j);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += mv[i];
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += mq[i];
    const std::string b = fusion_prefix(j);
    for (auto [x, s] : {std::pair<Matrix<T>*, const char*>{&v, "v"}, {&q, "q"}}) {
      const std::string tag(s);
      const Matrix<T> h = ops::layer_norm(*x, p.get(b + ".ln2_" + tag + ".gamma"),
                                          p.get(b + ".ln2_" + tag + ".beta"), eps);
      Matrix<T> m = ops::linear(h, p.get(b + ".mlp_" + tag + ".w1"), p.get(b + ".mlp_" + tag + ".b1"));
      m = ops::map(m, [](T u) { return ops::gelu(u); });
      m = ops::linear(m, p.get(b + ".mlp_" + tag + ".w2"), p.get(b + ".mlp_" + tag + ".b2"));
      for (std::size_t i = 0; i < x->size(); ++i) (*x)[i] += m[i];
    }
  }
  return {TokenSet<T>{std::move(v)}, TokenSet<T>{std::move(q)}};
}

template <typename T>
std::pair<GlobalEmbedding<T>, GlobalEmbedding<T>> refined_embeddings(const TokenSet<T>& av,
                                                                     const TokenSet<T>& aq) {
  return {GlobalEmbedding<T>{ops::l2_normalize(ops::gap(av.tokens))},
          GlobalEmbedding<T>{ops::l2_normalize(ops::gap(aq.tokens))}};
}

// Cosine of the refined embeddings with fv in the V role and fq in the Q role.
template <typename T>
T directional_score(const TokenSet<T>& fv, const TokenSet<T>& fq, const ParamStore<T>& p,
                    const FusionConfig& cfg) {
  auto [av, aq] = cross_attend(fv, fq, p, cfg);
  auto [ev, eq] = refined_embeddings(av, aq);
  // Rounding in the normalization can push a cosine just past ±1.
  return std::clamp(ops::dot<T>(ev.values.row(0), eq.values.row(0)), T(-1), T(1));
}

// Fine-grained pair score, averaged over both role assignments so that
// match_score(a, b) == match_score(b, a) exactly.
template <typename T>
T match_score(const TokenSet<T>& fv, const TokenSet<T>& fq, const ParamStore<T>& p,
              const FusionConfig& cfg) {
  const T s1 = directional_score(fv, fq, p, cfg);
  const T s2 = directional_score(fq, fv, p, cfg);
  return (s1 + s2) / T(2);
}

inline double fused_score(double global_sim, double fine_sim, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("fused_score: weight must lie in [0, 1]");
  return w * fine_sim + (1.0 - w) * global_sim;
}

// All probe × gallery fine scores, row-major. Rows are split across worker
// threads; each entry is computed independently so the result is identical
// to sequential evaluation.
template <typename T>
Matrix<T> match_score_matrix(const std::vector<TokenSet<T>>& probes,
                             const std::vector<TokenSet<T>>& gallery, const ParamStore<T>& p,
                             const FusionConfig& cfg, unsigned threads = 0) {
  Matrix<T> out(probes.size(), gallery.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, probes.size())));
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < probes.size(); i += threads)
      for (std::size_t j = 0; j < gallery.size(); ++j) out(i, j) = match_score(probes[i], gallery[j], p, cfg);
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(work, k);
    for (auto& th : pool) th.join();
  }
  return out;
}

// Differentiable symmetrized pair score (1×1).
template <typename T>
Var match_score_graph(ParamBinding<T>& p, Var fv, Var fq, const FusionConfig& cfg) {
  Tape<T>& t = p.tape();
  const T eps = static_cast<T>(cfg.ln_eps);
  auto directional = [&](Var v, Var q) {
    for (std::size_t j = 0; j < cfg.blocks; ++j) {
      const std::string b = fusion_prefix(j);
      Var nv = ag::layer_norm(t, v, p(b + ".ln_v.gamma"), p(b + ".ln_v.beta"), eps);
      Var nq = ag::layer_norm(t, q, p(b + ".ln_q.gamma"), p(b + ".ln_q.beta"), eps);
      Var mv = ag::multi_head_attention(t, nv, nq, ag::bind_attention(p, b + ".attn_v", cfg.heads));
      Var mq = ag::multi_head_attention(t, nq, nv, ag::bind_attention(p, b + ".attn_q", cfg.heads));
      v = ag::add(t, v, mv);
      q = ag::add(t, q, mq);
      for (auto [x, s] : {std::pair<Var*, const char*>{&v, "v"}, {&q, "q"}}) {
        const std::string tag(s);
        Var h = ag::layer_norm(t, *x, p(b + ".ln2_" + tag + ".gamma"), p(b + ".ln2_" + tag + ".beta"), eps);
        Var m = ag::gelu(t, ag::linear(t, h, p(b + ".mlp_" + tag + ".w1"), p(b + ".mlp_" + tag + ".b1")));
        *x = ag::add(t, *x, ag::linear(t, m, p(b + ".mlp_" + tag + ".w2"), p(b + ".mlp_" + tag + ".b2")));
      }
    }
    Var ev = ag::l2_normalize(t, ag::gap(t, v));
    Var eq = ag::l2_normalize(t, ag::gap(t, q));
    return ag::matmul_bt(t, ev, eq);
  };
  Var s1 = directional(fv, fq);
  Var s2 = directional(fq, fv);
  return ag::scale(t, ag::add(t, s1, s2), T(0.5));
}

}  // namespace ridgematch
