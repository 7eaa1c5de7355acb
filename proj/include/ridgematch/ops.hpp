#pragma once

// Forward-only numeric kernels. Everything here is a pure function of its
// arguments; the differentiable versions in autograd.hpp reuse these for
// their forward pass.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <vector>

#include "ridgematch/error.hpp"
#include "ridgematch/tensor.hpp"

namespace ridgematch {

template <typename T>
struct LinearLayer {
  Matrix<T> weight;  // din × dout
  Matrix<T> bias;    // 1 × dout
};

// Per-head projections are the column blocks [h·dh, (h+1)·dh) of the packed
// d×d query/key/value weights.
template <typename T>
struct AttentionParams {
  Matrix<T> wq, wk, wv, wo;  // d × d
  Matrix<T> bq, bk, bv, bo;  // 1 × d
  std::size_t heads = 1;

  std::size_t width() const { return wq.rows(); }
  std::size_t head_dim() const { return width() / heads; }
};

namespace ops {

// a · b
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " · " + b.shape_string());
  }
  Matrix<T> out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* o = &out(i, 0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T av = a(i, k);
      if (av == T(0)) continue;
      const T* br = &b(k, 0);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a · bᵀ
template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_bt: " + a.shape_string() + " · (" + b.shape_string() + ")ᵀ");
  }
  Matrix<T> out(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ar = &a(i, 0);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* br = &b(j, 0);
      T s = 0;
      for (std::size_t t = 0; t < k; ++t) s += ar[t] * br[t];
      out(i, j) = s;
    }
  }
  return out;
}

// aᵀ · b
template <typename T>
Matrix<T> matmul_at(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_at: (" + a.shape_string() + ")ᵀ · " + b.shape_string());
  }
  Matrix<T> out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t t = 0; t < a.rows(); ++t) {
    const T* br = &b(t, 0);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T av = a(t, i);
      if (av == T(0)) continue;
      T* o = &out(i, 0);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: x " + x.shape_string() + ", W " + w.shape_string() +
                         ", b " + b.shape_string());
  }
  Matrix<T> out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b[j];
  }
  return out;
}

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                     T eps = T(1e-5)) {
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw DimensionError("layer_norm: x " + x.shape_string() + ", gamma " +
                         gamma.shape_string() + ", beta " + beta.shape_string());
  }
  Matrix<T> out(x.rows(), x.cols());
  const T n = static_cast<T>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    T mean = 0;
    for (T v : r) mean += v;
    mean /= n;
    T var = 0;
    for (T v : r) var += (v - mean) * (v - mean);
    var /= n;
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = (r[j] - mean) * inv * gamma[j] + beta[j];
    }
  }
  return out;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : r) mx = std::max(mx, v);
    T sum = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(r[j] - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <typename T, typename F>
Matrix<T> map(const Matrix<T>& x, F f) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename T>
Matrix<T> relu(const Matrix<T>& x) {
  return map(x, [](T v) { return v > T(0) ? v : T(0); });
}

// Global average pooling over token rows.
template <typename T>
Matrix<T> gap(const Matrix<T>& tokens) {
  if (tokens.rows() == 0) throw DegenerateError("gap: empty token set");
  Matrix<T> out(1, tokens.cols());
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    for (std::size_t j = 0; j < tokens.cols(); ++j) out[j] += tokens(i, j);
  }
  const T inv = T(1) / static_cast<T>(tokens.rows());
  for (auto& v : out.data()) v *= inv;
  return out;
}

// Linear layers with ReLU between them; the last layer has no activation.
template <typename T>
Matrix<T> relu_mlp(const Matrix<T>& x, const std::vector<LinearLayer<T>>& layers) {
  Matrix<T> h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = linear(h, layers[l].weight, layers[l].bias);
    if (l + 1 < layers.size()) h = relu(h);
  }
  return h;
}

template <typename T>
Matrix<T> l2_normalize(const Matrix<T>& v) {
  Matrix<T> out(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    T ss = 0;
    for (T x : v.row(i)) ss += x * x;
    if (!(ss > T(0))) throw DegenerateError("l2_normalize: zero-norm embedding");
    const T inv = T(1) / std::sqrt(ss);
    for (std::size_t j = 0; j < v.cols(); ++j) out(i, j) = v(i, j) * inv;
  }
  return out;
}

template <typename T>
void check_attention(const AttentionParams<T>& p, std::size_t q_width, std::size_t kv_width) {
  const std::size_t d = p.width();
  if (p.heads == 0 || d % p.heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(p.heads) + " heads");
  }
  if (q_width != d || kv_width != d) {
    throw DimensionError("attention: input widths " + std::to_string(q_width) + "/" +
                         std::to_string(kv_width) + " vs model width " + std::to_string(d));
  }
}

// softmax(Q Kᵀ / √dh) V per head, heads concatenated, then output-projected.
template <typename T>
Matrix<T> multi_head_attention(const Matrix<T>& queries_src, const Matrix<T>& keys_vals_src,
                               const AttentionParams<T>& p) {
  check_attention(p, queries_src.cols(), keys_vals_src.cols());
  const Matrix<T> q = linear(queries_src, p.wq, p.bq);
  const Matrix<T> k = linear(keys_vals_src, p.wk, p.bk);
  const Matrix<T> v = linear(keys_vals_src, p.wv, p.bv);
  const std::size_t dh = p.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> concat(q.rows(), p.width());
  Matrix<T> logits(q.rows(), k.rows());
  for (std::size_t h = 0; h < p.heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < q.rows(); ++i) {
      for (std::size_t j = 0; j < k.rows(); ++j) {
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, c0 + c) * k(j, c0 + c);
        logits(i, j) = s * scale;
      }
    }
    const Matrix<T> attn = softmax_rows(logits);
    for (std::size_t i = 0; i < q.rows(); ++i) {
      for (std::size_t j = 0; j < k.rows(); ++j) {
        const T a = attn(i, j);
        for (std::size_t c = 0; c < dh; ++c) concat(i, c0 + c) += a * v(j, c0 + c);
      }
    }
  }
  return linear(concat, p.wo, p.bo);
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace ops
}  // namespace ridgematch
