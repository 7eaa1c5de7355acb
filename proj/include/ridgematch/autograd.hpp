#pragma once

// Reverse-mode tape over whole matrices. Each op records its forward value
// and a closure that pushes the output gradient back to its inputs. Nodes
// that do not depend on any trainable leaf skip their backward closure.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ridgematch/error.hpp"
#include "ridgematch/ops.hpp"
#include "ridgematch/params.hpp"
#include "ridgematch/tensor.hpp"

namespace ridgematch {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<T>& out_grad)>;

  Var leaf(Matrix<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
    return Var{nodes_.size() - 1};
  }

  Var push(Matrix<T> value, std::initializer_list<Var> inputs, Backward fn) {
    return push(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }

  Var push(Matrix<T> value, const std::vector<Var>& inputs, Backward fn) {
    bool rg = false;
    for (Var v : inputs) rg = rg || nodes_.at(v.id).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(fn) : nullptr});
    return Var{nodes_.size() - 1};
  }

  const Matrix<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient accumulated into v by the last backward(); zeros if none reached it.
  Matrix<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) return Matrix<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Accumulation target for backward closures.
  Matrix<T>& grad_ref(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const Matrix<T>& g) {
    if (!requires_grad(v)) return;
    Matrix<T>& dst = grad_ref(v);
    require_same_shape(dst, g, "gradient accumulation");
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  void backward(Var scalar) {
    const Node& out = nodes_.at(scalar.id);
    if (out.value.size() != 1) {
      throw DimensionError("backward: output must be 1x1, got " + out.value.shape_string());
    }
    for (auto& n : nodes_) n.grad = Matrix<T>();
    if (!out.requires_grad) return;
    grad_ref(scalar)[0] = T(1);
    for (std::size_t i = scalar.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Lazily binds named parameters of a store as tape leaves and collects their
// gradients afterwards.
template <typename T>
class ParamBinding {
 public:
  ParamBinding(Tape<T>& tape, const ParamStore<T>& store, bool trainable = true)
      : tape_(tape), store_(store), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = tape_.leaf(store_.get(name), trainable_);
    vars_.emplace(name, v);
    return v;
  }

  // Uses an existing node for `name` instead of a fresh leaf.
  void bind(const std::string& name, Var v) {
    require_same_shape(tape_.value(v), store_.get(name), ("bind " + name).c_str());
    vars_[name] = v;
  }

  Tape<T>& tape() { return tape_; }
  const ParamStore<T>& store() const { return store_; }

  // Gradients for every parameter in the store, in store order. Parameters
  // the graph never touched get zero gradients.
  GradRecord<T> grads() const {
    GradRecord<T> out;
    for (const auto& [name, m] : store_) {
      auto it = vars_.find(name);
      out.add(name, it == vars_.end() ? Matrix<T>(m.rows(), m.cols()) : tape_.grad(it->second));
    }
    return out;
  }

 private:
  Tape<T>& tape_;
  const ParamStore<T>& store_;
  bool trainable_;
  std::map<std::string, Var> vars_;
};

namespace ag {

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  return t.push(ops::matmul(t.value(a), t.value(b)), {a, b},
                [a, b](Tape<T>& t, const Matrix<T>& g) {
                  if (t.requires_grad(a)) t.accumulate(a, ops::matmul_bt(g, t.value(b)));
                  if (t.requires_grad(b)) t.accumulate(b, ops::matmul_at(t.value(a), g));
                });
}

// a · bᵀ
template <typename T>
Var matmul_bt(Tape<T>& t, Var a, Var b) {
  return t.push(ops::matmul_bt(t.value(a), t.value(b)), {a, b},
                [a, b](Tape<T>& t, const Matrix<T>& g) {
                  if (t.requires_grad(a)) t.accumulate(a, ops::matmul(g, t.value(b)));
                  if (t.requires_grad(b)) t.accumulate(b, ops::matmul_at(g, t.value(a)));
                });
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  return t.push(ops::linear(t.value(x), t.value(w), t.value(b)), {x, w, b},
                [x, w, b](Tape<T>& t, const Matrix<T>& g) {
                  if (t.requires_grad(x)) t.accumulate(x, ops::matmul_bt(g, t.value(w)));
                  if (t.requires_grad(w)) t.accumulate(w, ops::matmul_at(t.value(x), g));
                  if (t.requires_grad(b)) {
                    Matrix<T> db(1, g.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g(i, j);
                    t.accumulate(b, db);
                  }
                });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const Matrix<T>& av = t.value(a);
  const Matrix<T>& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Matrix<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.push(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var scale(Tape<T>& t, Var x, T s) {
  Matrix<T> out = ops::map(t.value(x), [s](T v) { return v * s; });
  return t.push(std::move(out), {x}, [x, s](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, ops::map(g, [s](T v) { return v * s; }));
  });
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  Matrix<T> out = ops::layer_norm(t.value(x), t.value(gamma), t.value(beta), eps);
  return t.push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, eps](Tape<T>& t, const Matrix<T>& g) {
                  const Matrix<T>& xv = t.value(x);
                  const Matrix<T>& gm = t.value(gamma);
                  const std::size_t n = xv.cols();
                  Matrix<T> dx(xv.rows(), n), dgamma(1, n), dbeta(1, n);
                  std::vector<T> xhat(n), dxhat(n);
                  for (std::size_t i = 0; i < xv.rows(); ++i) {
                    T mean = 0;
                    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
                    mean /= static_cast<T>(n);
                    T var = 0;
                    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
                    var /= static_cast<T>(n);
                    const T inv = T(1) / std::sqrt(var + eps);
                    T sum_d = 0, sum_dx = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                      xhat[j] = (xv(i, j) - mean) * inv;
                      dxhat[j] = g(i, j) * gm[j];
                      sum_d += dxhat[j];
                      sum_dx += dxhat[j] * xhat[j];
                      dgamma[j] += g(i, j) * xhat[j];
                      dbeta[j] += g(i, j);
                    }
                    const T nn = static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                      dx(i, j) = inv / nn * (nn * dxhat[j] - sum_d - xhat[j] * sum_dx);
                    }
                  }
                  t.accumulate(x, dx);
                  t.accumulate(gamma, dgamma);
                  t.accumulate(beta, dbeta);
                });
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var x) {
  Matrix<T> out = ops::softmax_rows(t.value(x));
  // Constant copy of the output for the closure.
  Var y = t.leaf(out);
  return t.push(std::move(out), {x}, [x, y](Tape<T>& t, const Matrix<T>& g) {
    const Matrix<T>& yv = t.value(y);
    Matrix<T> dx(yv.rows(), yv.cols());
    for (std::size_t i = 0; i < yv.rows(); ++i) {
      T s = 0;
      for (std::size_t j = 0; j < yv.cols(); ++j) s += g(i, j) * yv(i, j);
      for (std::size_t j = 0; j < yv.cols(); ++j) dx(i, j) = yv(i, j) * (g(i, j) - s);
    }
    t.accumulate(x, dx);
  });
}

template <typename T>
Var gelu(Tape<T>& t, Var x) {
  return t.push(ops::map(t.value(x), [](T v) { return ops::gelu(v); }), {x},
                [x](Tape<T>& t, const Matrix<T>& g) {
                  const Matrix<T>& xv = t.value(x);
                  Matrix<T> dx(xv.rows(), xv.cols());
                  for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = g[i] * ops::gelu_grad(xv[i]);
                  t.accumulate(x, dx);
                });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  return t.push(ops::relu(t.value(x)), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    const Matrix<T>& xv = t.value(x);
    Matrix<T> dx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = xv[i] > T(0) ? g[i] : T(0);
    t.accumulate(x, dx);
  });
}

template <typename T>
Var slice_cols(Tape<T>& t, Var x, std::size_t c0, std::size_t c1) {
  const Matrix<T>& xv = t.value(x);
  if (c0 > c1 || c1 > xv.cols()) throw DimensionError("slice_cols: bad column range");
  Matrix<T> out(xv.rows(), c1 - c0);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = xv(i, j);
  return t.push(std::move(out), {x}, [x, c0, c1](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T>& dx = t.grad_ref(x);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = c0; j < c1; ++j) dx(i, j) += g(i, j - c0);
  });
}

template <typename T>
Var concat_cols(Tape<T>& t, const std::vector<Var>& parts) {
  std::size_t rows = t.value(parts.at(0)).rows(), cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Matrix<T> out(rows, cols);
  std::size_t c = 0;
  for (Var p : parts) {
    const Matrix<T>& pv = t.value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, c + j) = pv(i, j);
    c += pv.cols();
  }
  return t.push(std::move(out), parts, [parts](Tape<T>& t, const Matrix<T>& g) {
    std::size_t c = 0;
    for (Var p : parts) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        Matrix<T>& dp = t.grad_ref(p);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) dp(i, j) += g(i, c + j);
      }
      c += w;
    }
  });
}

template <typename T>
Var concat_rows(Tape<T>& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = t.value(parts[0]).cols();
  std::vector<T> data;
  std::size_t rows = 0;
  for (Var p : parts) {
    const Matrix<T>& pv = t.value(p);
    if (pv.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    data.insert(data.end(), pv.data().begin(), pv.data().end());
    rows += pv.rows();
  }
  return t.push(Matrix<T>(rows, cols, std::move(data)), parts,
                [parts](Tape<T>& t, const Matrix<T>& g) {
                  std::size_t r = 0;
                  for (Var p : parts) {
                    const std::size_t h = t.value(p).rows();
                    if (t.requires_grad(p)) {
                      Matrix<T>& dp = t.grad_ref(p);
                      for (std::size_t i = 0; i < h; ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) dp(i, j) += g(r + i, j);
                    }
                    r += h;
                  }
                });
}

template <typename T>
Var gap(Tape<T>& t, Var x) {
  return t.push(ops::gap(t.value(x)), {x}, [x](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T>& dx = t.grad_ref(x);
    const T inv = T(1) / static_cast<T>(dx.rows());
    for (std::size_t i = 0; i < dx.rows(); ++i)
      for (std::size_t j = 0; j < dx.cols(); ++j) dx(i, j) += g[j] * inv;
  });
}

// Row-wise L2 normalization.
template <typename T>
Var l2_normalize(Tape<T>& t, Var x) {
  Matrix<T> out = ops::l2_normalize(t.value(x));
  Var y = t.leaf(out);
  return t.push(std::move(out), {x}, [x, y](Tape<T>& t, const Matrix<T>& g) {
    const Matrix<T>& xv = t.value(x);
    const Matrix<T>& yv = t.value(y);
    Matrix<T> dx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      T norm = 0, gy = 0;
      for (std::size_t j = 0; j < xv.cols(); ++j) {
        norm += xv(i, j) * xv(i, j);
        gy += g(i, j) * yv(i, j);
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < xv.cols(); ++j) dx(i, j) = (g(i, j) - yv(i, j) * gy) / norm;
    }
    t.accumulate(x, dx);
  });
}

// Places 1×1 scalars into a rows×cols matrix, row-major.
template <typename T>
Var assemble(Tape<T>& t, const std::vector<Var>& scalars, std::size_t rows, std::size_t cols) {
  if (scalars.size() != rows * cols) throw DimensionError("assemble: element count mismatch");
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < scalars.size(); ++i) out[i] = t.value(scalars[i])[0];
  return t.push(std::move(out), scalars, [scalars](Tape<T>& t, const Matrix<T>& g) {
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      if (t.requires_grad(scalars[i])) t.grad_ref(scalars[i])[0] += g[i];
    }
  });
}

template <typename T>
Var sum(Tape<T>& t, const std::vector<Var>& scalars) {
  T s = 0;
  for (Var v : scalars) s += t.value(v)[0];
  return t.push(Matrix<T>(1, 1, s), scalars, [scalars](Tape<T>& t, const Matrix<T>& g) {
    for (Var v : scalars)
      if (t.requires_grad(v)) t.grad_ref(v)[0] += g[0];
  });
}

// Σ x∘w for a constant weight matrix w; reduces any op to a scalar for
// gradient checks.
template <typename T>
Var weighted_sum(Tape<T>& t, Var x, const Matrix<T>& w) {
  require_same_shape(t.value(x), w, "weighted_sum");
  T s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += t.value(x)[i] * w[i];
  return t.push(Matrix<T>(1, 1, s), {x}, [x, w](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(x, ops::map(w, [s = g[0]](T v) { return v * s; }));
  });
}

template <typename T>
struct AttentionVars {
  Var wq, wk, wv, wo, bq, bk, bv, bo;
  std::size_t heads = 1;
};

template <typename T>
AttentionVars<T> bind_attention(ParamBinding<T>& p, const std::string& prefix, std::size_t heads) {
  return {p(prefix + ".wq"), p(prefix + ".wk"), p(prefix + ".wv"), p(prefix + ".wo"),
          p(prefix + ".bq"), p(prefix + ".bk"), p(prefix + ".bv"), p(prefix + ".bo"),
          heads};
}

template <typename T>
Var multi_head_attention(Tape<T>& t, Var queries_src, Var keys_vals_src, const AttentionVars<T>& a) {
  const std::size_t d = t.value(a.wq).rows();
  if (a.heads == 0 || d % a.heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(a.heads) + " heads");
  }
  if (t.value(queries_src).cols() != d || t.value(keys_vals_src).cols() != d) {
    throw DimensionError("attention: input width mismatch");
  }
  const std::size_t dh = d / a.heads;
  const T scale_by = T(1) / std::sqrt(static_cast<T>(dh));
  Var q = linear(t, queries_src, a.wq, a.bq);
  Var k = linear(t, keys_vals_src, a.wk, a.bk);
  Var v = linear(t, keys_vals_src, a.wv, a.bv);
  std::vector<Var> heads;
  heads.reserve(a.heads);
  for (std::size_t h = 0; h < a.heads; ++h) {
    const std::size_t c0 = h * dh, c1 = c0 + dh;
    Var qh = a.heads == 1 ? q : slice_cols(t, q, c0, c1);
    Var kh = a.heads == 1 ? k : slice_cols(t, k, c0, c1);
    Var vh = a.heads == 1 ? v : slice_cols(t, v, c0, c1);
    Var attn = softmax_rows(t, scale(t, matmul_bt(t, qh, kh), scale_by));
    heads.push_back(matmul(t, attn, vh));
  }
  Var cat = a.heads == 1 ? heads[0] : concat_cols(t, heads);
  return linear(t, cat, a.wo, a.bo);
}

}  // namespace ag
}  // namespace ridgematch
