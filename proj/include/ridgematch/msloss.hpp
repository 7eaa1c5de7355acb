#pragma once

// Multi-similarity loss with hard-pair mining, and the three-matrix
// composite objective over contactless/contact embeddings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ridgematch/autograd.hpp"
#include "ridgematch/encoder.hpp"
#include "ridgematch/error.hpp"
#include "ridgematch/tensor.hpp"

namespace ridgematch {

struct LossConfig {
  double alpha_pos = 2.0;
  double alpha_neg = 40.0;
  double tau = 0.5;
  double margin = 0.7;

  void validate() const {
    if (!(alpha_pos > 0.0) || !(alpha_neg > 0.0)) throw ConfigError("loss: scales must be positive");
    if (!(margin >= 0.0)) throw ConfigError("loss: margin must be non-negative");
    if (!(tau > -1.0 && tau < 1.0)) throw ConfigError("loss: tau must lie in (-1, 1)");
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// Score matrix with identity labels for rows and columns. `masked` marks
// entries excluded from every computation (self pairs).
struct SimilarityMatrix {
  Matrix<double> scores;
  std::vector<int> row_labels;
  std::vector<int> col_labels;
  std::vector<std::uint8_t> masked;

  SimilarityMatrix() = default;
  SimilarityMatrix(Matrix<double> s, std::vector<int> rl, std::vector<int> cl, bool mask_diagonal = false)
      : scores(std::move(s)), row_labels(std::move(rl)), col_labels(std::move(cl)),
        masked(scores.size(), 0) {
    if (row_labels.size() != scores.rows() || col_labels.size() != scores.cols()) {
      throw DimensionError("similarity matrix: label counts " + std::to_string(row_labels.size()) +
                           "/" + std::to_string(col_labels.size()) + " vs scores " +
                           scores.shape_string());
    }
    if (mask_diagonal) {
      for (std::size_t i = 0; i < std::min(rows(), cols()); ++i) masked[i * cols() + i] = 1;
    }
  }

  std::size_t rows() const { return scores.rows(); }
  std::size_t cols() const { return scores.cols(); }
  bool is_masked(std::size_t i, std::size_t j) const { return masked[i * cols() + j] != 0; }
  bool genuine(std::size_t i, std::size_t j) const { return row_labels[i] == col_labels[j]; }
};

// scores[i,j] = dot(a[i], b[j]); with same_set the diagonal is masked.
template <typename T>
SimilarityMatrix similarity_matrix(const std::vector<GlobalEmbedding<T>>& a,
                                   const std::vector<GlobalEmbedding<T>>& b,
                                   std::vector<int> a_labels, std::vector<int> b_labels,
                                   bool same_set) {
  if (a.empty() || b.empty()) throw DimensionError("similarity_matrix: empty embedding list");
  const std::size_t d = a[0].dim();
  Matrix<double> s(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].dim() != d) throw DimensionError("similarity_matrix: embedding dims differ");
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (b[j].dim() != d) throw DimensionError("similarity_matrix: embedding dims differ");
      double acc = 0;
      for (std::size_t k = 0; k < d; ++k)
        acc += static_cast<double>(a[i].values[k]) * static_cast<double>(b[j].values[k]);
      s(i, j) = acc;
    }
  }
  return SimilarityMatrix(std::move(s), std::move(a_labels), std::move(b_labels), same_set);
}

struct MinedPairs {
  std::vector<std::uint8_t> pos;
  std::vector<std::uint8_t> neg;

  std::size_t kept() const {
    return static_cast<std::size_t>(std::count(pos.begin(), pos.end(), 1) +
                                    std::count(neg.begin(), neg.end(), 1));
  }
};

// Per anchor row, in raw similarity space:
//   negative kept  iff  S > min(positives) - margin
//   positive kept  iff  S < max(negatives) + margin
// Rows without positives keep negatives above tau; rows without negatives
// keep positives below tau.
inline MinedPairs mine_pairs(const SimilarityMatrix& S, const LossConfig& cfg) {
  MinedPairs out{std::vector<std::uint8_t>(S.scores.size(), 0),
                 std::vector<std::uint8_t>(S.scores.size(), 0)};
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < S.rows(); ++i) {
    double min_pos = inf, max_neg = -inf;
    bool any_pos = false, any_neg = false;
    for (std::size_t j = 0; j < S.cols(); ++j) {
      if (S.is_masked(i, j)) continue;
      const double s = S.scores(i, j);
      if (S.genuine(i, j)) {
        any_pos = true;
        min_pos = std::min(min_pos, s);
      } else {
        any_neg = true;
        max_neg = std::max(max_neg, s);
      }
    }
    const double neg_cut = any_pos ? min_pos - cfg.margin : cfg.tau;
    const double pos_cut = any_neg ? max_neg + cfg.margin : cfg.tau;
    for (std::size_t j = 0; j < S.cols(); ++j) {
      if (S.is_masked(i, j)) continue;
      const double s = S.scores(i, j);
      const std::size_t k = i * S.cols() + j;
      if (S.genuine(i, j)) {
        out.pos[k] = s < pos_cut;
      } else {
        out.neg[k] = s > neg_cut;
      }
    }
  }
  return out;
}

struct LossResult {
  double loss = 0.0;
  Matrix<double> grad;  // d loss / d scores; zero outside mined entries
};

// Anchor-mean of (1/α⁺)·log(1 + Σ e^{-α⁺(S-τ)}) + (1/α⁻)·log(1 + Σ e^{α⁻(S-τ)})
// over the mined pairs of each row. Masks are held fixed for the gradient.
inline LossResult ms_loss(const SimilarityMatrix& S, const LossConfig& cfg) {
  cfg.validate();
  const MinedPairs mined = mine_pairs(S, cfg);
  LossResult r{0.0, Matrix<double>(S.rows(), S.cols())};
  if (S.rows() == 0) return r;
  const double inv_m = 1.0 / static_cast<double>(S.rows());
  std::vector<double> pexp(S.cols()), nexp(S.cols());
  for (std::size_t i = 0; i < S.rows(); ++i) {
    double psum = 0, nsum = 0;
    for (std::size_t j = 0; j < S.cols(); ++j) {
      const std::size_t k = i * S.cols() + j;
      const double s = S.scores(i, j);
      pexp[j] = mined.pos[k] ? std::exp(-cfg.alpha_pos * (s - cfg.tau)) : 0.0;
      nexp[j] = mined.neg[k] ? std::exp(cfg.alpha_neg * (s - cfg.tau)) : 0.0;
      psum += pexp[j];
      nsum += nexp[j];
    }
    r.loss += (std::log1p(psum) / cfg.alpha_pos + std::log1p(nsum) / cfg.alpha_neg) * inv_m;
    for (std::size_t j = 0; j < S.cols(); ++j) {
      if (pexp[j] != 0.0) r.grad(i, j) = -pexp[j] / (1.0 + psum) * inv_m;
      if (nexp[j] != 0.0) r.grad(i, j) = nexp[j] / (1.0 + nsum) * inv_m;
    }
  }
  return r;
}

// Loss node over a score matrix on the tape.
template <typename T>
Var ms_loss_graph(Tape<T>& t, Var scores, std::vector<int> row_labels, std::vector<int> col_labels,
                  bool mask_diagonal, const LossConfig& cfg) {
  SimilarityMatrix S(t.value(scores).template cast<double>(), std::move(row_labels),
                     std::move(col_labels), mask_diagonal);
  LossResult r = ms_loss(S, cfg);
  Matrix<T> g = r.grad.cast<T>();
  return t.push(Matrix<T>(1, 1, static_cast<T>(r.loss)), {scores},
                [scores, g = std::move(g)](Tape<T>& t, const Matrix<T>& out) {
                  t.accumulate(scores, ops::map(g, [s = out[0]](T v) { return v * s; }));
                });
}

struct CompositeLoss {
  double cl2cl = 0.0;
  double cl2cb = 0.0;
  double cb2cb = 0.0;
  double total() const { return cl2cl + cl2cb + cb2cb; }
};

// L_G = L(cl, cl) + L(cl, cb) + L(cb, cb); same-modality matrices mask self
// pairs. Terms with an empty side are zero.
template <typename T>
CompositeLoss composite_loss(const std::vector<GlobalEmbedding<T>>& cl,
                             const std::vector<GlobalEmbedding<T>>& cb,
                             const std::vector<int>& cl_labels, const std::vector<int>& cb_labels,
                             const LossConfig& cfg) {
  if (cl.size() != cl_labels.size() || cb.size() != cb_labels.size()) {
    throw DimensionError("composite_loss: labels not aligned with embeddings");
  }
  CompositeLoss out;
  if (!cl.empty()) out.cl2cl = ms_loss(similarity_matrix(cl, cl, cl_labels, cl_labels, true), cfg).loss;
  if (!cl.empty() && !cb.empty())
    out.cl2cb = ms_loss(similarity_matrix(cl, cb, cl_labels, cb_labels, false), cfg).loss;
  if (!cb.empty()) out.cb2cb = ms_loss(similarity_matrix(cb, cb, cb_labels, cb_labels, true), cfg).loss;
  return out;
}

// Differentiable composite loss over stacked embedding rows (n × e).
template <typename T>
Var composite_loss_graph(Tape<T>& t, Var cl, Var cb, const std::vector<int>& cl_labels,
                         const std::vector<int>& cb_labels, const LossConfig& cfg) {
  std::vector<Var> terms;
  terms.push_back(ms_loss_graph(t, ag::matmul_bt(t, cl, cl), cl_labels, cl_labels, true, cfg));
  terms.push_back(ms_loss_graph(t, ag::matmul_bt(t, cl, cb), cl_labels, cb_labels, false, cfg));
  terms.push_back(ms_loss_graph(t, ag::matmul_bt(t, cb, cb), cb_labels, cb_labels, true, cfg));
  return ag::sum(t, terms);
}

}  // namespace ridgematch
