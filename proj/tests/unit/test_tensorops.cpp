#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ridgematch/autograd.hpp"
#include "ridgematch/grad_check.hpp"
#include "ridgematch/ops.hpp"
#include "support/oracles.hpp"

using namespace ridgematch;
using M = Matrix<double>;

namespace {

AttentionParams<double> random_attention(std::mt19937_64& rng, std::size_t d, std::size_t heads) {
  auto w = [&] { return oracle::random_matrix(rng, d, d, 1.0 / std::sqrt(double(d))); };
  auto b = [&] { return oracle::random_matrix(rng, 1, d, 0.1); };
  return {w(), w(), w(), w(), b(), b(), b(), b(), heads};
}

M identity_rows(std::size_t n) { return M::identity(n); }

}  // namespace

TEST(Matrix, ShapeAndAccess) {
  M m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6);
  EXPECT_EQ(m.row(1)[0], 4);
  EXPECT_THROW(M(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_TRUE(m.all_finite());
  m(0, 0) = std::nan("");
  EXPECT_FALSE(m.all_finite());
}

TEST(Linear, IdentityInputGivesWeights) {
  std::mt19937_64 rng(1);
  const M w = oracle::random_matrix(rng, 3, 4);
  EXPECT_EQ(ops::linear(identity_rows(3), w, M(1, 4)), w);
}

TEST(Linear, HandExample) {
  const M out = ops::linear(M{{1, 2}}, M{{3}, {4}}, M{{1}});
  EXPECT_EQ(out, (M{{12}}));
}

TEST(Linear, ShapeMismatchNamesShapes) {
  try {
    ops::linear(M(2, 3), M(4, 5), M(1, 5));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("4x5"), std::string::npos);
  }
}

TEST(Linear, MatchesNaiveProduct) {
  std::mt19937_64 rng(2);
  for (int it = 0; it < 20; ++it) {
    const std::size_t r = oracle::uniform_size(rng, 1, 6), k = oracle::uniform_size(rng, 1, 6),
                      c = oracle::uniform_size(rng, 1, 6);
    const M x = oracle::random_matrix(rng, r, k), w = oracle::random_matrix(rng, k, c), b = oracle::random_matrix(rng, 1, c);
    M expect = oracle::naive_matmul(x, w);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) expect(i, j) += b[j];
    EXPECT_LT(max_abs_diff(ops::linear(x, w, b), expect), 1e-12);
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  std::mt19937_64 rng(3);
  const M a = oracle::random_matrix(rng, 3, 5), b = oracle::random_matrix(rng, 4, 5), c = oracle::random_matrix(rng, 3, 2);
  M bt(5, 4), at(5, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) bt(j, i) = b(i, j);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) at(j, i) = a(i, j);
  EXPECT_LT(max_abs_diff(ops::matmul_bt(a, b), oracle::naive_matmul(a, bt)), 1e-12);
  EXPECT_LT(max_abs_diff(ops::matmul_at(a, c), oracle::naive_matmul(at, c)), 1e-12);
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  const M out = ops::layer_norm(M{{2.5, 2.5, 2.5}}, M(1, 3, 1.0), M(1, 3), 1e-5);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoValueRow) {
  const M out = ops::layer_norm(M{{1, -1}}, M(1, 2, 1.0), M(1, 2), 1e-12);
  EXPECT_NEAR(out[0], 1.0, 1e-9);
  EXPECT_NEAR(out[1], -1.0, 1e-9);
}

TEST(LayerNorm, RowsStandardized) {
  std::mt19937_64 rng(4);
  const M x = oracle::random_matrix(rng, 5, 8, 3.0);
  const M out = ops::layer_norm(x, M(1, 8, 1.0), M(1, 8), 1e-12);
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0, var = 0;
    for (double v : out.row(i)) mean += v / 8;
    for (double v : out.row(i)) var += (v - mean) * (v - mean) / 8;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Softmax, Examples) {
  const M a = ops::softmax_rows(M{{0, 0, 0}});
  for (double v : a.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const M b = ops::softmax_rows(M{{1000, 0}});
  EXPECT_EQ(b[0], 1.0);
  EXPECT_EQ(b[1], 0.0);
  EXPECT_TRUE(b.all_finite());
  const M c = ops::softmax_rows(M{{std::log(2.0), 0}});
  EXPECT_NEAR(c[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(c[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(5);
  const M x = oracle::random_matrix(rng, 6, 7, 5.0);
  M shifted = x;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 7; ++j) shifted(i, j) += 10.0 * static_cast<double>(i) - 3.0;
  const M a = ops::softmax_rows(x), b = ops::softmax_rows(shifted);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (double v : a.row(i)) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(Attention, SingleKeyGivesValueRow) {
  const std::size_t d = 4;
  AttentionParams<double> p{M::identity(d), M::identity(d), M::identity(d), M::identity(d),
                            M(1, d),        M(1, d),        M(1, d),        M(1, d), 2};
  std::mt19937_64 rng(6);
  const M q = oracle::random_matrix(rng, 3, d), kv = oracle::random_matrix(rng, 1, d);
  const M out = ops::multi_head_attention(q, kv, p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(out(i, j), kv(0, j), 1e-14);
}

TEST(Attention, KeyValuePermutationInvariant) {
  std::mt19937_64 rng(7);
  const auto p = random_attention(rng, 8, 2);
  const M q = oracle::random_matrix(rng, 3, 8), kv = oracle::random_matrix(rng, 5, 8);
  M perm(5, 8);
  const std::size_t order[5] = {3, 0, 4, 1, 2};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 8; ++j) perm(i, j) = kv(order[i], j);
  EXPECT_LT(max_abs_diff(ops::multi_head_attention(q, kv, p), ops::multi_head_attention(q, perm, p)), 1e-12);
}

TEST(Attention, ScalarTranscript) {
  // d = 2, h = 2 (head width 1), hand-set projections.
  AttentionParams<double> p{M{{1, 0}, {0, 2}}, M{{1, 1}, {0, 1}}, M{{2, 0}, {1, 1}}, M{{1, 0}, {0, 1}},
                            M{{0, 0}},         M{{0, 0}},         M{{0, 0}},         M{{0.5, -0.5}}, 2};
  const M x{{1, 0}, {0, 1}};
  const M out = ops::multi_head_attention(x, x, p);
  // q = x·wq = [[1,0],[0,2]], k = x·wk = [[1,1],[0,1]], v = x·wv = [[2,0],[1,1]]
  auto sm2 = [](double a, double b) { return std::exp(a) / (std::exp(a) + std::exp(b)); };
  // head 0: q col 0, k col 0, v col 0; scale 1
  const double h0_r0 = sm2(1 * 1, 1 * 0) * 2 + (1 - sm2(1 * 1, 1 * 0)) * 1;
  const double h0_r1 = sm2(0 * 1, 0 * 0) * 2 + (1 - sm2(0, 0)) * 1;
  // head 1: q col 1, k col 1, v col 1
  const double h1_r0 = sm2(0 * 1, 0 * 1) * 0 + (1 - sm2(0, 0)) * 1;
  const double h1_r1 = sm2(2 * 1, 2 * 1) * 0 + (1 - sm2(2, 2)) * 1;
  EXPECT_NEAR(out(0, 0), h0_r0 + 0.5, 1e-14);
  EXPECT_NEAR(out(1, 0), h0_r1 + 0.5, 1e-14);
  EXPECT_NEAR(out(0, 1), h1_r0 - 0.5, 1e-14);
  EXPECT_NEAR(out(1, 1), h1_r1 - 0.5, 1e-14);
}

TEST(Attention, IndivisibleHeadsIsConfigError) {
  std::mt19937_64 rng(8);
  auto p = random_attention(rng, 6, 4);
  EXPECT_THROW(ops::multi_head_attention(M(2, 6), M(2, 6), p), ConfigError);
}

TEST(Gap, Examples) {
  EXPECT_EQ(ops::gap(M{{1, 3}, {3, 1}}), (M{{2, 2}}));
  EXPECT_EQ(ops::gap(M{{4, -1, 2}}), (M{{4, -1, 2}}));
  EXPECT_THROW(ops::gap(M(0, 3)), DegenerateError);
}

TEST(Gap, MatchesSummationOracleAndPermutation) {
  std::mt19937_64 rng(9);
  const M x = oracle::random_matrix(rng, 7, 5);
  const M g = ops::gap(x);
  const auto ref = oracle::column_means(x);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(g[j], ref[j], 1e-12);
  M rev(7, 5);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) rev(i, j) = x(6 - i, j);
  EXPECT_LT(max_abs_diff(ops::gap(rev), g), 1e-15);
}

TEST(ReluMlp, Examples) {
  EXPECT_EQ(ops::relu_mlp(M{{1.5, -2}}, {{M::identity(2), M(1, 2)}}), (M{{1.5, -2}}));
  const M out = ops::relu_mlp(M{{-1}}, {{M{{1}}, M{{0}}}, {M{{1}}, M{{0}}}});
  EXPECT_EQ(out, (M{{0}}));
  EXPECT_THROW(ops::relu_mlp(M{{1, 2}}, {{M(3, 1), M(1, 1)}}), DimensionError);
}

TEST(L2Normalize, Examples) {
  const M a = ops::l2_normalize(M{{3, 4}});
  EXPECT_NEAR(a[0], 0.6, 1e-15);
  EXPECT_NEAR(a[1], 0.8, 1e-15);
  EXPECT_LT(max_abs_diff(ops::l2_normalize(a), a), 1e-15);
  EXPECT_THROW(ops::l2_normalize(M(1, 3)), DegenerateError);
  std::mt19937_64 rng(10);
  for (int it = 0; it < 50; ++it) {
    const M v = oracle::random_matrix(rng, 1, 9);
    M scaled = v;
    for (double& x : scaled.data()) x *= 7.25;
    const M u = ops::l2_normalize(v);
    double n = 0;
    for (double x : u.data()) n += x * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
    EXPECT_LT(max_abs_diff(ops::l2_normalize(scaled), u), 1e-14);
  }
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(ops::gelu(0.0), 0.0);
  EXPECT_NEAR(ops::gelu(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(ops::gelu(-1.0), -0.15865525393145707, 1e-15);
}

// ---------------------------------------------------------------------------
// Gradient checks, a few instances per op; the acceptance suite runs more.

namespace {

Var sum_all(Tape<double>& t, Var x) {
  const M& v = t.value(x);
  return ag::weighted_sum(t, x, M(v.rows(), v.cols(), 1.0));
}

// Random weights make every output element matter.
Var random_projection(Tape<double>& t, Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const M& v = t.value(x);
  return ag::weighted_sum(t, x, oracle::random_matrix(rng, v.rows(), v.cols()));
}

}  // namespace

TEST(GradCheck, ConstantOpHasZeroError) {
  std::mt19937_64 rng(11);
  const auto r = grad_check([](Tape<double>& t, const std::vector<Var>&) { return t.leaf(M{{3.0}}); },
                            {oracle::random_matrix(rng, 2, 2)});
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, RejectsEpsOutsideRange) {
  auto f = [](Tape<double>& t, const std::vector<Var>& in) { return sum_all(t, in[0]); };
  EXPECT_THROW(grad_check(f, {M(1, 1)}, 1e-3), ConfigError);
  EXPECT_THROW(grad_check(f, {M(1, 1)}, 1e-8), ConfigError);
}

TEST(GradCheck, NonFiniteOutputNamesElement) {
  auto f = [](Tape<double>& t, const std::vector<Var>& in) {
    return t.push(M{{std::log(t.value(in[0])[1])}}, {in[0]}, [](Tape<double>&, const M&) {});
  };
  try {
    grad_check(f, {M{{1.0, 0.0}}});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("base point"), std::string::npos);
  }
  try {
    grad_check(f, {M{{1.0, 1e-5}}}, 1e-4);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("element 1"), std::string::npos);
  }
}

TEST(GradCheck, Linear) {
  std::mt19937_64 rng(12);
  for (int it = 0; it < 5; ++it) {
    const auto r = grad_check(
        [](Tape<double>& t, const std::vector<Var>& in) { return random_projection(t, ag::linear(t, in[0], in[1], in[2]), 1); },
        {oracle::random_matrix(rng, 3, 4), oracle::random_matrix(rng, 4, 5), oracle::random_matrix(rng, 1, 5)});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(GradCheck, LayerNorm) {
  std::mt19937_64 rng(13);
  for (int it = 0; it < 5; ++it) {
    const auto r = grad_check(
        [](Tape<double>& t, const std::vector<Var>& in) {
          return random_projection(t, ag::layer_norm(t, in[0], in[1], in[2], 1e-5), 2);
        },
        {oracle::random_matrix(rng, 3, 6), oracle::random_matrix(rng, 1, 6), oracle::random_matrix(rng, 1, 6)});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(GradCheck, SoftmaxGeluReluL2) {
  std::mt19937_64 rng(14);
  auto check = [&](auto op, double tol) {
    const auto r = grad_check(
        [&](Tape<double>& t, const std::vector<Var>& in) { return random_projection(t, op(t, in[0]), 3); },
        {oracle::random_matrix(rng, 3, 5)});
    EXPECT_LT(r.max_rel_error, tol);
  };
  check([](Tape<double>& t, Var x) { return ag::softmax_rows(t, x); }, 1e-6);
  check([](Tape<double>& t, Var x) { return ag::gelu(t, x); }, 1e-6);
  check([](Tape<double>& t, Var x) { return ag::relu(t, x); }, 1e-6);
  check([](Tape<double>& t, Var x) { return ag::l2_normalize(t, x); }, 1e-6);
  check([](Tape<double>& t, Var x) { return ag::gap(t, x); }, 1e-6);
}

TEST(GradCheck, Attention) {
  std::mt19937_64 rng(15);
  const std::size_t d = 4;
  std::vector<M> inputs = {oracle::random_matrix(rng, 3, d), oracle::random_matrix(rng, 2, d)};
  for (int k = 0; k < 4; ++k) inputs.push_back(oracle::random_matrix(rng, d, d, 0.5));
  for (int k = 0; k < 3; ++k) inputs.push_back(oracle::random_matrix(rng, 1, d, 0.1));
  // The key bias shifts every score of a query row equally, so its gradient
  // is identically zero; it is held constant here and checked below.
  const M bk = oracle::random_matrix(rng, 1, d, 0.1);
  const auto r = grad_check(
      [&](Tape<double>& t, const std::vector<Var>& in) {
        ag::AttentionVars<double> a{in[2], in[3], in[4], in[5], in[6], t.leaf(bk), in[7], in[8], 2};
        return random_projection(t, ag::multi_head_attention(t, in[0], in[1], a), 4);
      },
      inputs);
  EXPECT_LT(r.max_rel_error, 1e-4);

  Tape<double> t;
  std::vector<Var> in;
  for (const auto& m : inputs) in.push_back(t.leaf(m, true));
  const Var vbk = t.leaf(bk, true);
  ag::AttentionVars<double> a{in[2], in[3], in[4], in[5], in[6], vbk, in[7], in[8], 2};
  t.backward(random_projection(t, ag::multi_head_attention(t, in[0], in[1], a), 4));
  const M gbk = t.grad(vbk);
  for (double g : gbk.data()) EXPECT_LT(std::abs(g), 1e-12);
}

TEST(GradCheck, StructuralOps) {
  std::mt19937_64 rng(16);
  const auto r = grad_check(
      [](Tape<double>& t, const std::vector<Var>& in) {
        Var a = ag::slice_cols(t, in[0], 1, 3);
        Var b = ag::concat_cols(t, {a, in[1]});
        Var c = ag::concat_rows(t, {b, b});
        Var s = ag::matmul_bt(t, c, c);
        return random_projection(t, ag::add(t, ag::scale(t, s, 0.5), s), 5);
      },
      {oracle::random_matrix(rng, 2, 4), oracle::random_matrix(rng, 2, 3)});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Autograd, BackwardRequiresScalar) {
  Tape<double> t;
  Var x = t.leaf(M(2, 2, 1.0), true);
  EXPECT_THROW(t.backward(x), DimensionError);
}

TEST(Autograd, UntouchedLeafHasZeroGrad) {
  Tape<double> t;
  Var x = t.leaf(M{{1.0, 2.0}}, true);
  Var y = t.leaf(M{{5.0}}, true);
  Var out = sum_all(t, x);
  t.backward(out);
  EXPECT_EQ(t.grad(x), (M{{1.0, 1.0}}));
  EXPECT_EQ(t.grad(y), (M{{0.0}}));
}
