#include <gtest/gtest.h>

#include <cmath>

#include "ridgematch/checkpoint.hpp"
#include "ridgematch/optim.hpp"
#include "support/temp_dir.hpp"

using namespace ridgematch;
using testutil::TempDir;

namespace {

ParamStore<double> one(double v) {
  ParamStore<double> p;
  p.add("x", Matrix<double>(1, 1, v));
  return p;
}

Checkpoint small_checkpoint(bool with_fusion) {
  Checkpoint c;
  c.encoder.image_size = 8;
  c.encoder.patch_size = 4;
  c.encoder.width = 8;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.mlp_hidden = 6;
  c.encoder.head_hidden = 5;
  c.encoder.embed_dim = 4;
  c.fusion.width = 8;
  c.fusion.heads = 2;
  c.fusion.mlp_hidden = 6;
  c.seed = 17;
  c.epochs = 3;
  c.loss_trace = {0.5, 0.25, 0.1 + 1e-17};
  c.encoder_params = init_encoder<float>(c.encoder, 3);
  if (with_fusion) {
    c.stage = 2;
    c.fusion_params = init_fusion<float>(c.fusion, 4);
  }
  return c;
}

}  // namespace

TEST(AdamW, FirstStepIsSignOfGradient) {
  for (double g : {3.0, -0.02, 1e-3}) {
    auto p = one(1.0);
    auto st = make_optimizer(p, 0.0);
    adamw_step(p, one(g), st, 0.01);
    EXPECT_NEAR(p.get("x")[0], 1.0 - 0.01 * (g > 0 ? 1 : -1), 1e-6);
    EXPECT_EQ(st.step, 1u);
  }
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  auto p = one(0.7);
  auto st = make_optimizer(p, 0.0);
  adamw_step(p, one(0.0), st, 0.1);
  EXPECT_EQ(p.get("x")[0], 0.7);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, WeightDecayShrinksWithZeroGradient) {
  auto p = one(-2.0);
  auto st = make_optimizer(p, 0.1);
  double prev = 2.0;
  for (int i = 0; i < 5; ++i) {
    adamw_step(p, one(0.0), st, 0.1);
    EXPECT_LT(std::abs(p.get("x")[0]), prev);
    prev = std::abs(p.get("x")[0]);
  }
}

TEST(AdamW, DescendsQuadraticBowl) {
  ParamStore<double> p;
  p.add("w", Matrix<double>{{3.0, -1.0, 0.5}});
  const Matrix<double> c{{1.0, 2.0, -1.0}};
  auto objective = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += (p.get("w")[i] - c[i]) * (p.get("w")[i] - c[i]) * (i + 1.0);
    return s;
  };
  auto st = make_optimizer(p, 0.0);
  double prev = objective();
  for (int step = 0; step < 10; ++step) {
    ParamStore<double> g;
    Matrix<double> gm(1, 3);
    for (std::size_t i = 0; i < 3; ++i) gm[i] = 2.0 * (i + 1.0) * (p.get("w")[i] - c[i]);
    g.add("w", gm);
    adamw_step(p, g, st, 0.05);
    const double now = objective();
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(AdamW, RejectsBadGradients) {
  auto p = one(1.0);
  auto st = make_optimizer(p, 0.0);
  try {
    adamw_step(p, one(std::nan("")), st, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
  }
  EXPECT_EQ(p.get("x")[0], 1.0);
  ParamStore<double> wrong;
  wrong.add("x", Matrix<double>(2, 1));
  EXPECT_THROW(adamw_step(p, wrong, st, 0.1), DimensionError);
  EXPECT_THROW(adamw_step(p, one(1.0), st, -1.0), ConfigError);
}

TEST(ClipGradNorm, RescalesOnlyAboveLimit) {
  ParamStore<double> g;
  g.add("a", Matrix<double>{{3.0, 4.0}});
  EXPECT_EQ(clip_grad_norm(g, 10.0), 5.0);
  EXPECT_EQ(g.get("a")[0], 3.0);
  EXPECT_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.get("a")[0], 0.6, 1e-15);
  EXPECT_NEAR(g.get("a")[1], 0.8, 1e-15);
}

TEST(LrSchedule, Milestones) {
  EXPECT_EQ(lr_schedule(29, 1e-5, {30}, 0.3), 1e-5);
  EXPECT_NEAR(lr_schedule(30, 1e-5, {30}, 0.3), 3e-6, 1e-20);
  EXPECT_NEAR(lr_schedule(90, 2.0, {30, 60}, 0.5), 0.5, 1e-15);
  double prev = 1.0;
  for (std::size_t e = 0; e < 100; ++e) {
    const double lr = lr_schedule(e, 1.0, {10, 50, 70}, 0.6);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Checkpoint, BitwiseRoundTrip) {
  TempDir dir;
  for (bool fusion : {false, true}) {
    const Checkpoint c = small_checkpoint(fusion);
    save_checkpoint(dir / "c.bin", c);
    const Checkpoint back = load_checkpoint(dir / "c.bin");
    EXPECT_EQ(back.stage, c.stage);
    EXPECT_EQ(back.encoder, c.encoder);
    EXPECT_EQ(back.fusion, c.fusion);
    EXPECT_EQ(back.loss, c.loss);
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.loss_trace, c.loss_trace);
    EXPECT_EQ(back.encoder_params, c.encoder_params);
    EXPECT_EQ(back.fusion_params, c.fusion_params);
    EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
    EXPECT_FALSE(std::filesystem::exists(dir / "c.bin.tmp"));
  }
}

TEST(Checkpoint, RejectsCorruptInput) {
  const std::string good = serialize_checkpoint(small_checkpoint(true));
  EXPECT_THROW(parse_checkpoint("not a checkpoint\n"), ParseError);
  std::string v2 = good;
  v2.replace(v2.find(" 1\n"), 3, " 2\n");
  try {
    parse_checkpoint(v2);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  EXPECT_THROW(parse_checkpoint(good.substr(0, good.size() - 4)), ParseError);
  EXPECT_THROW(parse_checkpoint(good + "x"), ParseError);
  EXPECT_THROW(parse_checkpoint(good.substr(0, 40)), ParseError);
  std::string bad_width = good;
  bad_width.replace(bad_width.find("encoder.width=8"), 15, "encoder.width=4");
  EXPECT_THROW(parse_checkpoint(bad_width), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt"), DataError);
}
