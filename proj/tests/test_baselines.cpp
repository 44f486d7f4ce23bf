#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rgvq/baselines.hpp"
#include "test_util.hpp"

using namespace rgvq;
using testutil::random_matrix;

TEST(Ema, MatchesHandComputedRecursion) {
  Codebook cb{Tensor::from_rows({{0, 0}, {1, 1}, {9, 9}}), Similarity::Euclidean};
  EmaState st = EmaState::for_codebook(cb);
  const Tensor h = Tensor::from_rows({{0.2, 0.4}, {0.4, 0.0}, {1.2, 1.0}});
  const Assignment a{{0, 0, 1}, 3};
  ema_update(cb, st, h, a, 0.9);
  // size_0 = 0.1 * 2, sum_0 = 0.1 * (0.6, 0.4)
  EXPECT_NEAR(st.cluster_size[0], 0.2, 1e-15);
  EXPECT_NEAR(cb.entries(0, 0), 0.06 / (0.2 + 1e-5), 1e-12);
  EXPECT_NEAR(cb.entries(0, 1), 0.04 / (0.2 + 1e-5), 1e-12);
  EXPECT_NEAR(cb.entries(1, 0), 0.12 / (0.1 + 1e-5), 1e-12);
  // never-assigned code keeps its entry
  EXPECT_EQ(cb.entries(2, 0), 9.0);
  ema_update(cb, st, h, a, 0.9);
  EXPECT_NEAR(st.cluster_size[0], 0.9 * 0.2 + 0.2, 1e-15);
  EXPECT_NEAR(cb.entries(0, 0), (0.9 * 0.06 + 0.06) / (0.38 + 1e-5), 1e-12);
  EXPECT_THROW(ema_update(cb, st, h, a, 1.0), ParameterError);
}

TEST(Reset, ReplacesOnlyCodesIdlePastThreshold) {
  Codebook cb{Tensor::from_rows({{0, 0}, {50, 50}, {-50, -50}}), Similarity::Euclidean};
  UsageHistory usage(3);
  const Tensor h = random_matrix(6, 2, 3);
  const Assignment only_zero{{0, 0, 0, 0, 0, 0}, 3};
  usage.record(only_zero);
  EXPECT_TRUE(codebook_reset(cb, usage, h, 2, 1).empty());
  usage.record(only_zero);
  const auto dead = codebook_reset(cb, usage, h, 2, 1);
  EXPECT_EQ(dead, (std::vector<std::size_t>{1, 2}));
  for (std::size_t k : dead) {
    bool is_row = false;
    for (std::size_t i = 0; i < 6; ++i) is_row = is_row || (cb.entries(k, 0) == h(i, 0) && cb.entries(k, 1) == h(i, 1));
    EXPECT_TRUE(is_row) << "code " << k;
    EXPECT_EQ(usage.idle_epochs(k), 0u);
  }
  EXPECT_EQ(cb.entries(0, 0), 0.0);
  EXPECT_NE(cb.entries(1, 0), cb.entries(2, 0));  // distinct rows
  EXPECT_THROW(codebook_reset(cb, usage, h, 0, 1), ParameterError);
}

TEST(Affine, IdentityIsNoOpAndLearnable) {
  const Tensor h = random_matrix(4, 3, 4);
  const AffineParams p = AffineParams::identity(3);
  const Tensor out = affine_adapt(h, p);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(out.values()[i], h.values()[i]);
  backward(sum(affine_adapt(h, p)));
  for (std::size_t t = 0; t < 3; ++t) {
    double col = 0.0;
    for (std::size_t i = 0; i < 4; ++i) col += h(i, t);
    EXPECT_NEAR(p.scale.grad_values()[t], col, 1e-14);
    EXPECT_EQ(p.shift.grad_values()[t], 4.0);
  }
}

TEST(SimVq, IdentityProjectionReproducesBasis) {
  const Tensor basis = random_matrix(5, 3, 5);
  const SimVqParams p = SimVqParams::from_basis(basis);
  const Tensor c = simvq_project(p.basis, p.proj);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c.values()[i], basis.values()[i]);
  EXPECT_FALSE(p.basis.requires_grad());
  EXPECT_THROW(simvq_project(basis, Tensor::identity(2)), DimensionError);
}

TEST(SimVq, SelectingOneRowMovesEveryCodeword) {
  const SimVqParams p = SimVqParams::from_basis(random_matrix(4, 3, 6));
  const std::vector<std::size_t> pick{0};
  backward(sum(gather_rows(simvq_project(p.basis, p.proj), pick)));
  double norm = 0.0;
  for (double g : p.proj.grad_values()) norm += g * g;
  ASSERT_GT(norm, 0.0);
  // after a step along -grad the product changes in every row
  Tensor moved = p.proj.detach();
  for (std::size_t i = 0; i < moved.size(); ++i) moved.mutable_values()[i] -= 0.1 * p.proj.grad_values()[i];
  const Tensor before = simvq_project(p.basis, p.proj), after = simvq_project(p.basis, moved);
  for (std::size_t k = 0; k < 4; ++k) {
    double diff = 0.0;
    for (std::size_t t = 0; t < 3; ++t) diff += std::abs(after(k, t) - before(k, t));
    EXPECT_GT(diff, 0.0) << "row " << k;
  }
}

TEST(Pretrain, ReconstructionLossDecreases) {
  SbmSpec spec;
  spec.blocks = 2;
  spec.nodes_per_block = 15;
  spec.feature_dim = 8;
  spec.seed = 2;
  const Graph g = generate_sbm(spec);
  EncoderParams enc = init_encoder({8, 8}, 1);
  DecoderParams dec = init_decoder(8, 8, 2);
  PretrainConfig cfg;
  cfg.epochs = 40;
  cfg.optimizer.lr = 1e-2;
  const auto hist = pretrain_encoder(g, enc, dec, cfg);
  ASSERT_EQ(hist.size(), 40u);
  EXPECT_LT(hist.back(), 0.5 * hist.front());
}

TEST(MitigationConfig, Validation) {
  MitigationConfig c;
  EXPECT_NO_THROW(c.validate());
  c.ema_decay = 0.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.dead_threshold = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  EXPECT_STREQ(to_string(MitigationKind::SimVq), "simvq");
}
