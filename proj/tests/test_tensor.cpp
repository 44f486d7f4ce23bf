#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "rgvq/gradcheck.hpp"
#include "rgvq/tensor.hpp"
#include "test_util.hpp"

using namespace rgvq;
using testutil::random_matrix;

TEST(Tensor, ConstructionAndShape) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), DimensionError);
  EXPECT_THROW(t.item(), ContractError);
  EXPECT_EQ(Tensor::scalar(4.5).item(), 4.5);
}

TEST(Tensor, MatmulMatchesNaiveLoops) {
  const Tensor a = random_matrix(5, 4, 1), b = random_matrix(4, 3, 2);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-14);
    }
  EXPECT_THROW(matmul(a, a), DimensionError);
}

TEST(Tensor, ElementwiseShapeMismatchThrows) {
  EXPECT_THROW(add(Tensor(2, 3), Tensor(3, 2)), DimensionError);
  EXPECT_THROW(add_row_vector(Tensor(2, 3), Tensor(1, 2)), DimensionError);
}

TEST(Tensor, SoftmaxMatchesDirectFormula) {
  const Tensor x = random_matrix(3, 6, 3, -4, 4);
  for (double tau : {1.0, 0.3}) {
    const Tensor p = softmax_rows(x, tau);
    const Tensor lp = log_softmax_rows(x);
    for (std::size_t i = 0; i < 3; ++i) {
      double z = 0.0, z1 = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        z += std::exp(x(i, j) / tau);
        z1 += std::exp(x(i, j));
      }
      double row = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_NEAR(p(i, j), std::exp(x(i, j) / tau) / z, 1e-14);
        EXPECT_NEAR(lp(i, j), x(i, j) - std::log(z1), 1e-13);
        row += p(i, j);
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
  }
}

TEST(Tensor, SoftmaxIsStableForLargeLogits) {
  const Tensor p = softmax_rows(Tensor::from_rows({{1000.0, 999.0}}));
  EXPECT_TRUE(std::isfinite(p(0, 0)));
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Tensor, PairwiseSquaredDistanceMatchesNaive) {
  const Tensor a = random_matrix(4, 3, 4), b = random_matrix(5, 3, 5);
  const Tensor d = pairwise_sq_dist(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 3; ++t) s += (a(i, t) - b(j, t)) * (a(i, t) - b(j, t));
      EXPECT_NEAR(d(i, j), s, 1e-13);
    }
}

TEST(Tensor, SegmentLogSumExpMatchesNaive) {
  const Tensor v = random_matrix(6, 1, 6, -3, 3);
  const std::vector<std::size_t> off{0, 2, 3, 6};
  const Tensor r = segment_logsumexp(v, off);
  ASSERT_EQ(r.rows(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    double acc = 0.0;
    for (std::size_t i = off[s]; i < off[s + 1]; ++i) acc += std::exp(v(i, 0));
    EXPECT_NEAR(r(s, 0), std::log(acc), 1e-13);
  }
  const std::vector<std::size_t> bad{0, 2, 2, 6};
  EXPECT_THROW(segment_logsumexp(v, bad), ContractError);
}

TEST(Tensor, SparseAggregateMatchesNaive) {
  // 0-1, 0-2, 1-2, node 3 isolated
  const std::vector<std::size_t> off{0, 2, 4, 6, 6};
  const std::vector<std::size_t> nbr{1, 2, 0, 2, 0, 1};
  const Tensor h = random_matrix(4, 2, 7);
  const Tensor mean_agg = sparse_aggregate(h, off, nbr, Aggregator::Mean);
  const Tensor sum_agg = sparse_aggregate(h, off, nbr, Aggregator::Sum);
  const Tensor max_agg = sparse_aggregate(h, off, nbr, Aggregator::Max);
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0, m = -1e300;
      for (std::size_t e = off[v]; e < off[v + 1]; ++e) {
        s += h(nbr[e], j);
        m = std::max(m, h(nbr[e], j));
      }
      EXPECT_NEAR(sum_agg(v, j), s, 1e-15);
      EXPECT_NEAR(mean_agg(v, j), s / 2.0, 1e-15);
      EXPECT_EQ(max_agg(v, j), m);
    }
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(mean_agg(3, j), 0.0);
    EXPECT_EQ(max_agg(3, j), 0.0);
  }
}

TEST(Tensor, RowNormalizeLeavesZeroRowsAtZero) {
  const Tensor r = row_normalize(Tensor::from_rows({{3, 4}, {0, 0}}));
  EXPECT_NEAR(r(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(r(0, 1), 0.8, 1e-15);
  EXPECT_EQ(r(1, 0), 0.0);
  EXPECT_EQ(r(1, 1), 0.0);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  Tensor x = random_matrix(3, 2, 8).set_requires_grad(true);
  backward(sum(add(mul(x, x), x)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad_values()[i], 2.0 * x.values()[i] + 1.0, 1e-15);
}

TEST(Autodiff, DiamondGraphVisitsEachNodeOnce) {
  Tensor x = Tensor::scalar(1.5).set_requires_grad(true);
  const Tensor y = scale(x, 2.0);
  const Tensor z = add(mul(y, y), y);  // 4x^2 + 2x
  backward(z);
  EXPECT_NEAR(x.grad_values()[0], 8.0 * 1.5 + 2.0, 1e-14);
}

TEST(Autodiff, BackwardContracts) {
  Tensor x = random_matrix(2, 2, 9).set_requires_grad(true);
  EXPECT_THROW(backward(x), ContractError);
  EXPECT_THROW(backward(sum(random_matrix(2, 2, 10))), ContractError);
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  Tensor x = random_matrix(2, 2, 11).set_requires_grad(true);
  {
    NoGradGuard guard;
    const Tensor y = sum(mul(x, x));
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
  }
  EXPECT_TRUE(sum(x).requires_grad());
}

TEST(Autodiff, StopGradientBlocksFlow) {
  Tensor x = random_matrix(2, 2, 12).set_requires_grad(true);
  backward(add(sum(x), sum(mul(stop_gradient(x), x))));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad_values()[i], 1.0 + x.values()[i], 1e-15);
}

TEST(Autodiff, StraightThroughPassesGradientUnchanged) {
  Tensor h = random_matrix(3, 2, 13).set_requires_grad(true);
  Tensor q = random_matrix(3, 2, 14).set_requires_grad(true);
  const Tensor w = random_matrix(3, 2, 15);
  const Tensor z = straight_through(h, q);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z.values()[i], q.values()[i]);
  backward(sum(mul(z, w)));
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h.grad_values()[i], w.values()[i]);
  for (double g : q.grad_values()) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, FiniteDifferenceCheckRejectsNonLeaf) {
  Tensor x = random_matrix(2, 2, 16).set_requires_grad(true);
  EXPECT_THROW(finite_diff_check([](const Tensor& t) { return sum(t); }, scale(x, 2.0)), ContractError);
}

TEST(Autodiff, FiniteDifferenceCheckDetectsWrongGradient) {
  // Analytic side differentiates sum(x), numeric side 2 * sum(x).
  Tensor x = random_matrix(2, 2, 17).set_requires_grad(true);
  const double err = finite_diff_check([](const Tensor& t) { return sum(t); }, [](const Tensor& t) { return scale(sum(t), 2.0); }, x);
  EXPECT_NEAR(err, 1.0 / 3.0, 1e-6);
}

TEST(Autodiff, EveryDifferentiableOpMatchesFiniteDifferences) {
  const auto rows = run_gradcheck_suite(3);
  ASSERT_GT(rows.size(), 40u);
  for (const auto& r : rows) EXPECT_TRUE(r.pass()) << r.name << " rel err " << r.max_rel_error;
}
