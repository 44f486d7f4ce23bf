#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "rgvq/graph.hpp"
#include "rgvq/linalg.hpp"
#include "test_util.hpp"

using namespace rgvq;
using testutil::random_matrix;
using testutil::TempDir;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
  return m;
}

std::size_t eigen_pca95(const Tensor& x) {
  const Eigen::MatrixXd m = to_eigen(x);
  const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  std::vector<double> ev(solver.eigenvalues().data(), solver.eigenvalues().data() + cov.rows());
  std::sort(ev.rbegin(), ev.rend());
  double total = 0.0;
  for (double e : ev) total += std::max(e, 0.0);
  double acc = 0.0;
  for (std::size_t k = 0; k < ev.size(); ++k) {
    acc += std::max(ev[k], 0.0);
    if (acc >= 0.95 * total * (1.0 - 1e-12)) return k + 1;
  }
  return ev.size();
}

}  // namespace

TEST(Graph, MakeGraphSymmetrizesAndDropsDuplicates) {
  const Graph g = make_graph(4, {{0, 1}, {1, 0}, {0, 1}, {2, 2}, {3, 1}}, Tensor(4, 2));
  EXPECT_EQ(g.edge_count(), 2u);
  EXPECT_TRUE(g.has_edge(0, 1));
  EXPECT_TRUE(g.has_edge(1, 0));
  EXPECT_TRUE(g.has_edge(1, 3));
  EXPECT_FALSE(g.has_edge(2, 2));
  EXPECT_EQ(g.degree(1), 2u);
  EXPECT_EQ(g.degree(2), 0u);
  EXPECT_EQ(g.max_degree(), 2u);
  EXPECT_THROW(make_graph(3, {{0, 3}}, Tensor(3, 1)), DimensionError);
  EXPECT_THROW(make_graph(3, {}, Tensor(2, 1)), DimensionError);
}

TEST(Graph, TriangleStatistics) {
  const Graph g = make_graph(3, {{0, 1}, {1, 2}, {2, 0}}, Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}}));
  EXPECT_EQ(g.n, 3u);
  EXPECT_EQ(g.edge_count(), 3u);
  EXPECT_DOUBLE_EQ(avg_degree(g), 2.0);
  EXPECT_EQ(pca95(g.features).components, eigen_pca95(g.features));
}

TEST(Graph, SaveAndLoadRoundTrip) {
  TempDir dir;
  const Graph g = generate_sbm({.blocks = 3, .nodes_per_block = 10, .p_in = 0.4, .p_out = 0.05, .feature_dim = 5, .seed = 3});
  save_graph(g, dir.file("e.txt"), dir.file("x.csv"));
  LoadOptions raw;
  raw.normalize_features = false;
  const Graph h = load_graph(dir.file("e.txt"), dir.file("x.csv"), std::nullopt, raw);
  EXPECT_EQ(h.n, g.n);
  EXPECT_EQ(h.offsets, g.offsets);
  EXPECT_EQ(h.neighbors, g.neighbors);
  for (std::size_t i = 0; i < g.features.size(); ++i) EXPECT_EQ(h.features.values()[i], g.features.values()[i]);
  EXPECT_EQ(dataset_hash(h), dataset_hash(g));
}

TEST(Graph, LoaderRejectsMalformedInput) {
  TempDir dir;
  const auto x = dir.write("x.csv", "1,2\n3,4\n5,6\n");
  EXPECT_THROW(load_graph(dir.write("a.txt", "0 1\n1 7\n"), x), FormatError);
  EXPECT_THROW(load_graph(dir.write("b.txt", "0 one\n"), x), FormatError);
  EXPECT_THROW(load_graph(dir.write("c.txt", "0 1 2\n"), x), FormatError);
  EXPECT_THROW(load_graph(dir.write("d.txt", "0 1\n"), dir.write("y.csv", "1,2\n3\n")), FormatError);
  EXPECT_THROW(load_graph(dir.write("e.txt", "0 1\n"), dir.write("z.csv", "1,abc\n")), FormatError);
  EXPECT_THROW(load_graph(dir.file("missing.txt"), x), FormatError);
  EXPECT_THROW(load_graph(dir.write("f.txt", "0 1\n"), x, dir.write("l.txt", "0\n1\n")), FormatError);
  const Graph ok = load_graph(dir.write("g.txt", "# comment\n0 1\n\n1 2 # trailing\n"), x, dir.write("m.txt", "0\n1\n1\n"));
  EXPECT_EQ(ok.edge_count(), 2u);
  ASSERT_TRUE(ok.labels.has_value());
  EXPECT_EQ((*ok.labels)[2], 1);
  // rows are unit length after default normalization
  EXPECT_NEAR(ok.features(0, 0) * ok.features(0, 0) + ok.features(0, 1) * ok.features(0, 1), 1.0, 1e-12);
}

TEST(Graph, SbmIsDeterministicAndPlanted) {
  SbmSpec spec;
  spec.seed = 11;
  const Graph a = generate_sbm(spec), b = generate_sbm(spec);
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  spec.seed = 12;
  EXPECT_NE(dataset_hash(generate_sbm(spec)), dataset_hash(a));

  ASSERT_TRUE(a.labels.has_value());
  std::size_t in = 0, out = 0;
  for (std::size_t u = 0; u < a.n; ++u)
    for (std::size_t v : a.neighbors_of(u))
      if (u < v) ((*a.labels)[u] == (*a.labels)[v] ? in : out)++;
  const double in_pairs = 5.0 * 60.0 * 59.0 / 2.0, out_pairs = 300.0 * 299.0 / 2.0 - in_pairs;
  // binomial 4-sigma windows
  EXPECT_NEAR(in / in_pairs, 0.5, 4.0 * std::sqrt(0.25 / in_pairs));
  EXPECT_NEAR(out / out_pairs, 0.01, 4.0 * std::sqrt(0.0099 / out_pairs));
}

TEST(Graph, SbmValidation) {
  SbmSpec bad;
  bad.p_in = 1.5;
  EXPECT_THROW(generate_sbm(bad), ParameterError);
  bad = {};
  bad.redundancy = -0.1;
  EXPECT_THROW(generate_sbm(bad), ParameterError);
}

TEST(Graph, FullRedundancyBoundsPca95ByBlocks) {
  SbmSpec spec;
  spec.redundancy = 1.0;
  spec.seed = 5;
  EXPECT_LE(pca95(generate_sbm(spec).features).components, spec.blocks);
}

TEST(Graph, Pca95MatchesEigenOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SbmSpec spec;
    spec.redundancy = 0.2 * static_cast<double>(seed);
    spec.seed = seed;
    const Tensor x = generate_sbm(spec).features;
    EXPECT_EQ(pca95(x).components, eigen_pca95(x)) << "seed " << seed;
  }
  const Tensor constant(10, 3, 2.0);
  EXPECT_TRUE(pca95(constant).zero_variance);
  EXPECT_THROW(pca95(Tensor(1, 3)), ContractError);
}

TEST(Linalg, EigenvaluesMatchEigen) {
  const Tensor a = random_matrix(6, 6, 21);
  std::vector<double> sym(36);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) sym[i * 6 + j] = a(i, j) + a(j, i);
  const auto ours = symmetric_eigenvalues(sym, 6);
  Eigen::Map<Eigen::Matrix<double, 6, 6, Eigen::RowMajor>> m(sym.data());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver{Eigen::MatrixXd(m)};
  std::vector<double> ref(solver.eigenvalues().data(), solver.eigenvalues().data() + 6);
  std::sort(ref.rbegin(), ref.rend());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(ours[i], ref[i], 1e-10);
}

TEST(Linalg, SpectralNormMatchesSvd) {
  const Tensor w = random_matrix(7, 4, 22);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(w));
  EXPECT_NEAR(spectral_norm(w), svd.singularValues()(0), 1e-8);
}

TEST(Linalg, SpearmanAndRanks) {
  EXPECT_EQ(average_ranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  EXPECT_NEAR(spearman({1, 2, 3, 4, 5}, {2, 4, 6, 8, 100}), 1.0, 1e-15);
  EXPECT_NEAR(spearman({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}), -1.0, 1e-15);
  // textbook: d = (0, -1, 1, 0, 0) -> 1 - 6*2 / (5*24) = 0.9
  EXPECT_NEAR(spearman({1, 2, 3, 4, 5}, {1, 3, 2, 4, 5}), 0.9, 1e-12);
  EXPECT_TRUE(std::isnan(spearman({1, 2, 3}, {4, 4, 4})));
  EXPECT_TRUE(std::isnan(spearman({1}, {2})));
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}
