#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "rgvq/config.hpp"
#include "test_util.hpp"

using namespace rgvq;

namespace {

TrainConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

}  // namespace

TEST(Config, ParsesEverySection) {
  const TrainConfig c = parse(R"(
[config]
version = 1
preset = desk

[data]
blocks = 4
nodes_per_block = 25
p_in = 0.6
redundancy = 0.95

[model]
hidden = 32, 16
codebook_size = 128
similarity = cosine
codebook_init = kmeans

[method]
method = rgvq
mitigation = ema
tau = 0.5

[contrastive]
k_c = 10
m_samples = 50
negatives = per_anchor
reduction = sum

[loss]
w_feat = 50
w_ortho = 0

[optim]
lr = 0.01

[train]
epochs = 7
seed = 3
)");
  EXPECT_EQ(c.sbm.blocks, 4u);
  EXPECT_EQ(c.sbm.nodes_per_block, 25u);
  EXPECT_DOUBLE_EQ(c.sbm.p_in, 0.6);
  EXPECT_EQ(c.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(c.codebook_size, 128u);
  EXPECT_EQ(c.similarity, Similarity::Cosine);
  EXPECT_EQ(c.codebook_init, CodebookInit::KMeans);
  EXPECT_EQ(c.method, Method::Rgvq);
  EXPECT_EQ(c.mitigation.kind, MitigationKind::Ema);
  EXPECT_DOUBLE_EQ(c.tau, 0.5);
  EXPECT_EQ(c.contrastive.k_c, 10u);
  EXPECT_EQ(c.contrastive.negative_mode, NegativeMode::PerAnchor);
  EXPECT_EQ(c.infonce.reduction, Reduction::Sum);
  EXPECT_DOUBLE_EQ(c.weights.feature, 50.0);
  EXPECT_DOUBLE_EQ(c.weights.ortho, 0.0);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 0.01);
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.seed, 3u);
  // untouched keys keep the preset
  EXPECT_DOUBLE_EQ(c.sbm.p_out, desk_preset().sbm.p_out);
}

TEST(Config, PaperPresetFollowsPublishedProtocol) {
  const TrainConfig p = parse("[config]\nversion = 1\npreset = paper\n");
  EXPECT_EQ(p.hidden, (std::vector<std::size_t>{256, 256}));
  EXPECT_EQ(p.codebook_size, 512u);
  EXPECT_DOUBLE_EQ(p.optimizer.lr, 1e-4);
  EXPECT_DOUBLE_EQ(p.optimizer.weight_decay, 1e-5);
  EXPECT_EQ(p.epochs, 100u);
  EXPECT_EQ(p.similarity, Similarity::Cosine);
  const LossWeights w = p.weights;
  EXPECT_DOUBLE_EQ(w.link, 0.01);
  EXPECT_DOUBLE_EQ(w.feature, 100.0);
  EXPECT_DOUBLE_EQ(w.reg, 1.0);
  EXPECT_DOUBLE_EQ(w.commitment, 0.1);
  EXPECT_DOUBLE_EQ(w.vocabulary, 0.9);
  EXPECT_DOUBLE_EQ(w.ortho, 0.1);
  EXPECT_DOUBLE_EQ(p.effective_weights().reg, 0.0);  // vanilla by default
}

TEST(Config, DeskPresetIsSmall) {
  const TrainConfig d = desk_preset();
  EXPECT_EQ(d.sbm.blocks * d.sbm.nodes_per_block, 300u);
  EXPECT_EQ(d.codebook_size, 64u);
  EXPECT_EQ(d.hidden, (std::vector<std::size_t>{64, 64}));
  EXPECT_THROW(preset("huge"), ConfigError);
}

TEST(Config, RejectsBadFiles) {
  EXPECT_THROW(parse("[model]\ncodebook_size = 3\n"), ConfigError);
  EXPECT_THROW(parse("[config]\nversion = 2\n"), ConfigError);
  EXPECT_THROW(parse("[config]\nversion = 1\n[model]\nwidth = 3\n"), ConfigError);
  EXPECT_THROW(parse("[config]\nversion = 1\n[model]\ncodebook_size = many\n"), ConfigError);
  EXPECT_THROW(parse("[config]\nversion = 1\n[model]\ncodebook_size = -4\n"), ConfigError);
  EXPECT_THROW(parse("[config]\nversion = 1\n[method]\nmethod = magic\n"), ConfigError);
  EXPECT_THROW(parse("[config]\nversion = 1\nextra = 2\n"), ConfigError);
  EXPECT_THROW(parse("[config\nversion = 1\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST(Config, OverridesAndValidation) {
  TrainConfig c = desk_preset();
  apply_override(c, "loss.w_reg = 2.5");
  EXPECT_DOUBLE_EQ(c.weights.reg, 2.5);
  apply_override(c, "train.record_timing=true");
  EXPECT_TRUE(c.record_timing);
  EXPECT_THROW(apply_override(c, "loss.w_reg"), ConfigError);
  EXPECT_THROW(apply_override(c, "loss.nothing=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.record_timing=maybe"), ConfigError);

  TrainConfig bad = desk_preset();
  bad.weights.link = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = desk_preset();
  bad.optimizer.lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = desk_preset();
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = desk_preset();
  bad.source = DataSource::Files;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = desk_preset();
  bad.method = Method::Rgvq;
  bad.contrastive.m_samples = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = desk_preset();
  bad.sbm.p_in = 2.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_NO_THROW(desk_preset().validate());
}

TEST(Config, LoadsFromFile) {
  testutil::TempDir dir;
  const auto path = dir.write("run.ini", "[config]\nversion = 1\n[train]\nepochs = 3\n");
  EXPECT_EQ(load_config(path).epochs, 3u);
}
