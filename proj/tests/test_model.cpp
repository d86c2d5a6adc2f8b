#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"

using namespace dibo;
using namespace dibo::testing;

namespace {

Mat<double> all_logits(const Model<double>& m, const TokenSeq& s) { return m.logits(s); }

}  // namespace

TEST(Forward, BidirectionalSeesSuffix) {
  Rng rng(1);
  const Model<double> m(tiny_config(12), rng);
  TokenSeq s = random_seq(rng, 12, 6, 4);
  s.ids[3] = 1;
  const auto a = all_logits(m, s);
  s.ids[8] = s.ids[8] == 5 ? 6 : 5;
  const auto b = all_logits(m, s);
  EXPECT_GT((a.row(3) - b.row(3)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Forward, CausalPrefixIsBitIdentical) {
  Rng rng(2);
  const Model<double> m(tiny_config(12, AttentionMode::causal), rng);
  TokenSeq s = random_seq(rng, 12, 6, 4);
  const auto a = all_logits(m, s);
  s.ids[8] = s.ids[8] == 5 ? 6 : 5;
  s.ids[9] = s.ids[9] == 5 ? 6 : 5;
  const auto b = all_logits(m, s);
  for (Eigen::Index i = 0; i <= 7; ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) ASSERT_EQ(a(i, j), b(i, j)) << i;
  EXPECT_GT((a.row(8) - b.row(8)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Forward, CausalAndBidirectionalShareParameters) {
  Rng r1(3), r2(3);
  const Model<double> bi(tiny_config(12), r1);
  const Model<double> ca(tiny_config(12, AttentionMode::causal), r2);
  ASSERT_EQ(bi.names(), ca.names());
  for (std::size_t i = 0; i < bi.params().size(); ++i) EXPECT_EQ(bi.params()[i], ca.params()[i]);
  // with one layer the final position reads the same inputs in both modes
  ModelConfig one = tiny_config(12);
  one.n_layers = 1;
  Rng r3(4), r4(4);
  const Model<double> bi1(one, r3);
  one.attention = AttentionMode::causal;
  const Model<double> ca1(one, r4);
  Rng rng(5);
  const TokenSeq s = random_seq(rng, 12, 5, 3);
  EXPECT_EQ(all_logits(bi1, s).row(7), all_logits(ca1, s).row(7));
  EXPECT_NE(all_logits(bi1, s).row(3), all_logits(ca1, s).row(3));
}

TEST(Forward, PadKeysAreInvisible) {
  Rng rng(5);
  const Model<double> m(tiny_config(12), rng);
  TokenSeq s = random_seq(rng, 12, 6, 3);
  s.ids.push_back(0);
  s.roles.push_back(Role::pad);
  s.ids.push_back(0);
  s.roles.push_back(Role::pad);
  std::vector<std::size_t> rows = {0, 4, 8};
  TokenSeq other = s;
  other.ids[9] = 7;
  other.ids[10] = 3;
  const auto a = m.logits(s, rows), b = m.logits(other, rows);
  EXPECT_EQ(a, b);
}

TEST(Forward, ZeroOutputProjectionIsUniform) {
  Rng rng(6);
  Model<double> m(tiny_config(12), rng);
  set_constant_output(m, std::vector<double>(12, 0.0));
  const TokenSeq s = random_seq(rng, 12, 5, 4);
  const MaskingDraw d = make_draw(s, {6}, 1.0, 1);
  EXPECT_NEAR(da_loss(m, s, d), std::log(12.0), 1e-12);
}

TEST(Forward, LengthOverflowIsShapeError) {
  Rng rng(7);
  const Model<double> m(tiny_config(12), rng);
  const TokenSeq s = random_seq(rng, 12, 30, 3);
  try {
    m.logits(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Forward, LogitsFinite) {
  Rng rng(8);
  const Model<float> m(tiny_config(12), rng);
  const TokenSeq s = random_seq(rng, 12, 20, 10);
  EXPECT_TRUE(m.logits(s).allFinite());
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_config(12);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config(12);
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ModelConfig, JsonRoundtripAndUnknownKey) {
  const ModelConfig c = tiny_config(40, AttentionMode::causal);
  const ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  auto j = to_json(c);
  j["dmodel"] = 4;
  EXPECT_THROW(model_config_from_json(j), Error);
}

TEST(Checkpoint, SaveLoadForwardBitIdentical) {
  Rng rng(9);
  const Model<float> m(tiny_config(12), rng);
  std::stringstream buf;
  m.save(buf);
  const Model<float> back = Model<float>::load(buf);
  ASSERT_EQ(back.names(), m.names());
  for (std::size_t i = 0; i < m.params().size(); ++i) ASSERT_EQ(back.params()[i], m.params()[i]);
  const TokenSeq s = random_seq(rng, 12, 10, 5);
  const Mat<float> a = m.logits(s), b = back.logits(s);
  ASSERT_EQ(a.rows(), b.rows());
  for (Eigen::Index k = 0; k < a.size(); ++k)
    ASSERT_EQ(std::bit_cast<std::uint32_t>(a.data()[k]), std::bit_cast<std::uint32_t>(b.data()[k]));
}

TEST(Checkpoint, HeaderAndPayloadLayout) {
  Rng rng(10);
  const Model<float> m(tiny_config(12), rng);
  std::stringstream buf;
  m.save(buf);
  const std::string bytes = buf.str();
  const auto nl = bytes.find('\n');
  const auto header = nlohmann::json::parse(bytes.substr(0, nl));
  EXPECT_EQ(header["format"], "dibo-checkpoint-v1");
  EXPECT_EQ(header["tensors"].size(), m.params().size());
  EXPECT_EQ(bytes.size() - nl - 1, 4 * m.parameter_count());
  // first payload float is tok_emb(0, 0), little-endian
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  const std::uint32_t bits = std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
                             std::uint32_t{p[3]} << 24;
  EXPECT_EQ(std::bit_cast<float>(bits), m.params()[0](0, 0));
}

TEST(Checkpoint, ShapeMismatchAndTruncationRejected) {
  Rng rng(11);
  const Model<float> m(tiny_config(12), rng);
  std::stringstream buf;
  m.save(buf);
  std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(Model<float>::load(cut), Error);
  const auto nl = bytes.find('\n');
  auto header = nlohmann::ordered_json::parse(bytes.substr(0, nl));
  header["tensors"][0]["shape"][0] = 13;
  std::stringstream bad(header.dump() + bytes.substr(nl));
  try {
    Model<float>::load(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Init, LayerNormGainsOnesAndBiasesZero) {
  Rng rng(12);
  const Model<float> m(tiny_config(12), rng);
  for (std::size_t i = 0; i < m.names().size(); ++i) {
    const auto& n = m.names()[i];
    if (n.ends_with("_g")) {
      EXPECT_EQ(m.params()[i], Mat<float>::Ones(m.params()[i].rows(), m.params()[i].cols())) << n;
    }
    if (n.ends_with(".b1") || n == "b_out" || n.ends_with("_b")) {
      EXPECT_EQ(m.params()[i].cwiseAbs().maxCoeff(), 0.0f) << n;
    }
  }
}

TEST(AdamW, ZeroGradientsLeaveParamsUnchanged) {
  Rng rng(13);
  Model<double> m(tiny_config(12), rng);
  const auto before = m.params();
  AdamW<double> opt({}, m.params());
  std::vector<Mat<double>> zeros;
  for (const auto& p : m.params()) zeros.push_back(Mat<double>::Zero(p.rows(), p.cols()));
  opt.step(m.params(), zeros);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(m.params()[i], before[i]);
}

TEST(AdamW, WarmupSchedule) {
  EXPECT_DOUBLE_EQ(warmup_lr(2e-5, 50, 100), 1e-5);
  EXPECT_DOUBLE_EQ(warmup_lr(2e-5, 100, 100), 2e-5);
  EXPECT_DOUBLE_EQ(warmup_lr(2e-5, 5000, 100), 2e-5);
  EXPECT_DOUBLE_EQ(warmup_lr(1.0, 1, 100), 0.01);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  AdamWConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.5;
  c.warmup_steps = 0;
  std::vector<Mat<double>> p = {Mat<double>::Constant(1, 2, 2.0)};
  AdamW<double> opt(c, p);
  std::vector<Mat<double>> g = {Mat<double>(1, 2)};
  g[0] << 0.3, -4.0;
  opt.step(p, g);
  // m_hat = g, v_hat = g^2: update = lr * g / (|g| + eps); decay first
  EXPECT_NEAR(p[0](0, 0), 2.0 * (1 - 0.05) - 0.1 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0](0, 1), 2.0 * (1 - 0.05) + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, NonFiniteGradientIsNumericError) {
  std::vector<Mat<double>> p = {Mat<double>::Zero(1, 1)};
  AdamW<double> opt({}, p);
  std::vector<Mat<double>> g = {Mat<double>::Constant(1, 1, std::nan(""))};
  try {
    opt.step(p, g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(AdamW, MomentShapesMirrorParams) {
  Rng rng(14);
  const Model<float> m(tiny_config(12), rng);
  AdamW<float> opt({}, m.params());
  ASSERT_EQ(opt.first_moments().size(), m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_EQ(opt.first_moments()[i].rows(), m.params()[i].rows());
    EXPECT_EQ(opt.second_moments()[i].cols(), m.params()[i].cols());
  }
}
