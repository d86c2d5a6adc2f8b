#include <gtest/gtest.h>

#include <set>

#include "dibo/vocab.hpp"

using namespace dibo;

namespace {

const Delimiters kTok = Delimiters::for_mode(DelimiterMode::tokens);

std::vector<RenderedExample> corpus(const TaskSpec& t, std::size_t n, std::uint64_t seed) {
  const auto set = TemplateSet::builtin();
  const auto words = TaskText::for_task(t);
  Rng rng(seed);
  std::vector<RenderedExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<LabeledDesign> ctx;
    for (int k = 0; k < 7; ++k) ctx.push_back({random_design(t, rng), rng.uniform(-999, 999)});
    const auto& tmpl = i % 5 == 4 ? set.val[0] : set.train[i % 4];
    out.push_back(render_example(tmpl, t, words, ctx, random_design(t, rng), PromptMode::sft, kTok));
  }
  return out;
}

}  // namespace

TEST(Vocab, DelimitersAndMaskAreSingleIds) {
  const TaskSpec t = tf8_like_task();
  const Vocab v = build_vocab(t, TemplateSet::builtin());
  for (const std::string lit : {"|design-start|", "|design-end|", "|label-start|", "|label-end|"}) {
    const auto ids = v.encode(lit);
    ASSERT_EQ(ids.size(), 1u) << lit;
    EXPECT_EQ(v.token(ids[0]), lit);
  }
  EXPECT_EQ(v.token(v.mask_id()), "[MASK]");
  EXPECT_EQ(v.token(v.pad_id()), "[PAD]");
  EXPECT_TRUE(v.has_delimiter_tokens());
  std::set<int> d(v.delimiter_ids().begin(), v.delimiter_ids().end());
  EXPECT_EQ(d.size(), 4u);
}

TEST(Vocab, BuildIsDeterministic) {
  const TaskSpec t = tf8_like_task();
  EXPECT_EQ(build_vocab(t, TemplateSet::builtin()).tokens(), build_vocab(t, TemplateSet::builtin()).tokens());
}

TEST(Vocab, LabelSegmentationFixture) {
  const Vocab v = build_vocab(tf8_like_task(), TemplateSet::builtin());
  const std::vector<std::string> want = {"+", "0", "0", "0", ".", "0", "1", "8"};
  const auto ids = v.encode("+000.018");
  ASSERT_EQ(ids.size(), want.size());
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(v.token(ids[i]), want[i]);
}

TEST(Vocab, DesignSymbolsAreUnits) {
  const Vocab v = build_vocab(tf8_like_task(), TemplateSet::builtin());
  const auto ids = v.encode("|design-start|['A','C']|design-end|");
  std::vector<std::string> got;
  for (int id : ids) got.push_back(v.token(id));
  EXPECT_EQ(got, (std::vector<std::string>{"|design-start|", "[", "'A'", ",", "'C'", "]", "|design-end|"}));
}

TEST(Vocab, CorpusIsCoveredAndRoundtrips) {
  for (const TaskSpec& t : {tf8_like_task(), sphere_task(8)}) {
    const Vocab v = build_vocab(t, TemplateSet::builtin());
    for (const auto& ex : corpus(t, 1000, 4)) {
      const TokenSeq seq = v.encode(ex.full_text(), ex.prompt_text.size());
      ASSERT_EQ(v.decode(seq), ex.full_text());
      for (int id : seq.ids) ASSERT_NE(id, v.mask_id());
    }
  }
}

TEST(Vocab, ResponseRolesAreTrailingAndContiguous) {
  const TaskSpec t = tf8_like_task();
  const Vocab v = build_vocab(t, TemplateSet::builtin());
  const auto ex = corpus(t, 1, 5).front();
  const TokenSeq seq = v.encode(ex.full_text(), ex.prompt_text.size());
  const auto resp = seq.positions(Role::response);
  ASSERT_FALSE(resp.empty());
  EXPECT_EQ(resp.back(), seq.size() - 1);
  for (std::size_t i = 1; i < resp.size(); ++i) EXPECT_EQ(resp[i], resp[i - 1] + 1);
  EXPECT_EQ(v.decode(std::vector<int>(seq.ids.begin() + static_cast<std::ptrdiff_t>(resp.front()), seq.ids.end())),
            ex.response_text);
}

TEST(Vocab, EmptyResponseRegion) {
  const Vocab v = build_vocab(tf8_like_task(), TemplateSet::builtin());
  const TokenSeq seq = v.encode("Response:\n", 10);
  EXPECT_TRUE(seq.positions(Role::response).empty());
  EXPECT_EQ(seq.positions(Role::prompt).size(), seq.size());
}

TEST(Vocab, ResponseTokenLengthIsConstant) {
  const TaskSpec t = tf8_like_task();
  const Vocab v = build_vocab(t, TemplateSet::builtin());
  Rng rng(6);
  const std::size_t n = v.encode(render_response(t, random_design(t, rng), kTok)).size();
  EXPECT_EQ(n, 19u);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(v.encode(render_response(t, random_design(t, rng), kTok)).size(), n);
  const TaskSpec c = sphere_task(8);
  const Vocab vc = build_vocab(c, TemplateSet::builtin());
  const std::size_t nc = vc.encode(render_response(c, random_design(c, rng), kTok)).size();
  for (int i = 0; i < 500; ++i) EXPECT_EQ(vc.encode(render_response(c, random_design(c, rng), kTok)).size(), nc);
}

TEST(Vocab, UncoverableTextIsEncodingError) {
  const Vocab v = build_vocab(tf8_like_task(), TemplateSet::builtin());
  try {
    v.encode("caf\xc3\xa9");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::encoding);
  }
}

TEST(Vocab, SerializeRoundtripIsExact) {
  const Vocab v = build_vocab(tf8_like_task(), TemplateSet::builtin());
  const std::string s = v.serialize();
  const Vocab back = Vocab::deserialize(s);
  EXPECT_EQ(back.tokens(), v.tokens());
  EXPECT_EQ(back.serialize(), s);
  EXPECT_NE(s.find("\t\\n\n"), std::string::npos);
}

TEST(Vocab, PlainTextModeHasNoDelimiterTokens) {
  const Vocab v = build_vocab(tf8_like_task(), TemplateSet::builtin(), DelimiterMode::plain_text);
  EXPECT_FALSE(v.has_delimiter_tokens());
  EXPECT_EQ(v.id_of("|design-start|"), -1);
  EXPECT_GT(v.encode("|design-start|").size(), 1u);
}

TEST(Vocab, PadToRightPads) {
  const Vocab v = build_vocab(tf8_like_task(), TemplateSet::builtin());
  const TokenSeq seq = pad_to(v.encode("Response:\n", 5), 20, v);
  EXPECT_EQ(seq.size(), 20u);
  EXPECT_EQ(seq.ids.back(), v.pad_id());
  EXPECT_EQ(seq.roles.back(), Role::pad);
  EXPECT_EQ(v.decode(seq), "Response:\n");
  EXPECT_THROW(pad_to(seq, 3, v), Error);
}
