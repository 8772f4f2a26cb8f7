#include <gtest/gtest.h>

#include <sstream>

#include "steer/corpus.hpp"

namespace steer {
namespace {

TEST(Tokenize, SplitsTrailingPunctuation) {
  EXPECT_EQ(tokenize("Where are you?"), (TokenSequence{"where", "are", "you", "?"}));
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, KeepsContractions) { EXPECT_EQ(tokenize("I'm hungry"), (TokenSequence{"i'm", "hungry"})); }

TEST(Tokenize, StacksPunctuationAndDropsControlBytes) {
  EXPECT_EQ(tokenize("wait...  really?!"), (TokenSequence{"wait", ".", ".", ".", "really", "?", "!"}));
  EXPECT_EQ(tokenize("a\x01"
                     "b\tc"),
            (TokenSequence{"ab", "c"}));
  for (const auto& t : tokenize(" many   spaces\n here ")) {
    EXPECT_FALSE(t.empty());
    EXPECT_EQ(t.find(' '), std::string::npos);
  }
}

TEST(Vocabulary, ReservedSymbolsComeFirst) {
  Vocabulary v;
  ASSERT_EQ(v.size(), Vocabulary::kReserved);
  EXPECT_EQ(v.word(Vocabulary::kBoundary), "<s>");
  EXPECT_EQ(v.word(Vocabulary::kUnknown), "<unk>");
  EXPECT_EQ(v.word(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.id("never-seen"), Vocabulary::kUnknown);
}

TEST(BuildVocab, ThreeWordsUnderCap) {
  const auto v = build_vocab({{"a", "b"}, {"c", "a"}}, 50000);
  EXPECT_EQ(v.size(), 3 + Vocabulary::kReserved);
}

TEST(BuildVocab, EmptyCorpusHasOnlyReserved) { EXPECT_EQ(build_vocab({}, 10).size(), Vocabulary::kReserved); }

TEST(BuildVocab, CapKeepsMostFrequent) {
  // 60,000 distinct words; the first 50,000 occur twice.
  std::vector<TokenSequence> sentences;
  for (int i = 0; i < 60000; ++i) {
    TokenSequence s{"w" + std::to_string(i)};
    if (i < 50000) s.push_back(s[0]);
    sentences.push_back(s);
  }
  const auto v = build_vocab(sentences, 50000);
  EXPECT_EQ(v.size(), 50000 + Vocabulary::kReserved);
  EXPECT_TRUE(v.contains("w0"));
  EXPECT_TRUE(v.contains("w49999"));
  EXPECT_FALSE(v.contains("w50000"));
}

TEST(BuildVocab, TiesFollowFirstOccurrence) {
  const std::vector<TokenSequence> sentences{{"z", "y", "x"}, {"x", "q"}};
  const auto v = build_vocab(sentences, 3);
  EXPECT_EQ(v.id("x"), Vocabulary::kReserved);
  EXPECT_EQ(v.id("z"), Vocabulary::kReserved + 1);
  EXPECT_EQ(v.id("y"), Vocabulary::kReserved + 2);
  EXPECT_FALSE(v.contains("q"));
  std::ostringstream a, b;
  v.save(a);
  build_vocab(sentences, 3).save(b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(BuildVocab, RejectsZeroCap) { EXPECT_THROW(build_vocab({{"a"}}, 0), std::invalid_argument); }

TEST(Vocabulary, SaveLoadRoundTrip) {
  const auto v = build_vocab({{"hello", "world", "hello"}}, 10);
  std::stringstream buf;
  v.save(buf);
  EXPECT_EQ(buf.str().substr(0, 11), "vocab-v1 5\n");
  EXPECT_EQ(Vocabulary::load(buf), v);
}

TEST(Vocabulary, LoadRejectsBadInput) {
  std::istringstream wrong_magic("vocab-v2 3\n<s>\n<unk>\n<pad>\n");
  EXPECT_THROW(Vocabulary::load(wrong_magic), std::exception);
  std::istringstream truncated("vocab-v1 5\n<s>\n<unk>\n<pad>\nx\n");
  EXPECT_THROW(Vocabulary::load(truncated), std::exception);
}

TEST(Vocabulary, EncodeDecodeRoundTrip) {
  const TokenSequence s{"where", "are", "you", "?"};
  const auto v = build_vocab({s}, 100);
  EXPECT_EQ(v.decode(v.encode(s)), s);
}

TEST(ToBag, CountsWords) {
  const auto v = build_vocab({{"a", "b"}}, 10);
  const auto bag = to_bag({"a", "b", "a"}, v);
  EXPECT_EQ(bag.total, 3u);
  EXPECT_EQ(bag.count(v.id("a")), 2u);
  EXPECT_EQ(bag.count(v.id("b")), 1u);
  EXPECT_EQ(bag.counts.size(), 2u);
}

TEST(ToBag, EmptySequence) {
  const auto bag = to_bag({}, Vocabulary{});
  EXPECT_TRUE(bag.empty());
  EXPECT_EQ(bag.total, 0u);
}

TEST(ToBag, UnknownWordsCountUnderUnk) {
  const auto v = build_vocab({{"a"}}, 10);
  const auto bag = to_bag({"a", "zzz-unseen"}, v);
  EXPECT_EQ(bag.count(v.id("a")), 1u);
  EXPECT_EQ(bag.count(Vocabulary::kUnknown), 1u);
  std::size_t mass = 0;
  for (const auto& [id, c] : bag.counts) mass += c;
  EXPECT_EQ(mass, bag.total);
}

TEST(ReadPairs, TwoLinePairsFile) {
  std::istringstream in("hi there\thello\nhow are you?\tfine .\n");
  const auto data = read_pairs(in, CorpusFormat::kPairs);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data.pairs[1].source, (TokenSequence{"how", "are", "you", "?"}));
  EXPECT_EQ(data.pairs[1].target, (TokenSequence{"fine", "."}));
  EXPECT_FALSE(data.is_monologue());
}

TEST(ReadPairs, MonologueLinksPreviousSentence) {
  std::istringstream in("one.\ntwo.\nthree.\n");
  const auto data = read_pairs(in, CorpusFormat::kMonologue);
  ASSERT_EQ(data.size(), 3u);
  EXPECT_FALSE(data.previous[0].has_value());
  EXPECT_EQ(data.previous[1], std::optional<std::size_t>(0));
  EXPECT_EQ(data.previous[2], std::optional<std::size_t>(1));
}

TEST(ReadPairs, BlankLineStartsNewDocument) {
  std::istringstream in("one\ntwo\n\nthree\n");
  const auto data = read_pairs(in, CorpusFormat::kMonologue);
  ASSERT_EQ(data.size(), 3u);
  EXPECT_FALSE(data.previous[2].has_value());
}

TEST(ReadPairs, TwoTabsReportLine) {
  std::istringstream in("a\tb\nc\td\te\n");
  try {
    read_pairs(in, CorpusFormat::kPairs);
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ReadPairs, MissingTabAndEmptyTarget) {
  std::istringstream no_tab("just text\n");
  EXPECT_THROW(read_pairs(no_tab, CorpusFormat::kPairs), CorpusError);
  std::istringstream empty_target("source\t  \n");
  EXPECT_THROW(read_pairs(empty_target, CorpusFormat::kPairs), CorpusError);
}

TEST(ReadPairs, WriteReadRoundTrip) {
  std::istringstream in("hi there\thello\nx\ty z\n");
  const auto data = read_pairs(in, CorpusFormat::kPairs);
  std::stringstream buf;
  write_pairs(buf, data);
  const auto again = read_pairs(buf, CorpusFormat::kPairs);
  ASSERT_EQ(again.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(again.pairs[i].source, data.pairs[i].source);
    EXPECT_EQ(again.pairs[i].target, data.pairs[i].target);
  }
}

}  // namespace
}  // namespace steer
