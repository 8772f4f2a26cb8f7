#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "steer/topic_hints.hpp"

namespace steer::hints {
namespace {

using cg::Extent;

TokenSequence words(const char* text) { return tokenize(text); }

TEST(InvertedIndex, EmptyIndexFindsNothing) {
  const auto index = InvertedIndex::build({});
  EXPECT_TRUE(index.empty());
  EXPECT_TRUE(index.search(words("anything at all")).empty());
}

TEST(InvertedIndex, SingleSentenceIsRetrieved) {
  const auto index = InvertedIndex::build({words("the cat sat")});
  const auto hits = index.search(words("cat"));
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].doc, 0u);
  EXPECT_GT(hits[0].score, 0.0);
}

TEST(InvertedIndex, DuplicateSentencesKeepDistinctIds) {
  const auto index = InvertedIndex::build({words("red fish"), words("blue sky"), words("red fish")});
  const auto hits = index.search(words("red fish"));
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].doc, 0u);
  EXPECT_EQ(hits[1].doc, 2u);
  EXPECT_DOUBLE_EQ(hits[0].score, hits[1].score);
  EXPECT_EQ(index.document_frequency("red"), 2u);
}

TEST(InvertedIndex, NoOverlapGivesNoHits) {
  const auto index = InvertedIndex::build({words("red fish"), words("blue sky")});
  EXPECT_TRUE(index.search(words("green grass")).empty());
  EXPECT_TRUE(index.search({}).empty());
}

TEST(InvertedIndex, ExactDuplicateRanksFirst) {
  const auto index = InvertedIndex::build(
      {words("we went to the beach"), words("the beach was cold today"), words("to the shops we went later")});
  const auto hits = index.search(words("the beach was cold today"));
  ASSERT_FALSE(hits.empty());
  EXPECT_EQ(hits[0].doc, 1u);
  EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_LE(hits[i].score, hits[i - 1].score);
}

TEST(InvertedIndex, IdfAndCosineByHand) {
  const auto index = InvertedIndex::build({words("a b"), words("a c")});
  EXPECT_NEAR(index.idf("a"), std::log(2.0), 1e-15);
  EXPECT_NEAR(index.idf("b"), std::log(3.0), 1e-15);
  EXPECT_EQ(index.idf("zzz"), 0.0);
  const double ia = std::log(2.0), ib = std::log(3.0);
  const auto hits = index.search(words("a"));
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_NEAR(hits[0].score, ia / std::sqrt(ia * ia + ib * ib), 1e-12);
}

TEST(InvertedIndex, AtMostKResults) {
  std::vector<TokenSequence> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back({"shared", "w" + std::to_string(i)});
  const auto index = InvertedIndex::build(corpus);
  EXPECT_EQ(index.search({"shared"}).size(), 10u);
  EXPECT_EQ(index.search({"shared"}, 3).size(), 3u);
  EXPECT_THROW(index.search({"shared"}, 0), std::invalid_argument);
}

TEST(InvertedIndex, SaveLoadRoundTrip) {
  const auto index = InvertedIndex::build({words("hello there"), words("general kenobi"), words("hello again")});
  std::stringstream buf;
  index.save(buf);
  EXPECT_EQ(buf.str().substr(0, 9), "idx-v1 3\n");
  const auto back = InvertedIndex::load(buf);
  EXPECT_EQ(back.sentences(), index.sentences());
  const auto a = index.search(words("hello"));
  const auto b = back.search(words("hello"));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].doc, b[i].doc);
    EXPECT_EQ(a[i].score, b[i].score);
  }
  std::istringstream bad("idx-v9 1\n");
  EXPECT_THROW(InvertedIndex::load(bad), std::exception);
}

// Vocabulary whose word "w<i>" has id i.
Vocabulary numbered_vocab(std::size_t size) {
  Vocabulary v;
  for (std::size_t i = Vocabulary::kReserved; i < size; ++i) v.add("w" + std::to_string(i));
  return v;
}

TokenSequence bag_words(const Bag& bag) {
  TokenSequence out;
  for (const auto& [id, n] : bag.counts) {
    if (id < Vocabulary::kReserved) continue;
    for (std::size_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(id));
  }
  return out;
}

TEST(HintPosterior, LengthAndEmptyHint) {
  const auto vocab = numbered_vocab(20);
  const cg::CountingGrid grid(cg::random_model({32, 32}, {5, 5}, vocab.size(), 1));
  const auto p = hint_posterior(grid, vocab, words("w4 w5"));
  EXPECT_EQ(p.prob.size(), 1024u);
  double total = 0.0;
  for (double x : p.prob) total += x;
  EXPECT_NEAR(total, 1.0, 1e-12);
  for (const auto& hint : {TokenSequence{}, TokenSequence{"unseen", "<s>", "<unk>"}}) {
    const auto u = hint_posterior(grid, vocab, hint);
    for (double x : u.prob) EXPECT_DOUBLE_EQ(x, 1.0 / 1024);
  }
}

TEST(HintPosterior, PlantedHintLocalizes) {
  const Extent g{16, 16}, w{5, 5};
  const std::size_t v = 103;
  const auto vocab = numbered_vocab(v);
  const cg::CountingGrid grid(testing::planted_model(g, w, v, 0.8, 5));
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t loc = rng.index(g.area());
    const auto hint = bag_words(testing::sample_bag(grid.histograms(), loc, 40, rng));
    const auto arg = hint_posterior(grid, vocab, hint).argmax();
    EXPECT_TRUE(cg::within_window(g, w, cg::grid_index(g, arg), cg::grid_index(g, loc)));
  }
}

TEST(CellHint, WidthOneIsOneHot) {
  const auto p = cell_hint({8, 8}, {3, 5}, 1);
  EXPECT_EQ(p.argmax(), cg::flat_index({8, 8}, {3, 5}));
  EXPECT_EQ(p.prob[p.argmax()], 1.0);
  double total = 0.0;
  for (double x : p.prob) total += x;
  EXPECT_EQ(total, 1.0);
}

TEST(CellHint, WidthThreeWrapsAtEdge) {
  const Extent g{8, 8};
  const auto p = cell_hint(g, {0, 0}, 3);
  std::size_t nonzero = 0;
  double total = 0.0;
  for (double x : p.prob) {
    if (x > 0.0) {
      ++nonzero;
      EXPECT_NEAR(x, 1.0 / 9, 1e-15);
    }
    total += x;
  }
  EXPECT_EQ(nonzero, 9u);
  EXPECT_NEAR(total, 1.0, 1e-12);
  for (cg::GridIndex c : {cg::GridIndex{7, 7}, cg::GridIndex{1, 7}, cg::GridIndex{7, 1}, cg::GridIndex{1, 1}}) {
    EXPECT_GT(p.prob[cg::flat_index(g, c)], 0.0);
  }
  EXPECT_EQ(p.prob[cg::flat_index(g, {2, 0})], 0.0);
}

TEST(CellHint, WindowLargerThanGridCoversItOnce) {
  const auto p = cell_hint({2, 2}, {1, 1}, 5);
  for (double x : p.prob) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(CellHint, InvalidArguments) {
  EXPECT_THROW(cell_hint({4, 4}, {4, 0}, 1), std::out_of_range);
  EXPECT_THROW(cell_hint({4, 4}, {0, 9}, 1), std::out_of_range);
  EXPECT_THROW(cell_hint({4, 4}, {0, 0}, 0), std::invalid_argument);
}

TEST(IrHints, OnePosteriorPerRetrievedSentence) {
  const Extent g{16, 16}, w{5, 5};
  const std::size_t v = 103;
  const auto vocab = numbered_vocab(v);
  const cg::CountingGrid grid(testing::planted_model(g, w, v, 0.8, 9));
  Rng rng(23);
  const std::size_t loc = rng.index(g.area());
  const auto base = bag_words(testing::sample_bag(grid.histograms(), loc, 40, rng));
  auto near = base;
  near.back() = "w" + std::to_string(Vocabulary::kReserved + rng.index(v - Vocabulary::kReserved));
  std::vector<TokenSequence> corpus{base, near};
  for (int i = 0; i < 6; ++i) corpus.push_back(bag_words(testing::sample_bag(grid.histograms(), rng.index(g.area()), 40, rng)));
  const auto index = InvertedIndex::build(corpus);

  const auto hints = ir_hints(index, grid, vocab, base, 3);
  ASSERT_EQ(hints.size(), 3u);
  const auto hits = index.search(base, 3);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    EXPECT_EQ(hints[i].doc, hits[i].doc);
    EXPECT_EQ(hints[i].score, hits[i].score);
    EXPECT_EQ(hints[i].posterior.prob, hint_posterior(grid, vocab, index.sentence(hits[i].doc)).prob);
  }
  EXPECT_EQ(hints[0].doc, 0u);
  EXPECT_EQ(hints[1].doc, 1u);
  EXPECT_TRUE(cg::within_window(g, w, cg::grid_index(g, hints[0].posterior.argmax()),
                                cg::grid_index(g, hints[1].posterior.argmax())));
  EXPECT_TRUE(ir_hints(index, grid, vocab, {"nothing"}, 3).empty());
}

TEST(Topics, TargetTopicsAreTargetPosteriors) {
  const auto vocab = numbered_vocab(12);
  const cg::CountingGrid grid(cg::random_model({4, 3}, {2, 2}, vocab.size(), 3));
  const std::vector<s2s::EncodedPair> pairs{{{0, 5, 0}, {4, 4, 7}}, {{0, 0}, {Vocabulary::kBoundary}}};
  const auto topics = target_topics(grid, pairs);
  ASSERT_EQ(topics.size(), 2u);
  EXPECT_EQ(topics[0].rows(), 12);
  EXPECT_EQ(topics[0].cols(), 1);
  const auto expected = grid.posterior(make_bag({4, 4, 7}));
  for (std::size_t i = 0; i < expected.prob.size(); ++i) EXPECT_EQ(topics[0](static_cast<Eigen::Index>(i), 0), expected.prob[i]);
  for (Eigen::Index i = 0; i < topics[1].rows(); ++i) EXPECT_DOUBLE_EQ(topics[1](i, 0), 1.0 / 12);
}

TEST(Topics, BlankTopicsReplacesSeededFraction) {
  std::vector<Eigen::MatrixXd> topics(1000, Eigen::MatrixXd::Zero(4, 1));
  for (auto& t : topics) t(2, 0) = 1.0;
  auto blanked = topics;
  blank_topics(blanked, 0.3, 5);
  std::size_t uniform = 0;
  for (std::size_t i = 0; i < blanked.size(); ++i) {
    if (blanked[i] == topics[i]) continue;
    EXPECT_EQ(blanked[i], Eigen::MatrixXd::Constant(4, 1, 0.25));
    ++uniform;
  }
  EXPECT_NEAR(uniform / 1000.0, 0.3, 0.05);
  auto again = topics;
  blank_topics(again, 0.3, 5);
  EXPECT_EQ(again, blanked);
  auto none = topics;
  blank_topics(none, 0.0, 5);
  EXPECT_EQ(none, topics);
  EXPECT_THROW(blank_topics(none, 1.5, 5), std::invalid_argument);
}

}  // namespace
}  // namespace steer::hints
