#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "steer/counting_grid.hpp"

namespace steer::cg {
namespace {

CGModel shifted(const CGModel& m, std::size_t sx, std::size_t sy) {
  CGModel out = m;
  for (std::size_t y = 0; y < m.grid.y; ++y) {
    for (std::size_t x = 0; x < m.grid.x; ++x) {
      const std::size_t to = flat_index(m.grid, {(x + sx) % m.grid.x, (y + sy) % m.grid.y});
      std::copy(m.row(flat_index(m.grid, {x, y})), m.row(flat_index(m.grid, {x, y})) + m.vocab_size, out.row(to));
    }
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

TEST(WindowHistograms, UniformPiIsUnchanged) {
  const auto m = CGModel::uniform({6, 5}, {3, 2}, 7);
  EXPECT_LT(max_abs_diff(window_histograms(m).h, m.pi), 1e-15);
}

TEST(WindowHistograms, IdentityWindow) {
  const auto m = random_model({5, 4}, {1, 1}, 9, 3);
  EXPECT_EQ(window_histograms(m).h, m.pi);
}

TEST(WindowHistograms, MatchesNaiveOracle) {
  const auto m = random_model({8, 8}, {3, 3}, 11, 42);
  EXPECT_LT(max_abs_diff(window_histograms(m).h, testing::naive_histograms(m)), 1e-9);
}

TEST(WindowHistograms, MatchesNaiveOracleOnRectangles) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = random_model({7, 16}, {5, 2}, 6, seed);
    EXPECT_LT(max_abs_diff(window_histograms(m).h, testing::naive_histograms(m)), 1e-9);
  }
  const auto full = random_model({4, 4}, {4, 4}, 5, 1);
  EXPECT_LT(max_abs_diff(window_histograms(full).h, testing::naive_histograms(full)), 1e-9);
}

TEST(WindowHistograms, RowsSumToOne) {
  const auto hist = window_histograms(random_model({9, 9}, {3, 3}, 13, 5));
  for (std::size_t l = 0; l < hist.grid.area(); ++l) {
    double s = 0.0;
    for (std::size_t z = 0; z < hist.vocab_size; ++z) s += hist.row(l)[z];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(WindowHistograms, ShiftEquivariance) {
  const auto m = random_model({8, 6}, {3, 3}, 5, 8);
  const auto base = window_histograms(m);
  const auto moved = window_histograms(shifted(m, 3, 2));
  const CGModel as_model{base.grid, base.window, base.vocab_size, base.h};
  EXPECT_LT(max_abs_diff(moved.h, shifted(as_model, 3, 2).pi), 1e-12);

  const Bag bag = make_bag({0, 0, 3, 4});
  const auto p = posterior(m, bag);
  const auto q = posterior(shifted(m, 3, 2), bag);
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      EXPECT_NEAR(q.prob[flat_index(m.grid, {(x + 3) % 8, (y + 2) % 6})], p.prob[flat_index(m.grid, {x, y})], 1e-12);
    }
  }
}

TEST(CGModel, ValidateRejectsBadShapes) {
  CGModel m{{4, 4}, {0, 1}, 3, std::vector<double>(48, 1.0 / 3)};
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.window = {2, 2};
  m.pi.pop_back();
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(WindowHistograms, WindowWiderThanGridWrapsRepeatedly) {
  const auto m = random_model({4, 3}, {5, 7}, 4, 13);
  EXPECT_LT(max_abs_diff(window_histograms(m).h, testing::naive_histograms(m)), 1e-12);
  const auto r = em_fit({make_bag({0, 1, 1}), make_bag({2, 3})}, 4, EMConfig{{4, 3}, {5, 7}, 5, 3});
  for (std::size_t i = 1; i < r.log_likelihood.size(); ++i) EXPECT_GE(r.log_likelihood[i], r.log_likelihood[i - 1] - 1e-9);
}

TEST(CGModel, SaveLoadRoundTrip) {
  const auto m = random_model({4, 3}, {2, 2}, 6, 11);
  std::stringstream buf;
  m.save(buf);
  EXPECT_EQ(buf.str().substr(0, 16), "cg-v1 4 3 2 2 6\n");
  const auto back = CGModel::load(buf);
  EXPECT_EQ(back.grid, m.grid);
  EXPECT_EQ(back.window, m.window);
  EXPECT_EQ(back.pi, m.pi);
}

TEST(BagLogLikelihood, SingleWord) {
  HistGrid hist{{1, 1}, {1, 1}, 4, {0.25, 0.25, 0.25, 0.25}};
  EXPECT_DOUBLE_EQ(bag_log_likelihood(hist, make_bag({2}), 0), std::log(0.25));
}

TEST(BagLogLikelihood, CountIsExponent) {
  HistGrid hist{{1, 1}, {1, 1}, 3, {0.5, 0.3, 0.2}};
  EXPECT_DOUBLE_EQ(bag_log_likelihood(hist, make_bag({1, 1}), 0), 2 * std::log(0.3));
}

TEST(BagLogLikelihood, EmptyBagIsZero) {
  const auto m = random_model({3, 3}, {2, 2}, 4, 1);
  EXPECT_EQ(bag_log_likelihood(m, Bag{}, 4), 0.0);
}

TEST(BagLogLikelihood, ZeroEntryGivesNegativeInfinity) {
  HistGrid hist{{1, 1}, {1, 1}, 2, {1.0, 0.0}};
  EXPECT_EQ(bag_log_likelihood(hist, make_bag({1}), 0), -INFINITY);
}

TEST(BagLogLikelihood, MatchesPerWordProduct) {
  const auto m = random_model({5, 5}, {2, 3}, 8, 17);
  const auto h = testing::naive_histograms(m);
  const std::vector<TokenId> words{1, 5, 5, 7, 0, 5};
  for (std::size_t loc : {0u, 7u, 24u}) {
    double product = 1.0;
    for (auto w : words) product *= h[loc * 8 + w];
    EXPECT_NEAR(bag_log_likelihood(m, make_bag(words), loc), std::log(product), 1e-9);
  }
}

TEST(Posterior, UniformPiGivesUniformPosterior) {
  const auto p = posterior(CGModel::uniform({4, 4}, {2, 2}, 5), make_bag({0, 1, 1}));
  for (double v : p.prob) EXPECT_NEAR(v, 1.0 / 16, 1e-12);
}

TEST(Posterior, EmptyBagReturnsPrior) {
  const auto p = posterior(random_model({4, 4}, {2, 2}, 5, 2), Bag{});
  for (double v : p.prob) EXPECT_DOUBLE_EQ(v, 1.0 / 16);
}

TEST(Posterior, NormalizedForAdversarialBags) {
  const CountingGrid g(random_model({16, 16}, {3, 3}, 20, 4));
  std::vector<TokenId> repeated(500, 3);
  for (const Bag& bag : {make_bag({7}), make_bag(repeated), make_bag({0, 19, 19, 2})}) {
    const auto p = g.posterior(bag);
    ASSERT_EQ(p.prob.size(), 256u);
    double s = 0.0;
    for (double v : p.prob) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Posterior, RejectsOutOfRangeIds) {
  EXPECT_THROW(posterior(CGModel::uniform({2, 2}, {1, 1}, 3), make_bag({3})), std::out_of_range);
}

TEST(Posterior, PlantedBagsLocalize) {
  const Extent grid{16, 16}, window{5, 5};
  const auto planted = testing::planted_model(grid, window, 100, 0.8, 3);
  const CountingGrid g(planted);
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t loc = rng.index(grid.area());
    const auto bag = testing::sample_bag(g.histograms(), loc, 40, rng);
    const auto arg = g.posterior(bag).argmax();
    EXPECT_TRUE(within_window(grid, window, grid_index(grid, arg), grid_index(grid, loc)))
        << "planted " << loc << " argmax " << arg;
  }
}

TEST(CountingGrid, MarginalMatchesLogSumExp) {
  const auto m = random_model({3, 2}, {2, 1}, 4, 6);
  const CountingGrid g(m);
  const Bag bag = make_bag({0, 2, 2});
  double total = 0.0;
  for (std::size_t l = 0; l < 6; ++l) total += std::exp(bag_log_likelihood(m, bag, l)) / 6.0;
  EXPECT_NEAR(g.marginal_log_likelihood(bag), std::log(total), 1e-12);
}

TEST(EmFit, ZeroIterationsReturnsInitialization) {
  EMConfig config;
  config.grid = {4, 4};
  config.window = {2, 2};
  config.iterations = 0;
  const auto r = em_fit({make_bag({0, 1})}, 3, config);
  EXPECT_TRUE(r.log_likelihood.empty());
  EXPECT_EQ(r.model.pi, random_model({4, 4}, {2, 2}, 3, config.seed).pi);
}

TEST(EmFit, RejectsEmptyData) { EXPECT_THROW(em_fit({}, 3, EMConfig{}), std::invalid_argument); }

TEST(EmFit, SingleCellRecoversPooledFrequencies) {
  const std::vector<Bag> bags{make_bag({0, 1, 1}), make_bag({2, 2, 2, 3}), make_bag({1, 3})};
  EMConfig config;
  config.grid = {1, 1};
  config.window = {1, 1};
  config.iterations = 1;
  const auto r = em_fit(bags, 4, config);
  const double pooled[4] = {1.0 / 9, 3.0 / 9, 3.0 / 9, 2.0 / 9};
  for (std::size_t z = 0; z < 4; ++z) EXPECT_NEAR(r.model.pi[z], pooled[z], 1e-9);
}

TEST(EmFit, TraceIsNonDecreasingAndReproducible) {
  const auto planted = testing::planted_model({8, 8}, {3, 3}, 30, 0.5, 5);
  const CountingGrid g(planted);
  Rng rng(12);
  std::vector<Bag> bags;
  for (int i = 0; i < 300; ++i) bags.push_back(testing::sample_bag(g.histograms(), rng.index(64), 10, rng));
  EMConfig config;
  config.grid = {8, 8};
  config.window = {3, 3};
  config.iterations = 15;
  const auto a = em_fit(bags, 30, config);
  ASSERT_EQ(a.log_likelihood.size(), 15u);
  for (std::size_t i = 1; i < a.log_likelihood.size(); ++i) {
    EXPECT_GE(a.log_likelihood[i], a.log_likelihood[i - 1] - 1e-6) << "iteration " << i;
  }
  const auto b = em_fit(bags, 30, config);
  EXPECT_EQ(a.model.pi, b.model.pi);
  EXPECT_EQ(a.log_likelihood, b.log_likelihood);
  for (std::size_t l = 0; l < a.model.locations(); ++l) {
    double s = 0.0;
    for (std::size_t z = 0; z < 30; ++z) {
      EXPECT_GE(a.model.row(l)[z], 0.0);
      s += a.model.row(l)[z];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(EmFit, PlantedGridBeatsUnigramOnHeldOut) {
  const Extent grid{16, 16}, window{5, 5};
  const CountingGrid truth(testing::planted_model(grid, window, 40, 0.5, 21));
  Rng rng(8);
  std::vector<Bag> train, held;
  for (int i = 0; i < 2000; ++i) train.push_back(testing::sample_bag(truth.histograms(), rng.index(256), 20, rng));
  for (int i = 0; i < 300; ++i) held.push_back(testing::sample_bag(truth.histograms(), rng.index(256), 20, rng));
  EMConfig config;
  config.grid = grid;
  config.window = window;
  config.iterations = 40;
  const CountingGrid learned(em_fit(train, 40, config).model);
  config.grid = {1, 1};
  config.window = {1, 1};
  config.iterations = 5;
  const CountingGrid unigram(em_fit(train, 40, config).model);
  double ll_cg = 0.0, ll_uni = 0.0;
  for (const auto& b : held) {
    ll_cg += learned.marginal_log_likelihood(b);
    ll_uni += unigram.marginal_log_likelihood(b);
  }
  EXPECT_GT(ll_cg, ll_uni);
}

TEST(TopWords, HighestFirst) {
  CGModel m{{1, 1}, {1, 1}, 3, {0.5, 0.3, 0.2}};
  const auto top = top_words(m, 0, 2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0], (std::pair<TokenId, double>{0, 0.5}));
  EXPECT_EQ(top[1], (std::pair<TokenId, double>{1, 0.3}));
}

TEST(TopWords, UniformRowBreaksTiesByLowestId) {
  const auto m = CGModel::uniform({2, 2}, {1, 1}, 6);
  EXPECT_EQ(top_words(m, 3, 1)[0].first, 0u);
}

TEST(TopWords, OversizedKReturnsAll) {
  CGModel m{{1, 1}, {1, 1}, 3, {0.2, 0.3, 0.5}};
  const auto top = top_words(m, 0, 10);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].first, 2u);
  EXPECT_THROW(top_words(m, 0, 0), std::invalid_argument);
  EXPECT_THROW(top_words(m, 1, 1), std::out_of_range);
}

TEST(TopWords, PlantedWordOnTop) {
  const auto m = testing::planted_model({4, 4}, {2, 2}, 10, 0.7, 6);
  for (std::size_t l = 0; l < 16; ++l) {
    const auto top = top_words(m, l, 1)[0];
    EXPECT_DOUBLE_EQ(top.second, 0.7);
  }
}

TEST(RenderGrid, OneBlockPerRow) {
  Vocabulary v;
  v.add("apple");
  v.add("pear");
  CGModel m{{2, 1}, {1, 1}, 5, {0, 0, 0, 0.9, 0.1, 0, 0, 0, 0.2, 0.8}};
  EXPECT_EQ(render_grid(m, v, 1, 8), "apple   pear\n\n");
}

}  // namespace
}  // namespace steer::cg
