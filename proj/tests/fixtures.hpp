#pragma once

// Synthetic corpora shared by unit and acceptance tests.

#include <cmath>
#include <string>
#include <vector>

#include "steer/corpus.hpp"
#include "steer/counting_grid.hpp"
#include "steer/rng.hpp"
#include "steer/seq2seq.hpp"

namespace steer::testing {

/// First-order Markov grammar: each word has a few successors with fixed
/// probabilities, plus an end probability. Exact sentence probabilities
/// serve as an oracle LM.
class MarkovGrammar {
 public:
  struct Arc {
    std::size_t next;  // index into words(), or npos for end of sentence
    double p;
  };
  static constexpr std::size_t kEnd = static_cast<std::size_t>(-1);

  MarkovGrammar(std::vector<std::string> words, std::vector<std::vector<Arc>> arcs, std::vector<Arc> start)
      : words_(std::move(words)), arcs_(std::move(arcs)), start_(std::move(start)) {}

  const std::vector<std::string>& words() const { return words_; }

  TokenSequence sample(Rng& rng, std::size_t max_len = 12) const {
    TokenSequence out;
    std::size_t cur = pick(start_, rng);
    while (cur != kEnd && out.size() < max_len) {
      out.push_back(words_[cur]);
      cur = pick(arcs_[cur], rng);
    }
    return out;
  }

  /// log p(sentence) including the end event; -inf for impossible ones.
  double log_prob(const TokenSequence& s) const {
    if (s.empty()) return -INFINITY;
    double lp = 0.0;
    std::size_t prev = kEnd;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      const auto& options = prev == kEnd ? start_ : arcs_[prev];
      const std::size_t want = i < s.size() ? index_of(s[i]) : kEnd;
      if (i < s.size() && want == kEnd) return -INFINITY;
      double p = 0.0;
      for (const auto& a : options)
        if (a.next == want) p += a.p;
      if (p <= 0.0) return -INFINITY;
      lp += std::log(p);
      prev = want;
    }
    return lp;
  }

  /// log p of every word and of the end event; unknown words and impossible
  /// transitions score log(floor).
  std::vector<double> event_log_probs(const TokenSequence& s, double floor) const {
    std::vector<double> out;
    std::size_t prev = kEnd;
    bool first = true, lost = false;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      const std::size_t want = i < s.size() ? index_of(s[i]) : kEnd;
      if ((i < s.size() && want == kEnd) || lost) {
        out.push_back(std::log(floor));
        lost = i < s.size() && want == kEnd;
        prev = want;
        first = false;
        continue;
      }
      const auto& options = first ? start_ : arcs_[prev];
      double p = 0.0;
      for (const auto& a : options)
        if (a.next == want) p += a.p;
      out.push_back(std::log(std::max(p, floor)));
      prev = want;
      first = false;
    }
    return out;
  }

  std::size_t index_of(const std::string& w) const {
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] == w) return i;
    return kEnd;
  }

 private:
  static std::size_t pick(const std::vector<Arc>& arcs, Rng& rng) {
    double u = rng.uniform();
    for (const auto& a : arcs) {
      if (u < a.p) return a.next;
      u -= a.p;
    }
    return arcs.back().next;
  }

  std::vector<std::string> words_;
  std::vector<std::vector<Arc>> arcs_;
  std::vector<Arc> start_;
};

/// Base grammar A over a0..a9: each word continues to two successors or ends.
inline MarkovGrammar grammar_a() {
  std::vector<std::string> words;
  for (int i = 0; i < 10; ++i) words.push_back("a" + std::to_string(i));
  std::vector<std::vector<MarkovGrammar::Arc>> arcs(10);
  for (std::size_t i = 0; i < 10; ++i) {
    arcs[i] = {{(i + 1) % 10, 0.55}, {(i + 3) % 10, 0.25}, {MarkovGrammar::kEnd, 0.2}};
  }
  return {words, arcs, {{0, 0.4}, {2, 0.3}, {5, 0.3}}};
}

/// Style grammar B: the same words as A plus exclusive markers m0..m3 that
/// follow most words.
inline MarkovGrammar grammar_b() {
  std::vector<std::string> words;
  for (int i = 0; i < 10; ++i) words.push_back("a" + std::to_string(i));
  for (int i = 0; i < 4; ++i) words.push_back("m" + std::to_string(i));
  std::vector<std::vector<MarkovGrammar::Arc>> arcs(14);
  for (std::size_t i = 0; i < 10; ++i) arcs[i] = {{10 + i % 4, 0.6}, {(i + 7) % 10, 0.2}, {MarkovGrammar::kEnd, 0.2}};
  for (std::size_t j = 0; j < 4; ++j) arcs[10 + j] = {{(3 * j + 1) % 10, 0.6}, {MarkovGrammar::kEnd, 0.4}};
  return {words, arcs, {{1, 0.5}, {10, 0.5}}};
}

inline bool is_marker(const std::string& w) { return !w.empty() && w[0] == 'm'; }

/// Conversation pairs whose targets follow `g` and whose sources do too.
inline PairDataset grammar_pairs(const MarkovGrammar& g, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PairDataset out;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = g.sample(rng, 8);
    auto t = g.sample(rng, 8);
    out.pairs.push_back({s, t});
  }
  return out;
}

/// Monologue documents of `sentences` sentences each, drawn from `g`.
inline PairDataset grammar_monologue(const MarkovGrammar& g, std::size_t docs, std::size_t sentences,
                                     std::uint64_t seed) {
  Rng rng(seed);
  PairDataset out;
  for (std::size_t d = 0; d < docs; ++d) {
    for (std::size_t s = 0; s < sentences; ++s) {
      out.pairs.push_back({{}, g.sample(rng, 8)});
      out.previous.push_back(s == 0 ? std::nullopt : std::optional<std::size_t>(out.pairs.size() - 2));
    }
  }
  return out;
}

/// Vocabulary holding the words of several grammars in a fixed order.
inline Vocabulary grammar_vocab(std::initializer_list<const MarkovGrammar*> gs) {
  Vocabulary v;
  for (const auto* g : gs)
    for (const auto& w : g->words())
      if (!v.contains(w)) v.add(w);
  return v;
}

/// Reversal task: sources of 3-8 tokens over w0..w19, target reversed.
inline std::vector<s2s::EncodedPair> reversal_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<s2s::EncodedPair> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<TokenId> s;
    const std::size_t len = 3 + rng.index(6);
    for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<TokenId>(Vocabulary::kReserved + rng.index(20)));
    std::vector<TokenId> t(s.rbegin(), s.rend());
    out.push_back({s2s::wrap_source(s), std::move(t)});
  }
  return out;
}

/// Many-to-one conversation task: half the sources get one of three generic
/// replies, the rest a reply naming the source's key word.
struct ManyToOne {
  PairDataset train;
  std::vector<SentencePair> specific;  // held-out specific pairs
  std::vector<TokenSequence> generic;
};

inline ManyToOne many_to_one(std::size_t n, std::size_t held_out, std::uint64_t seed) {
  Rng rng(seed);
  ManyToOne out;
  out.generic = {{"i", "do", "not", "know"}, {"ok", "sure"}, {"i", "do", "not", "care"}};
  const std::vector<std::string> fillers{"tell", "me", "about", "the", "please", "now"};
  auto specific_pair = [&](std::size_t key) {
    TokenSequence s{fillers[rng.index(fillers.size())], "k" + std::to_string(key), fillers[rng.index(fillers.size())]};
    TokenSequence t{"r" + std::to_string(key), "is", fillers[rng.index(3)]};
    return SentencePair{s, t};
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t key = rng.index(30);
    if (rng.uniform() < 0.5) {
      auto p = specific_pair(key);
      out.train.pairs.push_back({p.source, out.generic[rng.index(out.generic.size())]});
    } else {
      out.train.pairs.push_back(specific_pair(key));
    }
  }
  for (std::size_t i = 0; i < held_out; ++i) out.specific.push_back(specific_pair(rng.index(30)));
  return out;
}

/// Topic corpus: four topics with private word sets and shared filler.
/// Sources are topic-neutral so only the topic input can steer replies.
struct TopicCorpus {
  std::vector<std::vector<std::string>> topic_words;
  std::vector<std::string> shared;
  PairDataset pairs;
  std::vector<std::size_t> topic_of;  // per pair
};

inline TopicCorpus topic_corpus(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TopicCorpus c;
  const char* names[4] = {"food", "sport", "music", "code"};
  for (int t = 0; t < 4; ++t) {
    std::vector<std::string> ws;
    for (int i = 0; i < 5; ++i) ws.push_back(std::string(names[t]) + std::to_string(i));
    c.topic_words.push_back(ws);
  }
  c.shared = {"the", "a", "is", "very", "so"};
  const std::vector<std::string> neutral{"hey", "hello", "what", "now", "tell", "me"};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t topic = rng.index(4);
    TokenSequence src, tgt;
    const std::size_t ls = 2 + rng.index(3);
    for (std::size_t k = 0; k < ls; ++k) src.push_back(neutral[rng.index(neutral.size())]);
    const std::size_t lt = 3 + rng.index(3);
    for (std::size_t k = 0; k < lt; ++k) {
      tgt.push_back(rng.uniform() < 0.75 ? c.topic_words[topic][rng.index(5)] : c.shared[rng.index(c.shared.size())]);
    }
    c.pairs.pairs.push_back({src, tgt});
    c.topic_of.push_back(topic);
  }
  return c;
}

// Direct double loop over the window, wrapping on the torus.
inline std::vector<double> naive_histograms(const cg::CGModel& m) {
  std::vector<double> h(m.pi.size(), 0.0);
  for (std::size_t y = 0; y < m.grid.y; ++y) {
    for (std::size_t x = 0; x < m.grid.x; ++x) {
      for (std::size_t dy = 0; dy < m.window.y; ++dy) {
        for (std::size_t dx = 0; dx < m.window.x; ++dx) {
          const std::size_t j = ((y + dy) % m.grid.y) * m.grid.x + (x + dx) % m.grid.x;
          for (std::size_t z = 0; z < m.vocab_size; ++z) {
            h[(y * m.grid.x + x) * m.vocab_size + z] += m.pi[j * m.vocab_size + z] / static_cast<double>(m.window.area());
          }
        }
      }
    }
  }
  return h;
}

/// Planted Counting Grid: each cell concentrates mass on one word, every
/// other word shares a small residual.
inline cg::CGModel planted_model(cg::Extent grid, cg::Extent window, std::size_t vocab, double peak, std::uint64_t seed) {
  Rng rng(seed);
  cg::CGModel m{grid, window, vocab, std::vector<double>(grid.area() * vocab)};
  for (std::size_t loc = 0; loc < grid.area(); ++loc) {
    const std::size_t top = rng.index(vocab);
    for (std::size_t z = 0; z < vocab; ++z) {
      m.pi[loc * vocab + z] = z == top ? peak : (1.0 - peak) / static_cast<double>(vocab - 1);
    }
  }
  return m;
}

/// Bag of `words` tokens drawn from h at `location`.
inline Bag sample_bag(const cg::HistGrid& hist, std::size_t location, std::size_t words, Rng& rng) {
  std::vector<TokenId> ids;
  const double* row = hist.row(location);
  for (std::size_t i = 0; i < words; ++i) {
    ids.push_back(static_cast<TokenId>(rng.categorical(std::span<const double>(row, hist.vocab_size))));
  }
  return make_bag(ids);
}

}  // namespace steer::testing
