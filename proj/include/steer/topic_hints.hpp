#pragma once

// Counting Grid location posteriors used as decoder hints: from free text,
// from a clicked grid cell, or from sentences retrieved by a TF-IDF index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "steer/binary_io.hpp"
#include "steer/corpus.hpp"
#include "steer/counting_grid.hpp"
#include "steer/rng.hpp"

namespace steer::hints {

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;
};

struct SearchHit {
  std::size_t doc = 0;
  double score = 0.0;
};

/// word -> postings sorted by sentence id; idf = log(1 + N / df).
class InvertedIndex {
 public:
  static InvertedIndex build(const std::vector<TokenSequence>& sentences) {
    InvertedIndex index;
    index.sentences_ = sentences;
    for (std::size_t d = 0; d < sentences.size(); ++d) {
      std::map<std::string, std::uint32_t> tf;
      for (const auto& w : sentences[d]) ++tf[w];
      for (const auto& [w, n] : tf) index.postings_[w].push_back({static_cast<std::uint32_t>(d), n});
    }
    index.finish();
    return index;
  }

  std::size_t size() const { return sentences_.size(); }
  bool empty() const { return sentences_.empty(); }
  const TokenSequence& sentence(std::size_t doc) const { return sentences_.at(doc); }
  const std::vector<TokenSequence>& sentences() const { return sentences_; }

  std::size_t document_frequency(const std::string& word) const {
    auto it = postings_.find(word);
    return it == postings_.end() ? 0 : it->second.size();
  }

  const std::vector<Posting>* postings(const std::string& word) const {
    auto it = postings_.find(word);
    return it == postings_.end() ? nullptr : &it->second;
  }

  double idf(const std::string& word) const {
    const std::size_t df = document_frequency(word);
    if (df == 0) return 0.0;
    return std::log(1.0 + static_cast<double>(sentences_.size()) / static_cast<double>(df));
  }

  /// Cosine similarity of TF-IDF vectors, descending, ties by sentence id.
  std::vector<SearchHit> search(const TokenSequence& query, std::size_t k = 10) const {
    if (k == 0) throw std::invalid_argument("search needs k >= 1");
    std::map<std::string, std::uint32_t> qtf;
    for (const auto& w : query) ++qtf[w];
    double qnorm = 0.0;
    std::unordered_map<std::size_t, double> dots;
    for (const auto& [w, n] : qtf) {
      auto it = postings_.find(w);
      if (it == postings_.end()) continue;
      const double weight = idf(w);
      const double qw = static_cast<double>(n) * weight;
      qnorm += qw * qw;
      for (const auto& p : it->second) dots[p.doc] += qw * static_cast<double>(p.tf) * weight;
    }
    std::vector<SearchHit> hits;
    if (qnorm <= 0.0) return hits;
    qnorm = std::sqrt(qnorm);
    for (const auto& [doc, dot] : dots) {
      if (dot <= 0.0 || norms_[doc] <= 0.0) continue;
      hits.push_back({doc, dot / (qnorm * norms_[doc])});
    }
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
      return a.score != b.score ? a.score > b.score : a.doc < b.doc;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
  }

  void save(std::ostream& out) const {
    out << "idx-v1 " << sentences_.size() << '\n';
    for (const auto& s : sentences_) {
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
      for (const auto& w : s) io::write_string(out, w);
    }
    if (!out) throw std::runtime_error("failed writing index");
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    save(out);
  }

  /// Postings and document frequencies are rebuilt from the sentence store.
  static InvertedIndex load(std::istream& in) {
    const auto fields = io::read_header(in, "idx-v1");
    if (fields.size() != 1) throw io::FormatError("idx-v1 header needs a sentence count");
    const std::size_t n = io::parse_size(fields[0]);
    std::vector<TokenSequence> sentences(n);
    for (auto& s : sentences) {
      const auto len = io::read_le<std::uint32_t>(in);
      s.reserve(len);
      for (std::uint32_t i = 0; i < len; ++i) s.push_back(io::read_string(in));
    }
    return build(sentences);
  }

  static InvertedIndex load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return load(in);
  }

 private:
  void finish() {
    norms_.assign(sentences_.size(), 0.0);
    for (const auto& [w, list] : postings_) {
      const double weight = idf(w);
      for (const auto& p : list) {
        const double v = static_cast<double>(p.tf) * weight;
        norms_[p.doc] += v * v;
      }
    }
    for (auto& n : norms_) n = std::sqrt(n);
  }

  std::vector<TokenSequence> sentences_;
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<double> norms_;
};

/// Bag of in-vocabulary words; reserved symbols and OOV words are dropped.
inline Bag hint_bag(const TokenSequence& hint, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : hint) {
    if (Vocabulary::is_reserved(w) || !vocab.contains(w)) continue;
    ids.push_back(vocab.id(w));
  }
  return make_bag(ids);
}

/// p(l | hint), flattened row-major; uniform for an empty hint.
inline cg::LocationPosterior hint_posterior(const cg::CountingGrid& grid, const Vocabulary& vocab,
                                            const TokenSequence& hint) {
  const Bag bag = hint_bag(hint, vocab);
  if (bag.empty()) return cg::LocationPosterior::uniform(grid.grid());
  return grid.posterior(bag);
}

inline cg::LocationPosterior hint_posterior(const cg::CGModel& model, const Vocabulary& vocab,
                                            const TokenSequence& hint) {
  return hint_posterior(cg::CountingGrid(model), vocab, hint);
}

/// Uniform mass on the width x width toroidal neighbourhood centred on `cell`.
inline cg::LocationPosterior cell_hint(cg::Extent grid, cg::GridIndex cell, std::size_t width) {
  if (cell.x >= grid.x || cell.y >= grid.y) throw std::out_of_range("cell outside the grid");
  if (width == 0) throw std::invalid_argument("smoothing width must be at least 1");
  cg::LocationPosterior out{grid, std::vector<double>(grid.area(), 0.0)};
  const long long lo = -static_cast<long long>((width - 1) / 2);
  const long long hi = lo + static_cast<long long>(width) - 1;
  for (long long dy = lo; dy <= hi; ++dy) {
    for (long long dx = lo; dx <= hi; ++dx) {
      const std::size_t x = cg::wrap(static_cast<long long>(cell.x) + dx, grid.x);
      const std::size_t y = cg::wrap(static_cast<long long>(cell.y) + dy, grid.y);
      out.prob[cg::flat_index(grid, {x, y})] = 1.0;
    }
  }
  double total = 0.0;
  for (double p : out.prob) total += p;
  for (double& p : out.prob) p /= total;
  return out;
}

struct IrHint {
  std::size_t doc = 0;
  double score = 0.0;
  cg::LocationPosterior posterior;
};

/// One posterior per retrieved neighbour of `source`, in retrieval order.
inline std::vector<IrHint> ir_hints(const InvertedIndex& index, const cg::CountingGrid& grid, const Vocabulary& vocab,
                                    const TokenSequence& source, std::size_t k = 10) {
  std::vector<IrHint> out;
  for (const auto& hit : index.search(source, k)) {
    out.push_back({hit.doc, hit.score, hint_posterior(grid, vocab, index.sentence(hit.doc))});
  }
  return out;
}

/// Decoder topic input (|L| x 1) from a posterior.
inline Eigen::MatrixXd to_topic(const cg::LocationPosterior& posterior) {
  Eigen::MatrixXd t(static_cast<Eigen::Index>(posterior.prob.size()), 1);
  for (std::size_t i = 0; i < posterior.prob.size(); ++i) t(static_cast<Eigen::Index>(i), 0) = posterior.prob[i];
  return t;
}

/// Training-time topic inputs: the CG posterior of each target sentence.
template <typename Pairs>
std::vector<Eigen::MatrixXd> target_topics(const cg::CountingGrid& grid, const Pairs& pairs) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::vector<TokenId> ids;
    for (TokenId id : p.target)
      if (id > Vocabulary::kPad) ids.push_back(id);
    const Bag bag = make_bag(ids);
    out.push_back(to_topic(bag.empty() ? cg::LocationPosterior::uniform(grid.grid()) : grid.posterior(bag)));
  }
  return out;
}

/// Replaces a seeded `fraction` of topic inputs with the uniform posterior,
/// the input used when no hint is given.
inline void blank_topics(std::vector<Eigen::MatrixXd>& topics, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("blank fraction must lie in [0, 1]");
  Rng rng(seed);
  for (auto& t : topics) {
    if (rng.uniform() < fraction) t.setConstant(1.0 / static_cast<double>(t.rows()));
  }
}

}  // namespace steer::hints
