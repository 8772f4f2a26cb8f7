#pragma once

// Ranking evaluation: one true response and 19 distractors per source,
// scored by a model objective and summarised as MRR and P@1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "steer/corpus.hpp"
#include "steer/rng.hpp"
#include "steer/seq2seq.hpp"

namespace steer::eval {

inline constexpr std::size_t kCandidates = 20;

struct RankingInstance {
  TokenSequence source;
  TokenSequence truth;
  std::vector<TokenSequence> distractors;

  void validate() const {
    if (distractors.size() != kCandidates - 1) {
      throw std::invalid_argument("ranking instance needs exactly " + std::to_string(kCandidates - 1) +
                                  " distractors, got " + std::to_string(distractors.size()));
    }
    for (const auto& d : distractors)
      if (d == truth) throw std::invalid_argument("distractor equals the true answer");
  }
};

inline double mrr(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr of an empty rank list");
  double total = 0.0;
  for (auto r : ranks) {
    if (r < 1) throw std::invalid_argument("ranks start at 1");
    total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

inline double precision_at_1(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("precision of an empty rank list");
  std::size_t hits = 0;
  for (auto r : ranks) hits += r == 1 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

/// 1 + number of distractors scoring at least as high as the truth.
inline std::size_t pessimistic_rank(double truth, const std::vector<double>& distractors) {
  std::size_t rank = 1;
  for (double d : distractors) rank += (d >= truth || std::isnan(d)) ? 1 : 0;
  return rank;
}

/// score(source, candidate); higher is better.
using Scorer = std::function<double(const TokenSequence&, const TokenSequence&)>;

struct RankingResult {
  double mrr = 0.0;
  double p_at_1 = 0.0;
  std::vector<std::size_t> ranks;
};

inline RankingResult ranking_eval(const Scorer& scorer, const std::vector<RankingInstance>& instances) {
  RankingResult out;
  out.ranks.reserve(instances.size());
  for (const auto& inst : instances) {
    inst.validate();
    const double t = scorer(inst.source, inst.truth);
    std::vector<double> ds;
    ds.reserve(inst.distractors.size());
    for (const auto& d : inst.distractors) ds.push_back(scorer(inst.source, d));
    out.ranks.push_back(pessimistic_rank(t, ds));
  }
  out.mrr = mrr(out.ranks);
  out.p_at_1 = precision_at_1(out.ranks);
  return out;
}

struct ScoringModels {
  const Vocabulary* vocab = nullptr;
  const s2s::Seq2SeqModel* forward = nullptr;
  const s2s::Seq2SeqModel* backward = nullptr;
  const s2s::Seq2SeqModel* lm = nullptr;
};

class MissingModel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named objectives: forward log p(T|S), forward/lm log p(T|S) - log p(T|0),
/// backward log p(S|T).
inline Scorer make_scorer(const std::string& name, const ScoringModels& m) {
  if (!m.vocab) throw MissingModel("scorer needs a vocabulary");
  const Vocabulary& vocab = *m.vocab;
  auto need = [&](const s2s::Seq2SeqModel* p, const char* what) {
    if (!p) throw MissingModel("scorer '" + name + "' needs the " + what + " model");
    return p;
  };
  if (name == "forward") {
    const auto* f = need(m.forward, "forward");
    return [f, &vocab](const TokenSequence& s, const TokenSequence& t) {
      return s2s::sequence_logprob(*f, s2s::source_ids(vocab, s), vocab.encode(t));
    };
  }
  if (name == "forward/lm") {
    const auto* f = need(m.forward, "forward");
    const auto* l = need(m.lm, "language");
    return [f, l, &vocab](const TokenSequence& s, const TokenSequence& t) {
      const auto ids = vocab.encode(t);
      return s2s::sequence_logprob(*f, s2s::source_ids(vocab, s), ids) -
             s2s::sequence_logprob(*l, s2s::null_source(), ids);
    };
  }
  if (name == "backward") {
    const auto* b = need(m.backward, "backward");
    return [b, &vocab](const TokenSequence& s, const TokenSequence& t) {
      return s2s::sequence_logprob(*b, s2s::source_ids(vocab, t), vocab.encode(s));
    };
  }
  throw std::invalid_argument("unknown scorer '" + name + "' (forward, forward/lm, backward)");
}

/// TSV: source, true answer, then 19 distractors.
inline void write_instances(std::ostream& out, const std::vector<RankingInstance>& instances) {
  for (const auto& inst : instances) {
    out << join(inst.source) << '\t' << join(inst.truth);
    for (const auto& d : inst.distractors) out << '\t' << join(d);
    out << '\n';
  }
}

inline std::vector<RankingInstance> read_instances(std::istream& in) {
  std::vector<RankingInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != kCandidates + 1) {
      throw CorpusError("expected " + std::to_string(kCandidates + 1) + " tab-separated fields, got " +
                            std::to_string(fields.size()),
                        line_no);
    }
    RankingInstance inst{tokenize(fields[0]), tokenize(fields[1]), {}};
    for (std::size_t i = 2; i < fields.size(); ++i) inst.distractors.push_back(tokenize(fields[i]));
    try {
      inst.validate();
    } catch (const std::invalid_argument& e) {
      throw CorpusError(e.what(), line_no);
    }
    out.push_back(std::move(inst));
  }
  return out;
}

inline std::vector<RankingInstance> load_instances(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_instances(in);
}

/// Distractors are targets of other pairs that differ from the truth,
/// drawn without replacement with a seeded stream per instance.
inline std::vector<RankingInstance> make_instances(const PairDataset& data, std::size_t count, std::uint64_t seed) {
  if (data.size() < kCandidates) throw std::invalid_argument("need at least 20 pairs to build instances");
  std::vector<RankingInstance> out;
  Rng picker(seed);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t i = n < data.size() && count <= data.size() ? n : picker.index(data.size());
    const auto& pair = data.pairs[i];
    Rng rng(derive_seed(seed, n));
    RankingInstance inst{pair.source, pair.target, {}};
    std::vector<std::size_t> used{i};
    std::size_t attempts = 0;
    while (inst.distractors.size() < kCandidates - 1) {
      if (++attempts > 100 * kCandidates) throw std::runtime_error("not enough distinct targets for distractors");
      const std::size_t j = rng.index(data.size());
      if (std::find(used.begin(), used.end(), j) != used.end()) continue;
      used.push_back(j);
      const auto& cand = data.pairs[j].target;
      if (cand == pair.target ||
          std::find(inst.distractors.begin(), inst.distractors.end(), cand) != inst.distractors.end()) {
        continue;
      }
      inst.distractors.push_back(cand);
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace steer::eval
