#pragma once

// Style restriction over a base conversation model using a small monologue
// corpus of the target speaker:
//   rank      - rerank the speaker's own sentences with the backward model
//   multiply  - product of base and speaker-LM step distributions
//   finetune  - continue training on (pseudo context | previous sentence, T)

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "steer/corpus.hpp"
#include "steer/decoding.hpp"
#include "steer/multiply.hpp"
#include "steer/selector.hpp"
#include "steer/seq2seq.hpp"

namespace steer::scenting {

struct PersonaBundle {
  std::string name;
  PairDataset corpus;  // monologue: empty sources, previous-sentence links
  std::optional<s2s::Seq2SeqModel> lm;
  std::optional<s2s::Seq2SeqModel> finetuned;
  std::optional<s2s::Seq2SeqModel> finetuned_topic;
  std::optional<decoding::SelectorModel> selector;
  double lambda1 = 1.0;
  double lambda2 = 0.5;

  bool can_rank() const { return !corpus.empty(); }
  bool can_multiply() const { return lm.has_value(); }
  bool can_finetune() const { return finetuned.has_value(); }
  bool can_finetune_topic() const { return finetuned_topic.has_value(); }

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("persona mixing weights must be non-negative");
    if (!can_rank() && !can_multiply() && !can_finetune() && !can_finetune_topic()) {
      throw std::invalid_argument("persona '" + name + "' offers no scenting method");
    }
  }
};

// Directory layout: corpus.txt (monologue), lm.model, finetuned.model,
// finetuned_topic.model, selector.model (all optional) and `meta` with
// "name", "lambda1", "lambda2" lines.
inline PersonaBundle load_persona(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("persona directory " + dir.string() + " not found");
  PersonaBundle p;
  p.name = dir.filename().string();
  if (p.name.empty()) p.name = dir.parent_path().filename().string();
  if (fs::exists(dir / "meta")) {
    std::ifstream in(dir / "meta");
    std::string key;
    while (in >> key) {
      if (key == "name") {
        in >> p.name;
      } else if (key == "lambda1") {
        in >> p.lambda1;
      } else if (key == "lambda2") {
        in >> p.lambda2;
      } else {
        std::string skip;
        std::getline(in, skip);
      }
    }
  }
  if (fs::exists(dir / "corpus.txt")) p.corpus = load_pairs((dir / "corpus.txt").string(), CorpusFormat::kMonologue);
  if (fs::exists(dir / "lm.model")) p.lm = s2s::Seq2SeqModel::load((dir / "lm.model").string());
  if (fs::exists(dir / "finetuned.model")) p.finetuned = s2s::Seq2SeqModel::load((dir / "finetuned.model").string());
  if (fs::exists(dir / "finetuned_topic.model")) {
    p.finetuned_topic = s2s::Seq2SeqModel::load((dir / "finetuned_topic.model").string());
  }
  if (fs::exists(dir / "selector.model")) p.selector = decoding::SelectorModel::load((dir / "selector.model").string());
  p.validate();
  return p;
}

inline void write_monologue(std::ostream& out, const PairDataset& corpus) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (i > 0 && corpus.is_monologue() && !corpus.previous[i]) out << '\n';
    out << join(corpus.pairs[i].target) << '\n';
  }
}

inline void save_persona(const std::filesystem::path& dir, const PersonaBundle& p) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream meta(dir / "meta");
    meta << "name " << p.name << "\nlambda1 " << p.lambda1 << "\nlambda2 " << p.lambda2 << '\n';
  }
  if (!p.corpus.empty()) {
    std::ofstream out(dir / "corpus.txt");
    write_monologue(out, p.corpus);
  }
  if (p.lm) p.lm->save((dir / "lm.model").string());
  if (p.finetuned) p.finetuned->save((dir / "finetuned.model").string());
  if (p.finetuned_topic) p.finetuned_topic->save((dir / "finetuned_topic.model").string());
  if (p.selector) p.selector->save((dir / "selector.model").string());
}

struct RankedSentence {
  std::size_t index = 0;  // position in the corpus
  double score = 0.0;     // log p(S | T)
};

/// Scores every corpus sentence T by log p(S|T) under the backward model;
/// p(T) is taken as constant. Top-k, descending, ties in corpus order.
inline std::vector<RankedSentence> rank_retrieve(const std::vector<TokenId>& source,
                                                 const std::vector<std::vector<TokenId>>& corpus,
                                                 const s2s::Seq2SeqModel& backward, std::size_t k) {
  if (k == 0) throw std::invalid_argument("rank_retrieve needs k >= 1");
  if (corpus.empty()) throw std::invalid_argument("persona corpus is empty");
  std::vector<RankedSentence> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out.push_back({i, s2s::sequence_logprob(backward, s2s::wrap_source(corpus[i]), source)});
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedSentence& a, const RankedSentence& b) { return a.score > b.score; });
  if (out.size() > k) out.resize(k);
  return out;
}

inline std::vector<RankedSentence> rank_retrieve(const TokenSequence& source, const PersonaBundle& persona,
                                                 const s2s::Seq2SeqModel& backward, const Vocabulary& vocab,
                                                 std::size_t k) {
  std::vector<std::vector<TokenId>> corpus;
  for (const auto& p : persona.corpus.pairs) corpus.push_back(vocab.encode(p.target));
  return rank_retrieve(vocab.encode(source), corpus, backward, k);
}

struct PseudoPairConfig {
  std::size_t candidates = 50;
  decoding::SamplerConfig sampler;
  std::uint64_t seed = 7;
};

/// Models used to invent a source for each styled sentence T. Candidates are
/// sampled from the backward model given T. With `forward` set they are
/// reranked by log p(T|S') + log acceptor, otherwise by the backward model's
/// own log p(S'|T) + log acceptor.
struct PseudoContextModels {
  const s2s::Seq2SeqModel* backward = nullptr;
  const s2s::Seq2SeqModel* lm = nullptr;
  const decoding::SelectorModel* selector = nullptr;
  const s2s::Seq2SeqModel* forward = nullptr;
};

inline std::vector<TokenId> pseudo_context(const PseudoContextModels& models, const std::vector<TokenId>& target,
                                           const PseudoPairConfig& config, std::uint64_t seed) {
  decoding::DecodingModels dm{models.backward, models.lm, models.selector, {}};
  auto cands = decoding::generate_candidates(dm, s2s::wrap_source(target), config.candidates, config.sampler, seed);
  if (models.forward) {
    decoding::rerank(cands, *models.forward, target);
  } else {
    for (auto& c : cands) {
      c.backward_score = c.log_forward();
      c.composite = c.backward_score + c.log_acceptor();
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const decoding::Candidate& a, const decoding::Candidate& b) { return a.composite > b.composite; });
  }
  return cands.front().words();
}

/// One (pseudo context, T) pair per styled sentence, followed by
/// (previous sentence, T) when T has a predecessor in its document.
inline PairDataset build_pseudo_pairs(const PairDataset& styled, const Vocabulary& vocab,
                                      const PseudoContextModels& models, const PseudoPairConfig& config) {
  if (!models.backward || !models.lm) throw std::invalid_argument("pseudo pairs need a backward model and an LM");
  PairDataset out;
  for (std::size_t i = 0; i < styled.size(); ++i) {
    const auto& target = styled.pairs[i].target;
    const auto ids = vocab.encode(target);
    const auto context = pseudo_context(models, ids, config, derive_seed(config.seed, i));
    out.pairs.push_back({vocab.decode(context), target});
    if (styled.is_monologue() && styled.previous[i]) {
      out.pairs.push_back({styled.pairs[*styled.previous[i]].target, target});
    }
  }
  return out;
}

/// Per-token perplexity of `data` under the renormalised product
/// base^lambda1 * style_lm^lambda2; used to tune the mixing weights.
inline double multiply_perplexity(const s2s::Seq2SeqModel& base, const s2s::Seq2SeqModel& style_lm,
                                  const std::vector<s2s::EncodedPair>& data, double lambda1, double lambda2) {
  if (data.empty()) throw std::invalid_argument("perplexity needs data");
  const auto null_src = s2s::null_source();
  const s2s::ContextSet sctx = s2s::encode(style_lm, null_src);
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& pair : data) {
    const s2s::ContextSet ctx = s2s::encode(base, pair.source);
    s2s::DecoderState bs = s2s::initial_state(base, ctx);
    s2s::DecoderState ss = s2s::initial_state(style_lm, sctx);
    TokenId prev = Vocabulary::kBoundary;
    for (std::size_t t = 0; t <= pair.target.size(); ++t) {
      const TokenId next = t < pair.target.size() ? pair.target[t] : Vocabulary::kBoundary;
      auto b = s2s::decode_step(base, bs, std::span<const TokenId>(&prev, 1), ctx);
      auto st = s2s::decode_step(style_lm, ss, std::span<const TokenId>(&prev, 1), sctx);
      const Eigen::VectorXd q = multiply_mix(b.probs.col(0), st.probs.col(0), lambda1, lambda2);
      nll -= std::log(std::max(q[next], kMixFloor));
      ++tokens;
      bs = std::move(b.state);
      ss = std::move(st.state);
      prev = next;
    }
  }
  return std::exp(nll / static_cast<double>(tokens));
}

/// Validation pairs for a monologue corpus: each sentence conditioned on its
/// previous sentence, document-initial sentences on the null source.
inline std::vector<s2s::EncodedPair> previous_sentence_pairs(const PairDataset& monologue, const Vocabulary& vocab) {
  std::vector<s2s::EncodedPair> out;
  for (std::size_t i = 0; i < monologue.size(); ++i) {
    const auto target = vocab.encode(monologue.pairs[i].target);
    const bool has_prev = monologue.is_monologue() && monologue.previous[i];
    out.push_back({has_prev ? s2s::source_ids(vocab, monologue.pairs[*monologue.previous[i]].target) : s2s::null_source(),
                   target});
  }
  return out;
}

/// Stop rule: training continues while validation perplexity does not
/// increase; the epoch before the first increase is the one returned.
class EarlyStopping {
 public:
  EarlyStopping() = default;
  explicit EarlyStopping(double baseline) : best_(baseline), last_(baseline), best_epoch_(0), any_(true) {}

  /// Returns true to keep training.
  bool observe(std::size_t epoch, double perplexity) {
    history_.push_back(perplexity);
    if (any_ && perplexity > last_) {
      stopped_ = true;
      return false;
    }
    best_ = perplexity;
    last_ = perplexity;
    best_epoch_ = epoch;
    any_ = true;
    return true;
  }

  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  bool stopped() const { return stopped_; }
  const std::vector<double>& history() const { return history_; }

 private:
  double best_ = 0.0;
  double last_ = 0.0;
  std::size_t best_epoch_ = 0;
  bool any_ = false;
  bool stopped_ = false;
  std::vector<double> history_;
};

struct FinetuneConfig {
  s2s::TrainConfig train;  // epochs = maximum number of epochs
  decoding::SelectorConfig selector;
  decoding::HarvestConfig harvest;
};

struct FinetuneResult {
  s2s::Seq2SeqModel model;
  decoding::SelectorModel selector;
  std::size_t best_epoch = 0;           // 0 = base model was never improved upon
  std::vector<double> val_perplexity;   // index 0 = base model
  bool stopped_early = false;
};

/// Continues ADAM training from the base parameters, checks validation
/// perplexity after every epoch and keeps the checkpoint before the first
/// increase. The styled selector is retrained from the base selector.
/// Topic-conditioned models take one topic input per pair in `topics` and
/// `val_topics`.
inline FinetuneResult finetune(const s2s::Seq2SeqModel& base, const decoding::SelectorModel& base_selector,
                               const s2s::Seq2SeqModel& lm, const std::vector<s2s::EncodedPair>& pairs,
                               const std::vector<s2s::EncodedPair>& validation, const FinetuneConfig& config,
                               const std::vector<Eigen::MatrixXd>* topics = nullptr,
                               const std::vector<Eigen::MatrixXd>* val_topics = nullptr) {
  if (validation.empty()) throw std::invalid_argument("finetune needs a non-empty validation set");
  if (pairs.empty()) throw std::invalid_argument("finetune needs training pairs");
  if (static_cast<bool>(topics) != static_cast<bool>(val_topics)) {
    throw std::invalid_argument("topic inputs must be given for both training and validation pairs");
  }
  FinetuneResult result{base, base_selector, 0, {}, false};
  const double base_ppl = s2s::perplexity(base, validation, val_topics);
  result.val_perplexity.push_back(base_ppl);
  EarlyStopping stop(base_ppl);
  s2s::Seq2SeqModel working = base;
  s2s::train(working, pairs, config.train, topics, [&](std::size_t epoch, const s2s::Seq2SeqModel& m, double) {
    const double ppl = s2s::perplexity(m, validation, val_topics);
    result.val_perplexity.push_back(ppl);
    if (!stop.observe(epoch, ppl)) return false;
    result.model = m;
    return true;
  });
  result.best_epoch = stop.best_epoch();
  result.stopped_early = stop.stopped();
  const auto examples = decoding::harvest_selector_examples(result.model, lm, pairs, config.harvest, topics);
  result.selector = decoding::fit_selector(examples, config.selector, &base_selector);
  return result;
}

}  // namespace steer::scenting
