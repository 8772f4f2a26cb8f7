#pragma once

// Candidate generation and Bayes-rule reranking.
//
// Selective sampling draws N tokens per step from p(w_t|S), scores each with
// the selector and keeps one: a uniformly random pick among those above the
// threshold, or the best-scored one when none passes. Candidates are then
// ranked by log p(S|T) + sum_t log acceptor_t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "steer/multiply.hpp"
#include "steer/rng.hpp"
#include "steer/selector.hpp"
#include "steer/seq2seq.hpp"

namespace steer::decoding {

struct Candidate {
  std::vector<TokenId> tokens;       // includes the end boundary when generated
  std::vector<double> step_logprob;  // log p(w_t | S) of the sampling distribution
  std::vector<double> acceptor;      // selector probability of each chosen token
  double backward_score = std::numeric_limits<double>::quiet_NaN();
  double composite = std::numeric_limits<double>::quiet_NaN();
  std::size_t multiplicity = 1;
  std::size_t index = 0;  // first generation lane that produced it

  /// Tokens without the trailing boundary symbol.
  std::vector<TokenId> words() const {
    std::vector<TokenId> out = tokens;
    if (!out.empty() && out.back() == Vocabulary::kBoundary) out.pop_back();
    return out;
  }

  bool terminated() const { return !tokens.empty() && tokens.back() == Vocabulary::kBoundary; }

  double log_acceptor() const {
    double s = 0.0;
    for (double a : acceptor) s += std::log(a);
    return s;
  }

  double log_forward() const { return std::accumulate(step_logprob.begin(), step_logprob.end(), 0.0); }
};

/// Index of the chosen sample: uniform among scores above `threshold`,
/// otherwise the first highest-scored sample.
inline std::size_t select_token(std::span<const double> scores, double threshold, Rng& rng) {
  if (scores.empty()) throw std::invalid_argument("select_token needs at least one sample");
  std::vector<std::size_t> accepted;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > threshold) accepted.push_back(i);
  if (!accepted.empty()) return accepted[accepted.size() == 1 ? 0 : rng.index(accepted.size())];
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

enum class SamplingMode { kVanilla, kSelective };

/// Product-of-experts style mixing applied to the sampling distribution.
struct StyleMix {
  const s2s::Seq2SeqModel* lm = nullptr;
  double lambda1 = 1.0;
  double lambda2 = 0.5;
};

struct DecodingModels {
  const s2s::Seq2SeqModel* forward = nullptr;
  const s2s::Seq2SeqModel* lm = nullptr;  // p(w|∅), selector feature 3
  const SelectorModel* selector = nullptr;
  StyleMix style;
};

struct SamplerConfig {
  SamplingMode mode = SamplingMode::kSelective;
  std::size_t samples_per_step = 10;  // N
  std::size_t max_len = 30;
};

namespace detail {

struct Lane {
  std::size_t id;
  Rng rng;
  Candidate cand;
};

template <typename Cols>
Eigen::MatrixXd pick_columns(const Eigen::MatrixXd& m, const Cols& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
  return out;
}

}  // namespace detail

/// Generates `n` independent samples in lock-step. Lane i draws from its own
/// stream derive_seed(seed, i). `topic` is |L| x 1 (shared) or |L| x n.
inline std::vector<Candidate> sample_lanes(const DecodingModels& models, std::span<const TokenId> source,
                                           std::size_t n, const SamplerConfig& config, std::uint64_t seed,
                                           const Eigen::MatrixXd* topic = nullptr) {
  if (!models.forward || !models.lm) throw std::invalid_argument("decoding needs a forward model and an LM");
  if (n == 0) throw std::invalid_argument("need at least one candidate");
  if (config.mode == SamplingMode::kSelective && !models.selector) {
    throw std::invalid_argument("selective sampling needs a selector");
  }
  if (config.samples_per_step == 0) throw std::invalid_argument("samples per step must be at least 1");
  const auto& fwd = *models.forward;
  const auto& lm = *models.lm;
  const auto vocab = static_cast<std::size_t>(fwd.shape().vocab);
  if (lm.shape().vocab != vocab || (models.style.lm && models.style.lm->shape().vocab != vocab)) {
    throw std::invalid_argument("decoding models must share one vocabulary");
  }
  const bool per_lane_topic = topic && topic->cols() > 1;
  if (per_lane_topic && static_cast<std::size_t>(topic->cols()) != n) {
    throw std::invalid_argument("per-lane topic matrix needs one column per candidate");
  }

  const auto null_src = s2s::null_source();
  const s2s::ContextSet fctx = s2s::encode(fwd, source);
  const s2s::ContextSet lctx = s2s::encode(lm, null_src);
  std::optional<s2s::ContextSet> sctx;
  if (models.style.lm) sctx = s2s::encode(*models.style.lm, null_src);

  const auto width = static_cast<Eigen::Index>(n);
  s2s::DecoderState fs = s2s::initial_state(fwd, fctx, width);
  s2s::DecoderState ls = s2s::initial_state(lm, lctx, width);
  s2s::DecoderState ss;
  if (sctx) ss = s2s::initial_state(*models.style.lm, *sctx, width);

  std::vector<detail::Lane> lanes;
  lanes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) lanes.push_back({i, Rng(derive_seed(seed, i)), {}});
  for (auto& l : lanes) l.cand.index = l.id;

  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  std::vector<TokenId> prev(n, Vocabulary::kBoundary);
  std::vector<Candidate> done(n);
  std::vector<double> scores;
  std::vector<TokenId> draws;

  for (std::size_t t = 0; t < config.max_len && !active.empty(); ++t) {
    Eigen::MatrixXd lane_topic;
    const Eigen::MatrixXd* step_topic = topic;
    if (per_lane_topic) {
      lane_topic = detail::pick_columns(*topic, active);
      step_topic = &lane_topic;
    }
    auto f = s2s::decode_step(fwd, fs, prev, fctx, step_topic);
    auto l = s2s::decode_step(lm, ls, prev, lctx);
    std::optional<s2s::StepOutput> s;
    if (sctx) s = s2s::decode_step(*models.style.lm, ss, prev, *sctx);

    std::vector<Eigen::Index> keep;
    std::vector<std::size_t> still_active;
    std::vector<TokenId> next_prev;
    for (std::size_t j = 0; j < active.size(); ++j) {
      auto& lane = lanes[active[j]];
      const auto col = static_cast<Eigen::Index>(j);
      Eigen::VectorXd dist = f.probs.col(col);
      if (s) dist = scenting::multiply_mix(dist, s->probs.col(col), models.style.lambda1, models.style.lambda2);
      const Eigen::VectorXd lm_dist = l.probs.col(col);

      TokenId token = 0;
      double acceptor = 1.0;
      if (config.mode == SamplingMode::kVanilla) {
        token = static_cast<TokenId>(lane.rng.categorical(dist, vocab));
        if (models.selector) acceptor = models.selector->score(selector_features(dist, token, lm_dist));
      } else {
        draws.clear();
        scores.clear();
        for (std::size_t k = 0; k < config.samples_per_step; ++k) {
          const auto w = static_cast<TokenId>(lane.rng.categorical(dist, vocab));
          draws.push_back(w);
          scores.push_back(models.selector->score(selector_features(dist, w, lm_dist)));
        }
        const std::size_t pick = select_token(scores, models.selector->threshold(), lane.rng);
        token = draws[pick];
        acceptor = scores[pick];
      }
      lane.cand.tokens.push_back(token);
      lane.cand.step_logprob.push_back(std::log(std::max(dist[token], kLogFloor)));
      lane.cand.acceptor.push_back(acceptor);
      if (token == Vocabulary::kBoundary || lane.cand.tokens.size() >= config.max_len) {
        done[lane.id] = std::move(lane.cand);
      } else {
        keep.push_back(col);
        still_active.push_back(active[j]);
        next_prev.push_back(token);
      }
    }
    if (still_active.empty()) {
      active.clear();
      break;
    }
    fs = f.state.select(keep);
    ls = l.state.select(keep);
    if (s) ss = s->state.select(keep);
    active = std::move(still_active);
    prev = std::move(next_prev);
  }
  for (auto idx : active) done[idx] = std::move(lanes[idx].cand);
  return done;
}

inline Candidate selective_sample(const DecodingModels& models, std::span<const TokenId> source,
                                  const SamplerConfig& config, std::uint64_t seed,
                                  const Eigen::MatrixXd* topic = nullptr) {
  return sample_lanes(models, source, 1, config, seed, topic).front();
}

/// Collapses identical token sequences onto their first occurrence,
/// accumulating multiplicity. Order of first occurrence is kept.
inline std::vector<Candidate> collapse_duplicates(std::vector<Candidate> all) {
  std::map<std::vector<TokenId>, std::size_t> seen;
  std::vector<Candidate> out;
  for (auto& c : all) {
    auto [it, inserted] = seen.try_emplace(c.tokens, out.size());
    if (inserted) {
      c.multiplicity = 1;
      out.push_back(std::move(c));
    } else {
      ++out[it->second].multiplicity;
    }
  }
  return out;
}

inline std::vector<Candidate> generate_candidates(const DecodingModels& models, std::span<const TokenId> source,
                                                  std::size_t n, const SamplerConfig& config, std::uint64_t seed,
                                                  const Eigen::MatrixXd* topic = nullptr) {
  return collapse_duplicates(sample_lanes(models, source, n, config, seed, topic));
}

/// composite = log p(S | T) + sum log acceptor, stable descending sort.
/// `source` is the bare source sentence S.
inline void rerank(std::vector<Candidate>& candidates, const s2s::Seq2SeqModel& backward,
                   std::span<const TokenId> source) {
  for (auto& c : candidates) {
    const auto words = c.words();
    c.backward_score = s2s::sequence_logprob(backward, s2s::wrap_source(words), source);
    c.composite = c.backward_score + c.log_acceptor();
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.composite > b.composite; });
}

}  // namespace steer::decoding
