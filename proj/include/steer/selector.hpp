#pragma once

// Sample selector: a one-hidden-layer perceptron over three per-token
// features that scores whether a sampled token should be accepted. Its
// acceptance probabilities double as the p(T) term at rerank time.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "steer/binary_io.hpp"
#include "steer/rng.hpp"
#include "steer/seq2seq.hpp"

namespace steer::decoding {

using Features = std::array<double, 3>;

inline constexpr double kLogFloor = 1e-12;

/// [log p(token|S), entropy of p(.|S) in nats, log p(token|∅)]; zero
/// probabilities are floored at 1e-12 before the log.
template <typename Dist, typename LmDist>
Features selector_features(const Dist& dist, TokenId token, const LmDist& lm_dist) {
  const auto n = static_cast<std::size_t>(dist.size());
  if (token >= n || token >= static_cast<std::size_t>(lm_dist.size())) {
    throw std::out_of_range("token outside the distribution");
  }
  double entropy = 0.0;
  for (std::size_t w = 0; w < n; ++w) {
    const double p = dist[static_cast<Eigen::Index>(w)];
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return {std::log(std::max(static_cast<double>(dist[token]), kLogFloor)), entropy,
          std::log(std::max(static_cast<double>(lm_dist[token]), kLogFloor))};
}

inline Features selector_features(std::span<const double> dist, TokenId token, std::span<const double> lm_dist) {
  return selector_features(Eigen::Map<const Eigen::VectorXd>(dist.data(), static_cast<Eigen::Index>(dist.size())),
                           token,
                           Eigen::Map<const Eigen::VectorXd>(lm_dist.data(), static_cast<Eigen::Index>(lm_dist.size())));
}

class SelectorModel {
 public:
  static constexpr double kClamp = 1e-12;

  SelectorModel() : SelectorModel(8) {}

  explicit SelectorModel(std::size_t hidden, double threshold = 0.5)
      : threshold_(threshold),
        mean_(Eigen::Vector3d::Zero()),
        inv_scale_(Eigen::Vector3d::Ones()),
        w1_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hidden), 3)),
        b1_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden))),
        w2_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden))),
        b2_(0.0) {
    if (hidden == 0) throw std::invalid_argument("selector needs at least one hidden unit");
    set_threshold(threshold);
  }

  double threshold() const { return threshold_; }
  void set_threshold(double t) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("selector threshold must lie in (0, 1)");
    threshold_ = t;
  }

  std::size_t hidden() const { return static_cast<std::size_t>(w1_.rows()); }

  /// Acceptance probability, clamped into [1e-12, 1 - 1e-12].
  double score(const Features& f) const {
    const double logit = forward(f, nullptr, nullptr);
    const double p = 1.0 / (1.0 + std::exp(-logit));
    return std::clamp(p, kClamp, 1.0 - kClamp);
  }

  bool accepts(const Features& f) const { return score(f) > threshold_; }

  // Raw parameter access for training and tests.
  Eigen::Vector3d& mean() { return mean_; }
  Eigen::Vector3d& inv_scale() { return inv_scale_; }
  Eigen::MatrixXd& w1() { return w1_; }
  Eigen::VectorXd& b1() { return b1_; }
  Eigen::VectorXd& w2() { return w2_; }
  double& b2() { return b2_; }
  const Eigen::MatrixXd& w1() const { return w1_; }
  const Eigen::VectorXd& w2() const { return w2_; }

  /// Pre-sigmoid output; optionally exposes the standardized input and the
  /// hidden activations for back-propagation.
  double forward(const Features& f, Eigen::Vector3d* x_out, Eigen::VectorXd* a_out) const {
    Eigen::Vector3d x;
    for (int i = 0; i < 3; ++i) x[i] = (f[static_cast<std::size_t>(i)] - mean_[i]) * inv_scale_[i];
    Eigen::VectorXd a = (w1_ * x + b1_).array().tanh().matrix();
    const double logit = w2_.dot(a) + b2_;
    if (x_out) *x_out = x;
    if (a_out) *a_out = std::move(a);
    return logit;
  }

  // "sel-v1 hidden\n" then threshold, mean, inv_scale, w1 (column-major),
  // b1, w2, b2 as little-endian doubles.
  void save(std::ostream& out) const {
    out << "sel-v1 " << hidden() << '\n';
    io::write_le(out, threshold_);
    io::write_doubles(out, mean_.data(), 3);
    io::write_doubles(out, inv_scale_.data(), 3);
    io::write_doubles(out, w1_.data(), static_cast<std::size_t>(w1_.size()));
    io::write_doubles(out, b1_.data(), static_cast<std::size_t>(b1_.size()));
    io::write_doubles(out, w2_.data(), static_cast<std::size_t>(w2_.size()));
    io::write_le(out, b2_);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    save(out);
  }

  static SelectorModel load(std::istream& in) {
    const auto h = io::read_header(in, "sel-v1");
    if (h.size() != 1) throw io::FormatError("sel-v1 header needs 1 field");
    SelectorModel s(io::parse_size(h[0]));
    s.set_threshold(io::read_le<double>(in));
    io::read_doubles(in, s.mean_.data(), 3);
    io::read_doubles(in, s.inv_scale_.data(), 3);
    io::read_doubles(in, s.w1_.data(), static_cast<std::size_t>(s.w1_.size()));
    io::read_doubles(in, s.b1_.data(), static_cast<std::size_t>(s.b1_.size()));
    io::read_doubles(in, s.w2_.data(), static_cast<std::size_t>(s.w2_.size()));
    s.b2_ = io::read_le<double>(in);
    return s;
  }

  static SelectorModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    return load(in);
  }

 private:
  double threshold_;
  Eigen::Vector3d mean_;
  Eigen::Vector3d inv_scale_;
  Eigen::MatrixXd w1_;
  Eigen::VectorXd b1_;
  Eigen::VectorXd w2_;
  double b2_;
};

struct SelectorExample {
  Features features;
  bool accept = false;
};

struct HarvestConfig {
  std::size_t negatives = 4;  // K distinct sampled non-reference tokens per step
  std::size_t max_attempts_per_negative = 16;
  std::uint64_t seed = 7;
};

/// Teacher-forced examples: the reference token at each step is a positive,
/// up to K distinct tokens sampled from the model's step distribution that
/// differ from the reference are negatives.
inline std::vector<SelectorExample> harvest_selector_examples(const s2s::Seq2SeqModel& forward,
                                                              const s2s::Seq2SeqModel& lm,
                                                              const std::vector<s2s::EncodedPair>& data,
                                                              const HarvestConfig& config,
                                                              const std::vector<Eigen::MatrixXd>* topics = nullptr) {
  std::vector<SelectorExample> out;
  const auto null_src = s2s::null_source();
  const s2s::ContextSet lm_ctx = s2s::encode(lm, null_src);
  std::size_t negatives = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& pair = data[i];
    Rng rng(derive_seed(config.seed, i));
    const s2s::ContextSet ctx = s2s::encode(forward, pair.source);
    s2s::DecoderState fs = s2s::initial_state(forward, ctx);
    s2s::DecoderState ls = s2s::initial_state(lm, lm_ctx);
    const Eigen::MatrixXd* topic = topics ? &(*topics)[i] : nullptr;
    TokenId prev = Vocabulary::kBoundary;
    for (std::size_t t = 0; t <= pair.target.size(); ++t) {
      const TokenId ref = t < pair.target.size() ? pair.target[t] : Vocabulary::kBoundary;
      auto f = s2s::decode_step(forward, fs, std::span<const TokenId>(&prev, 1), ctx, topic);
      auto l = s2s::decode_step(lm, ls, std::span<const TokenId>(&prev, 1), lm_ctx);
      const Eigen::VectorXd p = f.probs.col(0);
      const Eigen::VectorXd q = l.probs.col(0);
      out.push_back({selector_features(p, ref, q), true});
      std::vector<TokenId> seen;
      const std::size_t attempts = config.negatives * config.max_attempts_per_negative;
      for (std::size_t a = 0; a < attempts && seen.size() < config.negatives; ++a) {
        const auto w = static_cast<TokenId>(rng.categorical(p, static_cast<std::size_t>(p.size())));
        if (w == ref || std::find(seen.begin(), seen.end(), w) != seen.end()) continue;
        seen.push_back(w);
        out.push_back({selector_features(p, w, q), false});
        ++negatives;
      }
      fs = std::move(f.state);
      ls = std::move(l.state);
      prev = ref;
    }
  }
  if (negatives == 0) throw std::runtime_error("selector training data has no negatives (model is deterministic on the data)");
  return out;
}

struct SelectorConfig {
  std::size_t hidden = 8;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double threshold = 0.5;
  double init_range = 0.5;
  std::uint64_t seed = 7;
};

/// Logistic loss with class-balanced weights, ADAM updates. With `init`
/// the weights and input standardization of `init` are the starting point.
inline SelectorModel fit_selector(const std::vector<SelectorExample>& examples, const SelectorConfig& config,
                                  const SelectorModel* init = nullptr) {
  if (examples.empty()) throw std::invalid_argument("selector training needs examples");
  std::size_t positives = 0;
  for (const auto& e : examples) positives += e.accept ? 1 : 0;
  const std::size_t negatives = examples.size() - positives;
  if (positives == 0 || negatives == 0) throw std::invalid_argument("selector training needs both classes");

  SelectorModel model = init ? *init : SelectorModel(config.hidden, config.threshold);
  Rng rng(config.seed);
  if (!init) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
    for (const auto& e : examples) {
      for (int i = 0; i < 3; ++i) {
        mean[i] += e.features[static_cast<std::size_t>(i)];
        sq[i] += e.features[static_cast<std::size_t>(i)] * e.features[static_cast<std::size_t>(i)];
      }
    }
    const double n = static_cast<double>(examples.size());
    mean /= n;
    for (int i = 0; i < 3; ++i) {
      const double var = std::max(sq[i] / n - mean[i] * mean[i], 0.0);
      model.inv_scale()[i] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    model.mean() = mean;
    for (Eigen::Index i = 0; i < model.w1().size(); ++i) model.w1().data()[i] = rng.uniform(-config.init_range, config.init_range);
    for (Eigen::Index i = 0; i < model.w2().size(); ++i) model.w2()[i] = rng.uniform(-config.init_range, config.init_range);
  }

  const double pos_weight = 0.5 * static_cast<double>(examples.size()) / static_cast<double>(positives);
  const double neg_weight = 0.5 * static_cast<double>(examples.size()) / static_cast<double>(negatives);

  const auto H = static_cast<Eigen::Index>(model.hidden());
  Eigen::MatrixXd mw1 = Eigen::MatrixXd::Zero(H, 3), vw1 = mw1;
  Eigen::VectorXd mb1 = Eigen::VectorXd::Zero(H), vb1 = mb1, mw2 = mb1, vw2 = mb1;
  double mb2 = 0.0, vb2 = 0.0;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Eigen::MatrixXd gw1 = Eigen::MatrixXd::Zero(H, 3);
      Eigen::VectorXd gb1 = Eigen::VectorXd::Zero(H), gw2 = Eigen::VectorXd::Zero(H);
      double gb2 = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& e = examples[order[i]];
        Eigen::Vector3d x;
        Eigen::VectorXd a;
        const double logit = model.forward(e.features, &x, &a);
        const double p = 1.0 / (1.0 + std::exp(-logit));
        const double w = e.accept ? pos_weight : neg_weight;
        const double d_logit = w * (p - (e.accept ? 1.0 : 0.0));
        gw2 += d_logit * a;
        gb2 += d_logit;
        const Eigen::VectorXd d_pre = (d_logit * model.w2()).cwiseProduct((1.0 - a.array().square()).matrix());
        gw1 += d_pre * x.transpose();
        gb1 += d_pre;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      gw1 *= inv;
      gb1 *= inv;
      gw2 *= inv;
      gb2 *= inv;
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto adam = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        param -= (config.learning_rate * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
      };
      adam(model.w1(), mw1, vw1, gw1);
      adam(model.b1(), mb1, vb1, gb1);
      adam(model.w2(), mw2, vw2, gw2);
      mb2 = beta1 * mb2 + (1.0 - beta1) * gb2;
      vb2 = beta2 * vb2 + (1.0 - beta2) * gb2 * gb2;
      model.b2() -= config.learning_rate * (mb2 / c1) / (std::sqrt(vb2 / c2) + eps);
    }
  }
  return model;
}

inline SelectorModel train_selector(const s2s::Seq2SeqModel& forward, const s2s::Seq2SeqModel& lm,
                                    const std::vector<s2s::EncodedPair>& data, const SelectorConfig& config,
                                    const HarvestConfig& harvest = {}, const SelectorModel* init = nullptr) {
  return fit_selector(harvest_selector_examples(forward, lm, data, harvest), config, init);
}

struct SelectorAccuracy {
  double accuracy = 0.0;
  double balanced = 0.0;  // mean of per-class recall
};

inline SelectorAccuracy selector_accuracy(const SelectorModel& selector, const std::vector<SelectorExample>& examples) {
  std::size_t tp = 0, tn = 0, pos = 0, neg = 0;
  for (const auto& e : examples) {
    const bool said = selector.accepts(e.features);
    if (e.accept) {
      ++pos;
      tp += said ? 1 : 0;
    } else {
      ++neg;
      tn += said ? 0 : 1;
    }
  }
  SelectorAccuracy acc;
  if (!examples.empty()) acc.accuracy = static_cast<double>(tp + tn) / static_cast<double>(examples.size());
  const double tpr = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
  const double tnr = neg ? static_cast<double>(tn) / static_cast<double>(neg) : 0.0;
  acc.balanced = 0.5 * (tpr + tnr);
  return acc;
}

}  // namespace steer::decoding
