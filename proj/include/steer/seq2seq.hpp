#pragma once

// Stacked-LSTM encoder-decoder with multiplicative attention:
//
//   e_{t,i} = hbar_t^T W_a h_i,   alpha = softmax_i(e),   c_t = sum_i alpha_i h_i
//   z_t     = tanh(W_c [c_t; hbar_t]),  p(y_t | .) ∝ exp(W_s z_t + b)
//
// The previous attentional state z_{t-1} is fed back into the first decoder
// layer, next to the word embedding and the optional topic vector. The same
// network serves as forward model p(T|S), backward model p(S|T) and sentence
// LM p(T|∅) (null source = a lone pair of boundary symbols).
//
// Two forward implementations exist: a tape-based one used for training and
// a plain Eigen one used for inference. Tests pin them to each other.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "steer/autodiff.hpp"
#include "steer/binary_io.hpp"
#include "steer/corpus.hpp"
#include "steer/rng.hpp"

namespace steer::s2s {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelShape {
  std::size_t vocab = 0;
  std::size_t embed = 64;   // d
  std::size_t hidden = 128; // m
  std::size_t layers = 2;
  std::size_t topic_width = 0;  // |L|, 0 = unconditioned

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct LstmLayer {
  Matrix input;   // 4m x in
  Matrix hidden;  // 4m x m
  Matrix bias;    // 4m x 1
  Matrix feed;    // 4m x m, first decoder layer only (attentional feedback)
  Matrix topic;   // 4m x |L|, first decoder layer only
};

class Seq2SeqModel {
 public:
  Seq2SeqModel() = default;

  explicit Seq2SeqModel(const ModelShape& shape) : shape_(shape) {
    if (shape.vocab < 1 || shape.embed < 1 || shape.hidden < 1 || shape.layers < 1) {
      throw std::invalid_argument("seq2seq shape needs positive vocab, embed, hidden and layers");
    }
    const auto v = static_cast<Eigen::Index>(shape.vocab);
    const auto d = static_cast<Eigen::Index>(shape.embed);
    const auto m = static_cast<Eigen::Index>(shape.hidden);
    const auto tw = static_cast<Eigen::Index>(shape.topic_width);
    embedding = Matrix::Zero(v, d);
    for (std::size_t l = 0; l < shape.layers; ++l) {
      const Eigen::Index in = l == 0 ? d : m;
      encoder.push_back({Matrix::Zero(4 * m, in), Matrix::Zero(4 * m, m), Matrix::Zero(4 * m, 1), Matrix(), Matrix()});
      decoder.push_back({Matrix::Zero(4 * m, in), Matrix::Zero(4 * m, m), Matrix::Zero(4 * m, 1),
                         l == 0 ? Matrix::Zero(4 * m, m) : Matrix(), l == 0 ? Matrix::Zero(4 * m, tw) : Matrix()});
    }
    attention = Matrix::Zero(m, m);
    combine_context = Matrix::Zero(m, m);
    combine_hidden = Matrix::Zero(m, m);
    output = Matrix::Zero(v, m);
    output_bias = Matrix::Zero(v, 1);
  }

  /// Uniform(-range, range) initialization of every block.
  static Seq2SeqModel random(const ModelShape& shape, std::uint64_t seed, double range = 0.08) {
    Seq2SeqModel model(shape);
    Rng rng(seed);
    for (Matrix* block : model.blocks()) {
      for (Eigen::Index i = 0; i < block->size(); ++i) block->data()[i] = rng.uniform(-range, range);
    }
    return model;
  }

  Seq2SeqModel zeros_like() const { return Seq2SeqModel(shape_); }

  const ModelShape& shape() const { return shape_; }
  Eigen::Index hidden_size() const { return static_cast<Eigen::Index>(shape_.hidden); }

  // Serialization and optimizer order; the file format lists blocks this way.
  std::vector<Matrix*> blocks() {
    std::vector<Matrix*> out{&embedding};
    for (auto& l : encoder) out.insert(out.end(), {&l.input, &l.hidden, &l.bias});
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      auto& l = decoder[i];
      out.insert(out.end(), {&l.input, &l.hidden, &l.bias});
      if (i == 0) out.insert(out.end(), {&l.feed, &l.topic});
    }
    out.insert(out.end(), {&attention, &combine_context, &combine_hidden, &output, &output_bias});
    return out;
  }

  std::vector<const Matrix*> blocks() const {
    auto mut = const_cast<Seq2SeqModel*>(this)->blocks();
    return {mut.begin(), mut.end()};
  }

  std::vector<std::string> block_names() const {
    std::vector<std::string> out{"embedding"};
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      for (auto n : {"input", "hidden", "bias"}) out.push_back("encoder." + std::to_string(i) + "." + n);
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      for (auto n : {"input", "hidden", "bias"}) out.push_back("decoder." + std::to_string(i) + "." + n);
      if (i == 0) {
        out.push_back("decoder.0.feed");
        out.push_back("decoder.0.topic");
      }
    }
    for (auto n : {"attention", "combine_context", "combine_hidden", "output", "output_bias"}) out.emplace_back(n);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* b : blocks()) n += static_cast<std::size_t>(b->size());
    return n;
  }

  bool all_finite() const {
    for (const Matrix* b : blocks())
      if (!b->allFinite()) return false;
    return true;
  }

  // "s2s-v1 vocab d m layers topic_width\n" then blocks() in order, each
  // column-major little-endian doubles.
  void save(std::ostream& out) const {
    out << "s2s-v1 " << shape_.vocab << ' ' << shape_.embed << ' ' << shape_.hidden << ' ' << shape_.layers << ' '
        << shape_.topic_width << '\n';
    for (const Matrix* b : blocks()) io::write_doubles(out, b->data(), static_cast<std::size_t>(b->size()));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    save(out);
  }

  static Seq2SeqModel load(std::istream& in) {
    const auto h = io::read_header(in, "s2s-v1");
    if (h.size() != 5) throw io::FormatError("s2s-v1 header needs 5 fields");
    Seq2SeqModel model(ModelShape{io::parse_size(h[0]), io::parse_size(h[1]), io::parse_size(h[2]),
                                  io::parse_size(h[3]), io::parse_size(h[4])});
    for (Matrix* b : model.blocks()) io::read_doubles(in, b->data(), static_cast<std::size_t>(b->size()));
    return model;
  }

  static Seq2SeqModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    return load(in);
  }

  Matrix embedding;  // vocab x d
  std::vector<LstmLayer> encoder;
  std::vector<LstmLayer> decoder;
  Matrix attention;        // W_a
  Matrix combine_context;  // W_c, context half
  Matrix combine_hidden;   // W_c, decoder-state half
  Matrix output;           // W_s
  Matrix output_bias;      // b

 private:
  ModelShape shape_;
};

/// Ids ready for the network: the source is wrapped in boundary symbols, the
/// target is bare (the decoder adds <s> in front and predicts <s> at the end).
struct EncodedPair {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
};

inline std::vector<TokenId> null_source() { return {Vocabulary::kBoundary, Vocabulary::kBoundary}; }

inline std::vector<TokenId> wrap_source(std::span<const TokenId> ids) {
  std::vector<TokenId> out{Vocabulary::kBoundary};
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(Vocabulary::kBoundary);
  return out;
}

inline std::vector<TokenId> source_ids(const Vocabulary& vocab, const TokenSequence& tokens) {
  const auto ids = vocab.encode(tokens);
  return wrap_source(ids);
}

inline EncodedPair encode_pair(const Vocabulary& vocab, const SentencePair& pair) {
  return {source_ids(vocab, pair.source), vocab.encode(pair.target)};
}

inline std::vector<EncodedPair> encode_dataset(const Vocabulary& vocab, const PairDataset& data) {
  std::vector<EncodedPair> out;
  out.reserve(data.size());
  for (const auto& p : data.pairs) out.push_back(encode_pair(vocab, p));
  return out;
}

/// The same pairs with source and target swapped, for the backward model.
inline std::vector<EncodedPair> reversed_pairs(const std::vector<EncodedPair>& pairs) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::vector<TokenId> bare(p.source.begin() + 1, p.source.end() - 1);
    if (bare.empty()) continue;
    out.push_back({wrap_source(p.target), std::move(bare)});
  }
  return out;
}

/// Target-only pairs for the unconditioned LM.
inline std::vector<EncodedPair> lm_pairs(const std::vector<EncodedPair>& pairs) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({null_source(), p.target});
  return out;
}

// ---------------------------------------------------------------------------
// Inference path.

namespace detail {

inline Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

// Gate rows: input, forget, output, candidate.
inline void lstm_update(const Matrix& gates, Matrix& h, Matrix& c) {
  const Eigen::Index m = h.rows();
  const Matrix ifo = sigmoid(gates.topRows(3 * m));
  const Matrix g = gates.bottomRows(m).array().tanh().matrix();
  c = ifo.middleRows(m, m).cwiseProduct(c) + ifo.topRows(m).cwiseProduct(g);
  h = ifo.middleRows(2 * m, m).cwiseProduct(c.array().tanh().matrix());
}

inline Matrix gather(const Matrix& table, std::span<const TokenId> ids) {
  Matrix out(table.cols(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t b = 0; b < ids.size(); ++b) {
    if (ids[b] >= table.rows()) throw std::out_of_range("token id outside the model vocabulary");
    out.col(static_cast<Eigen::Index>(b)) = table.row(ids[b]).transpose();
  }
  return out;
}

inline Matrix softmax_columns(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    p.col(b) = (logits.col(b).array() - logits.col(b).maxCoeff()).exp().matrix();
    p.col(b) /= p.col(b).sum();
  }
  return p;
}

inline double log_softmax_at(const Eigen::Ref<const Vector>& logits, TokenId k) {
  const double top = logits.maxCoeff();
  return logits[k] - top - std::log((logits.array() - top).exp().sum());
}

}  // namespace detail

/// Top-layer encoder outputs h_1..h_Tx plus what the decoder needs from them.
struct ContextSet {
  Matrix hidden;  // m x Tx
  Matrix keys;    // W_a * hidden
  std::vector<Matrix> final_h;
  std::vector<Matrix> final_c;

  std::size_t size() const { return static_cast<std::size_t>(hidden.cols()); }
};

inline ContextSet encode(const Seq2SeqModel& model, std::span<const TokenId> src) {
  if (src.empty()) throw std::invalid_argument("encode needs a non-empty source");
  const Eigen::Index m = model.hidden_size();
  const std::size_t layers = model.encoder.size();
  std::vector<Matrix> h(layers, Matrix::Zero(m, 1)), c(layers, Matrix::Zero(m, 1));
  ContextSet ctx;
  ctx.hidden.resize(m, static_cast<Eigen::Index>(src.size()));
  for (std::size_t t = 0; t < src.size(); ++t) {
    Matrix x = detail::gather(model.embedding, src.subspan(t, 1));
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& p = model.encoder[l];
      Matrix gates = p.input * x + p.hidden * h[l];
      gates.colwise() += p.bias.col(0);
      detail::lstm_update(gates, h[l], c[l]);
      x = h[l];
    }
    ctx.hidden.col(static_cast<Eigen::Index>(t)) = x.col(0);
  }
  ctx.keys = model.attention * ctx.hidden;
  ctx.final_h = std::move(h);
  ctx.final_c = std::move(c);
  return ctx;
}

/// Column-batched decoder state; every column is an independent hypothesis.
struct DecoderState {
  std::vector<Matrix> h;
  std::vector<Matrix> c;
  Matrix attentional;  // z_{t-1}

  Eigen::Index batch() const { return attentional.cols(); }

  /// Keeps only the listed columns, in order.
  DecoderState select(std::span<const Eigen::Index> columns) const {
    auto pick = [&columns](const Matrix& src) {
      Matrix out(src.rows(), static_cast<Eigen::Index>(columns.size()));
      for (std::size_t i = 0; i < columns.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = src.col(columns[i]);
      return out;
    };
    DecoderState out;
    for (const auto& m : h) out.h.push_back(pick(m));
    for (const auto& m : c) out.c.push_back(pick(m));
    out.attentional = pick(attentional);
    return out;
  }
};

/// Decoder starts from the final encoder cell/hidden values of each layer and
/// a zero attentional state.
inline DecoderState initial_state(const Seq2SeqModel& model, const ContextSet& ctx, Eigen::Index batch = 1) {
  DecoderState s;
  for (std::size_t l = 0; l < model.decoder.size(); ++l) {
    s.h.push_back(ctx.final_h[l].col(0).replicate(1, batch));
    s.c.push_back(ctx.final_c[l].col(0).replicate(1, batch));
  }
  s.attentional = Matrix::Zero(model.hidden_size(), batch);
  return s;
}

struct StepOutput {
  Matrix logits;     // vocab x B
  Matrix probs;      // vocab x B
  Matrix attention;  // Tx x B
  DecoderState state;
};

/// One decoder step for every column of `state`. `topic` is |L| x 1 (shared)
/// or |L| x B; it is required exactly when the model is topic-conditioned.
inline StepOutput decode_step(const Seq2SeqModel& model, const DecoderState& state, std::span<const TokenId> prev,
                              const ContextSet& ctx, const Matrix* topic = nullptr) {
  const Eigen::Index batch = state.batch();
  if (static_cast<Eigen::Index>(prev.size()) != batch) throw std::invalid_argument("one previous token per column");
  const auto width = static_cast<Eigen::Index>(model.shape().topic_width);
  if (width > 0) {
    if (!topic) throw std::invalid_argument("topic-conditioned model needs a topic vector");
    if (topic->rows() != width || (topic->cols() != 1 && topic->cols() != batch)) {
      throw std::invalid_argument("topic vector length " + std::to_string(topic->rows()) + " does not match model width " +
                                  std::to_string(width));
    }
  } else if (topic && topic->size() != 0) {
    throw std::invalid_argument("model has no topic input but a topic vector was supplied");
  }

  StepOutput out;
  out.state = state;
  Matrix x = detail::gather(model.embedding, prev);
  for (std::size_t l = 0; l < model.decoder.size(); ++l) {
    const auto& p = model.decoder[l];
    Matrix gates = p.input * x + p.hidden * state.h[l];
    if (l == 0) {
      gates += p.feed * state.attentional;
      if (width > 0) {
        if (topic->cols() == 1) {
          gates.colwise() += (p.topic * *topic).col(0);
        } else {
          gates += p.topic * *topic;
        }
      }
    }
    gates.colwise() += p.bias.col(0);
    detail::lstm_update(gates, out.state.h[l], out.state.c[l]);
    x = out.state.h[l];
  }
  const Matrix& top = x;
  Matrix scores = ctx.keys.transpose() * top;  // Tx x B
  out.attention = detail::softmax_columns(scores);
  const Matrix context = ctx.hidden * out.attention;
  out.state.attentional = (model.combine_context * context + model.combine_hidden * top).array().tanh().matrix();
  out.logits = model.output * out.state.attentional;
  out.logits.colwise() += model.output_bias.col(0);
  out.probs = detail::softmax_columns(out.logits);
  return out;
}

/// log p(target | source) including the final boundary symbol. `source` must
/// already be boundary-wrapped; pass null_source() for the LM reading.
inline double sequence_logprob(const Seq2SeqModel& model, std::span<const TokenId> source,
                               std::span<const TokenId> target, const Matrix* topic = nullptr) {
  const ContextSet ctx = encode(model, source);
  DecoderState state = initial_state(model, ctx);
  double total = 0.0;
  TokenId prev = Vocabulary::kBoundary;
  for (std::size_t t = 0; t <= target.size(); ++t) {
    StepOutput step = decode_step(model, state, std::span<const TokenId>(&prev, 1), ctx, topic);
    const TokenId next = t < target.size() ? target[t] : Vocabulary::kBoundary;
    if (next >= step.logits.rows()) throw std::out_of_range("target token outside the model vocabulary");
    total += detail::log_softmax_at(step.logits.col(0), next);
    state = std::move(step.state);
    prev = next;
  }
  return total;
}

inline double sequence_logprob(const Seq2SeqModel& model, const EncodedPair& pair, const Matrix* topic = nullptr) {
  return sequence_logprob(model, pair.source, pair.target, topic);
}

/// exp(-sum log p / tokens); tokens include each end-boundary prediction.
inline double perplexity(const Seq2SeqModel& model, const std::vector<EncodedPair>& data,
                         const std::vector<Matrix>* topics = nullptr) {
  if (data.empty()) throw std::invalid_argument("perplexity needs data");
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += sequence_logprob(model, data[i], topics ? &(*topics)[i] : nullptr);
    tokens += data[i].target.size() + 1;
  }
  return std::exp(-total / static_cast<double>(tokens));
}

/// Argmax decoding; the terminating boundary symbol is not returned.
inline std::vector<TokenId> greedy_decode(const Seq2SeqModel& model, std::span<const TokenId> source,
                                          std::size_t max_len, const Matrix* topic = nullptr) {
  const ContextSet ctx = encode(model, source);
  DecoderState state = initial_state(model, ctx);
  std::vector<TokenId> out;
  TokenId prev = Vocabulary::kBoundary;
  while (out.size() < max_len) {
    StepOutput step = decode_step(model, state, std::span<const TokenId>(&prev, 1), ctx, topic);
    Eigen::Index best = 0;
    step.logits.col(0).maxCoeff(&best);
    prev = static_cast<TokenId>(best);
    if (prev == Vocabulary::kBoundary) break;
    out.push_back(prev);
    state = std::move(step.state);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training path.

namespace detail {

struct BoundLayer {
  ad::Var input, hidden, bias, feed, topic;
};

struct BoundModel {
  ad::Var embedding;
  std::vector<BoundLayer> encoder, decoder;
  ad::Var attention, combine_context, combine_hidden, output, output_bias;
};

inline BoundModel bind(ad::Tape& tape, const Seq2SeqModel& model, Seq2SeqModel& grads) {
  auto values = model.blocks();
  auto gs = grads.blocks();
  std::size_t i = 0;
  auto next = [&]() {
    ad::Var v = tape.parameter(*values[i], *gs[i]);
    ++i;
    return v;
  };
  BoundModel b;
  b.embedding = next();
  for (std::size_t l = 0; l < model.encoder.size(); ++l) b.encoder.push_back({next(), next(), next(), {}, {}});
  for (std::size_t l = 0; l < model.decoder.size(); ++l) {
    BoundLayer layer{next(), next(), next(), {}, {}};
    if (l == 0) {
      layer.feed = next();
      layer.topic = next();
    }
    b.decoder.push_back(layer);
  }
  b.attention = next();
  b.combine_context = next();
  b.combine_hidden = next();
  b.output = next();
  b.output_bias = next();
  return b;
}

inline std::pair<ad::Var, ad::Var> lstm_cell(ad::Var gates, ad::Var c, Eigen::Index m) {
  ad::Var ifo = ad::sigmoid(ad::rows(gates, 0, 3 * m));
  ad::Var g = ad::tanh(ad::rows(gates, 3 * m, m));
  ad::Var c_new = ad::add(ad::mul(ad::rows(ifo, m, m), c), ad::mul(ad::rows(ifo, 0, m), g));
  ad::Var h_new = ad::mul(ad::rows(ifo, 2 * m, m), ad::tanh(c_new));
  return {h_new, c_new};
}

struct BatchResult {
  double nll = 0.0;
  std::size_t tokens = 0;
};

/// Builds the batch graph, back-propagates sum(NLL) * loss_scale into
/// `grads` and returns the unscaled NLL.
inline BatchResult batch_gradient(const Seq2SeqModel& model, std::span<const EncodedPair* const> batch,
                                  std::span<const Matrix* const> topics, double loss_scale, Seq2SeqModel& grads) {
  ad::Tape tape;
  const BoundModel p = bind(tape, model, grads);
  const auto B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index m = model.hidden_size();
  const std::size_t layers = model.encoder.size();

  std::size_t src_len = 0, tgt_len = 0;
  for (const auto* ex : batch) {
    if (ex->source.empty()) throw std::invalid_argument("empty source in training batch");
    src_len = std::max(src_len, ex->source.size());
    tgt_len = std::max(tgt_len, ex->target.size() + 1);
  }

  Matrix src_mask = Matrix::Zero(static_cast<Eigen::Index>(src_len), B);
  std::vector<ad::Var> h(layers, tape.constant(Matrix::Zero(m, B)));
  std::vector<ad::Var> c = h;
  std::vector<ad::Var> values, keys;
  for (std::size_t t = 0; t < src_len; ++t) {
    std::vector<std::uint32_t> ids(static_cast<std::size_t>(B), Vocabulary::kPad);
    Eigen::RowVectorXd mask = Eigen::RowVectorXd::Zero(B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& s = batch[static_cast<std::size_t>(b)]->source;
      if (t < s.size()) {
        ids[static_cast<std::size_t>(b)] = s[t];
        mask[b] = 1.0;
      }
    }
    src_mask.row(static_cast<Eigen::Index>(t)) = mask;
    ad::Var x = ad::gather(p.embedding, std::move(ids));
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& w = p.encoder[l];
      ad::Var gates = ad::add_bias(ad::add(ad::matmul(w.input, x), ad::matmul(w.hidden, h[l])), w.bias);
      auto [h_new, c_new] = lstm_cell(gates, c[l], m);
      h[l] = ad::blend(h_new, h[l], mask);
      c[l] = ad::blend(c_new, c[l], mask);
      x = h[l];
    }
    values.push_back(x);
    keys.push_back(ad::matmul(p.attention, x));
  }

  const auto width = static_cast<Eigen::Index>(model.shape().topic_width);
  ad::Var topic{};
  if (width > 0) {
    Matrix tv(width, B);
    for (Eigen::Index b = 0; b < B; ++b) {
      if (topics.size() != batch.size() || !topics[static_cast<std::size_t>(b)]) {
        throw std::invalid_argument("topic-conditioned training needs a topic vector per pair");
      }
      const Matrix& v = *topics[static_cast<std::size_t>(b)];
      if (v.rows() != width || v.cols() != 1) throw std::invalid_argument("topic vector has the wrong length");
      tv.col(b) = v.col(0);
    }
    topic = tape.constant(std::move(tv));
  }

  ad::Var z = tape.constant(Matrix::Zero(m, B));
  ad::Var loss{};
  bool have_loss = false;
  BatchResult result;
  for (std::size_t t = 0; t < tgt_len; ++t) {
    std::vector<std::uint32_t> in(static_cast<std::size_t>(B), Vocabulary::kPad);
    std::vector<std::uint32_t> out(static_cast<std::size_t>(B), Vocabulary::kPad);
    Eigen::RowVectorXd weight = Eigen::RowVectorXd::Zero(B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& y = batch[static_cast<std::size_t>(b)]->target;
      const auto bi = static_cast<std::size_t>(b);
      if (t <= y.size()) {
        in[bi] = t == 0 ? Vocabulary::kBoundary : y[t - 1];
        out[bi] = t < y.size() ? y[t] : Vocabulary::kBoundary;
        weight[b] = 1.0;
        ++result.tokens;
      }
    }
    ad::Var x = ad::gather(p.embedding, std::move(in));
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& w = p.decoder[l];
      ad::Var pre = ad::add(ad::matmul(w.input, x), ad::matmul(w.hidden, h[l]));
      if (l == 0) {
        pre = ad::add(pre, ad::matmul(w.feed, z));
        if (width > 0) pre = ad::add(pre, ad::matmul(w.topic, topic));
      }
      auto [h_new, c_new] = lstm_cell(ad::add_bias(pre, w.bias), c[l], m);
      h[l] = h_new;
      c[l] = c_new;
      x = h_new;
    }
    ad::Var context = ad::attend(x, keys, values, src_mask);
    z = ad::tanh(ad::add(ad::matmul(p.combine_context, context), ad::matmul(p.combine_hidden, x)));
    ad::Var logits = ad::add_bias(ad::matmul(p.output, z), p.output_bias);
    ad::Var step = ad::softmax_xent(logits, std::move(out), weight);
    loss = have_loss ? ad::add(loss, step) : step;
    have_loss = true;
  }
  result.nll = loss.value()(0, 0);
  if (std::isfinite(result.nll)) tape.backward(ad::scale(loss, loss_scale));
  return result;
}

}  // namespace detail

/// Summed NLL of `pairs` and its gradient (written into `grads`, which is
/// zeroed first).
inline double loss_and_gradient(const Seq2SeqModel& model, const std::vector<EncodedPair>& pairs,
                                Seq2SeqModel& grads, const std::vector<Matrix>* topics = nullptr) {
  for (Matrix* g : grads.blocks()) g->setZero();
  std::vector<const EncodedPair*> batch;
  std::vector<const Matrix*> tps;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    batch.push_back(&pairs[i]);
    if (topics) tps.push_back(&(*topics)[i]);
  }
  return detail::batch_gradient(model, batch, tps, 1.0, grads).nll;
}

struct TrainConfig {
  double learning_rate = 0.002;
  double clip_norm = 5.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainReport {
  std::vector<double> epoch_loss;       // mean per-token NLL
  std::vector<double> grad_norm;        // per step, before clipping
  std::vector<double> clipped_norm;     // per step, after clipping
  std::size_t steps = 0;
};

/// ADAM with bias correction, one moment pair per parameter block.
class Adam {
 public:
  Adam(const Seq2SeqModel& model, const TrainConfig& config)
      : config_(config), first_(model.zeros_like()), second_(model.zeros_like()) {}

  void step(Seq2SeqModel& model, Seq2SeqModel& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto params = model.blocks();
    auto gs = grads.blocks();
    auto ms = first_.blocks();
    auto vs = second_.blocks();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto g = gs[i]->array();
      ms[i]->array() = config_.beta1 * ms[i]->array() + (1.0 - config_.beta1) * g;
      vs[i]->array() = config_.beta2 * vs[i]->array() + (1.0 - config_.beta2) * g.square();
      params[i]->array() -= config_.learning_rate * (ms[i]->array() / c1) /
                            ((vs[i]->array() / c2).sqrt() + config_.adam_epsilon);
    }
  }

 private:
  TrainConfig config_;
  Seq2SeqModel first_;
  Seq2SeqModel second_;
  std::size_t t_ = 0;
};

inline double global_norm(const Seq2SeqModel& grads) {
  double sq = 0.0;
  for (const Matrix* g : grads.blocks()) sq += g->squaredNorm();
  return std::sqrt(sq);
}

/// Called after every epoch with (epoch, model, mean loss); return false to stop.
using EpochCallback = std::function<bool(std::size_t, const Seq2SeqModel&, double)>;

/// Mini-batch ADAM on mean-per-sequence cross-entropy with global-norm
/// clipping. Batch order is reshuffled every epoch from `config.seed`.
inline TrainReport train(Seq2SeqModel& model, const std::vector<EncodedPair>& data, const TrainConfig& config,
                         const std::vector<Matrix>* topics = nullptr, const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("training needs a non-empty dataset");
  if (topics && topics->size() != data.size()) throw std::invalid_argument("one topic vector per training pair");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  TrainReport report;
  Adam adam(model, config);
  Seq2SeqModel grads = model.zeros_like();
  Rng rng(derive_seed(config.seed, 0x5eed));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const EncodedPair*> batch;
      std::vector<const Matrix*> tps;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&data[order[i]]);
        if (topics) tps.push_back(&(*topics)[order[i]]);
      }
      for (Matrix* g : grads.blocks()) g->setZero();
      const auto result =
          detail::batch_gradient(model, batch, tps, 1.0 / static_cast<double>(batch.size()), grads);
      if (!std::isfinite(result.nll)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(report.steps + 1));
      }
      const double norm = global_norm(grads);
      if (!std::isfinite(norm)) {
        throw TrainingError("non-finite gradient norm at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(report.steps + 1));
      }
      double clipped = norm;
      if (norm > config.clip_norm) {
        const double s = config.clip_norm / norm;
        for (Matrix* g : grads.blocks()) *g *= s;
        clipped = global_norm(grads);
      }
      report.grad_norm.push_back(norm);
      report.clipped_norm.push_back(clipped);
      adam.step(model, grads);
      ++report.steps;
      epoch_nll += result.nll;
      epoch_tokens += result.tokens;
    }
    if (!model.all_finite()) throw TrainingError("parameters became non-finite in epoch " + std::to_string(epoch));
    const double mean = epoch_nll / static_cast<double>(epoch_tokens);
    report.epoch_loss.push_back(mean);
    if (on_epoch && !on_epoch(epoch, model, mean)) break;
  }
  return report;
}

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, double>> per_block;
  double max_analytic = 0.0;
  double max_numeric = 0.0;
};

/// Compares tape gradients with central differences of the inference-path
/// loss for every parameter entry. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradientCheckReport gradient_check(const Seq2SeqModel& model, const std::vector<EncodedPair>& pairs,
                                          const std::vector<Matrix>* topics = nullptr, double epsilon = 1e-4,
                                          double floor = 1e-5) {
  Seq2SeqModel grads = model.zeros_like();
  loss_and_gradient(model, pairs, grads, topics);
  Seq2SeqModel probe = model;
  auto loss = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      total -= sequence_logprob(probe, pairs[i], topics ? &(*topics)[i] : nullptr);
    }
    return total;
  };
  GradientCheckReport report;
  const auto names = model.block_names();
  auto blocks = probe.blocks();
  auto analytic = grads.blocks();
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    double worst = 0.0;
    Matrix& block = *blocks[bi];
    for (Eigen::Index i = 0; i < block.size(); ++i) {
      const double saved = block.data()[i];
      block.data()[i] = saved + epsilon;
      const double up = loss();
      block.data()[i] = saved - epsilon;
      const double down = loss();
      block.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[bi]->data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, rel);
      report.max_analytic = std::max(report.max_analytic, std::abs(a));
      report.max_numeric = std::max(report.max_numeric, std::abs(numeric));
    }
    report.per_block.emplace_back(names[bi], worst);
    report.max_relative_error = std::max(report.max_relative_error, worst);
  }
  return report;
}

}  // namespace steer::s2s
