#pragma once

// JSON facade over the toolkit: model store, conversation sessions and
// candidate generation for every system configuration.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include <Eigen/Dense>

#include "steer/corpus.hpp"
#include "steer/counting_grid.hpp"
#include "steer/decoding.hpp"
#include "steer/scenting.hpp"
#include "steer/selector.hpp"
#include "steer/seq2seq.hpp"
#include "steer/topic_hints.hpp"

namespace steer::service {

using Json = nlohmann::json;

/// Carries the HTTP status the facade should answer with.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what, std::string remedy = {})
      : std::runtime_error(what), status_(status), remedy_(std::move(remedy)) {}
  int status() const { return status_; }
  const std::string& remedy() const { return remedy_; }

  Json to_json() const {
    Json j{{"error", what()}, {"status", status_}};
    if (!remedy_.empty()) j["remedy"] = remedy_;
    return j;
  }

 private:
  int status_;
  std::string remedy_;
};

inline ServiceError bad_request(const std::string& what) { return {400, what}; }
inline ServiceError not_found(const std::string& what) { return {404, what}; }
inline ServiceError missing_model(const std::string& what, const std::string& remedy) { return {409, what, remedy}; }

inline const std::vector<std::string>& methods() {
  static const std::vector<std::string> all{"vanilla-sampling", "selective-sampling", "cg-ir",
                                            "rank", "multiply", "finetune", "finetune-cg-ir",
                                            "finetune-cg-topic"};
  return all;
}

inline bool is_persona_method(const std::string& m) {
  return m == "rank" || m == "multiply" || m == "finetune" || m == "finetune-cg-ir" || m == "finetune-cg-topic";
}

/// Everything loaded from a models directory:
///   vocab.txt, forward.model, backward.model, lm.model, selector.model,
///   topic.model, cg.model, index.idx, personas/<name>/...
/// Only vocab.txt is mandatory; methods needing an absent file answer 409.
struct ModelStore {
  Vocabulary vocab;
  std::optional<s2s::Seq2SeqModel> forward;
  std::optional<s2s::Seq2SeqModel> backward;
  std::optional<s2s::Seq2SeqModel> lm;
  std::optional<decoding::SelectorModel> selector;
  std::optional<s2s::Seq2SeqModel> topic_forward;
  std::optional<cg::CountingGrid> grid;
  std::optional<hints::InvertedIndex> index;
  std::map<std::string, scenting::PersonaBundle> personas;

  static ModelStore load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("models directory " + dir.string() + " not found");
    if (!fs::exists(dir / "vocab.txt")) throw std::runtime_error("models directory lacks vocab.txt");
    ModelStore s;
    s.vocab = Vocabulary::load((dir / "vocab.txt").string());
    auto model = [&](const char* name, std::optional<s2s::Seq2SeqModel>& slot) {
      if (fs::exists(dir / name)) slot = s2s::Seq2SeqModel::load((dir / name).string());
    };
    model("forward.model", s.forward);
    model("backward.model", s.backward);
    model("lm.model", s.lm);
    model("topic.model", s.topic_forward);
    if (fs::exists(dir / "selector.model")) s.selector = decoding::SelectorModel::load((dir / "selector.model").string());
    if (fs::exists(dir / "cg.model")) s.grid.emplace(cg::CGModel::load((dir / "cg.model").string()));
    if (fs::exists(dir / "index.idx")) s.index = hints::InvertedIndex::load((dir / "index.idx").string());
    if (fs::is_directory(dir / "personas")) {
      std::vector<fs::path> entries;
      for (const auto& e : fs::directory_iterator(dir / "personas"))
        if (e.is_directory()) entries.push_back(e.path());
      std::sort(entries.begin(), entries.end());
      for (const auto& p : entries) {
        auto bundle = scenting::load_persona(p);
        s.personas.emplace(bundle.name, std::move(bundle));
      }
    }
    s.validate();
    return s;
  }

  void validate() const {
    const std::size_t v = vocab.size();
    auto check = [&](const std::optional<s2s::Seq2SeqModel>& m, const std::string& name) {
      if (m && m->shape().vocab != v) throw std::runtime_error(name + " vocabulary size does not match vocab.txt");
    };
    check(forward, "forward model");
    check(backward, "backward model");
    check(lm, "language model");
    check(topic_forward, "topic model");
    if (grid && grid->model().vocab_size != v) throw std::runtime_error("counting grid vocabulary does not match vocab.txt");
    if (topic_forward && grid && topic_forward->shape().topic_width != grid->grid().area()) {
      throw std::runtime_error("topic model input width does not match the grid size");
    }
    for (const auto& [name, p] : personas) {
      check(p.lm, "persona " + name + " language model");
      check(p.finetuned, "persona " + name + " finetuned model");
      check(p.finetuned_topic, "persona " + name + " topic finetuned model");
    }
  }

  std::vector<std::string> available_methods() const {
    std::vector<std::string> out;
    const bool base = forward && backward && lm && selector;
    if (base) out.insert(out.end(), {"vanilla-sampling", "selective-sampling"});
    if (base && topic_forward && grid && index) out.push_back("cg-ir");
    return out;
  }

  std::vector<std::string> persona_methods(const scenting::PersonaBundle& p) const {
    std::vector<std::string> out;
    const bool base = backward && lm && selector;
    if (backward && p.can_rank()) out.push_back("rank");
    if (base && forward && p.can_multiply()) out.push_back("multiply");
    if (base && p.can_finetune()) out.push_back("finetune");
    if (base && p.can_finetune_topic() && grid && index) out.push_back("finetune-cg-ir");
    if (base && p.can_finetune_topic() && grid) out.push_back("finetune-cg-topic");
    return out;
  }
};

struct GenerationRequest {
  std::string context;
  std::string method = "selective-sampling";
  std::string persona;
  std::optional<std::string> hint;
  std::optional<cg::GridIndex> cell;
  std::optional<std::size_t> smoothing;
  std::size_t n = 50;
  std::size_t top_n = 10;
  std::size_t samples_per_step = 10;
  std::size_t max_len = 30;
  std::size_t ir_k = 10;
  std::uint64_t seed = 7;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<std::string> session;

  static GenerationRequest from_json(const Json& j) {
    if (!j.is_object()) throw bad_request("generation request must be a JSON object");
    GenerationRequest r;
    try {
      r.context = j.value("context", std::string());
      r.method = j.value("method", r.method);
      r.persona = j.value("persona", std::string());
      if (j.contains("hint") && !j["hint"].is_null()) r.hint = j["hint"].get<std::string>();
      if (j.contains("cell") && !j["cell"].is_null()) {
        const auto& c = j["cell"];
        r.cell = cg::GridIndex{c.at("x").get<std::size_t>(), c.at("y").get<std::size_t>()};
      }
      if (j.contains("smoothing")) r.smoothing = j["smoothing"].get<std::size_t>();
      r.n = j.value("n", r.n);
      r.top_n = j.value("top_n", r.top_n);
      r.samples_per_step = j.value("samples_per_step", r.samples_per_step);
      r.max_len = j.value("max_len", r.max_len);
      r.ir_k = j.value("ir_k", r.ir_k);
      r.seed = j.value("seed", r.seed);
      if (j.contains("lambda1")) r.lambda1 = j["lambda1"].get<double>();
      if (j.contains("lambda2")) r.lambda2 = j["lambda2"].get<double>();
      if (j.contains("session") && !j["session"].is_null()) r.session = j["session"].get<std::string>();
    } catch (const Json::exception& e) {
      throw bad_request(std::string("malformed generation request: ") + e.what());
    }
    if (r.n == 0 || r.n > 5000) throw bad_request("n must lie in [1, 5000]");
    if (r.top_n == 0) throw bad_request("top_n must be at least 1");
    if (r.samples_per_step == 0) throw bad_request("samples_per_step must be at least 1");
    if (r.max_len == 0 || r.max_len > 200) throw bad_request("max_len must lie in [1, 200]");
    if (r.ir_k == 0) throw bad_request("ir_k must be at least 1");
    return r;
  }
};

struct Turn {
  std::string speaker;  // "user" or "bot"
  std::string text;
};

struct Session {
  std::string id;
  std::vector<Turn> transcript;
  std::string persona;
  std::string method = "selective-sampling";
  std::vector<std::string> candidates;  // texts of the last candidate set
  mutable std::mutex mutex;

  Json to_json() const {
    Json turns = Json::array();
    for (const auto& t : transcript) turns.push_back({{"speaker", t.speaker}, {"text", t.text}});
    return {{"id", id}, {"transcript", turns}, {"persona", persona}, {"method", method}, {"candidates", candidates}};
  }
};

namespace detail {

struct Hint {
  std::string id;
  cg::LocationPosterior posterior;
};

inline Json hint_json(const Hint& h, bool with_posterior) {
  Json j{{"id", h.id}, {"length", h.posterior.prob.size()}, {"argmax", h.posterior.argmax()}};
  if (with_posterior) j["posterior"] = h.posterior.prob;
  return j;
}

}  // namespace detail

class Service {
 public:
  explicit Service(std::shared_ptr<const ModelStore> store) : store_(std::move(store)) {
    if (!store_) throw std::invalid_argument("service needs a model store");
  }

  const ModelStore& store() const { return *store_; }

  // ---- sessions -----------------------------------------------------------

  Json create_session(const Json& body = Json::object()) {
    auto s = std::make_shared<Session>();
    s->id = "s" + std::to_string(++next_session_);
    if (body.is_object()) {
      s->persona = body.value("persona", std::string());
      s->method = body.value("method", s->method);
    }
    if (std::find(methods().begin(), methods().end(), s->method) == methods().end()) {
      throw bad_request("unknown method '" + s->method + "'");
    }
    if (!s->persona.empty()) persona(s->persona);
    std::unique_lock lock(sessions_mutex_);
    sessions_[s->id] = s;
    std::lock_guard guard(s->mutex);
    return s->to_json();
  }

  Json get_session(const std::string& id) const {
    auto s = session(id);
    std::lock_guard guard(s->mutex);
    return s->to_json();
  }

  Json post_turn(const std::string& id, const Json& body) {
    auto s = session(id);
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
      throw bad_request("turn needs a string field 'text'");
    }
    const std::string text = body["text"].get<std::string>();
    if (tokenize(text).empty()) throw bad_request("turn text is empty");
    std::lock_guard guard(s->mutex);
    s->transcript.push_back({"user", text});
    s->candidates.clear();
    return s->to_json();
  }

  Json choose(const std::string& id, const Json& body) {
    auto s = session(id);
    if (!body.is_object() || !body.contains("index") || !body["index"].is_number_integer()) {
      throw bad_request("choose needs an integer field 'index'");
    }
    const auto index = body["index"].get<long long>();
    std::lock_guard guard(s->mutex);
    if (s->candidates.empty()) throw ServiceError(409, "no candidate set to choose from; generate first");
    if (index < 0 || static_cast<std::size_t>(index) >= s->candidates.size()) {
      throw ServiceError(409, "stale candidate index " + std::to_string(index) + " (have " +
                                  std::to_string(s->candidates.size()) + ")");
    }
    s->transcript.push_back({"bot", s->candidates[static_cast<std::size_t>(index)]});
    s->candidates.clear();
    return s->to_json();
  }

  // ---- generation ---------------------------------------------------------

  Json generate(const Json& body) { return generate(GenerationRequest::from_json(body)); }

  Json generate(GenerationRequest req) {
    std::shared_ptr<Session> s;
    if (req.session) {
      s = session(*req.session);
      std::lock_guard guard(s->mutex);
      if (req.context.empty()) {
        for (auto it = s->transcript.rbegin(); it != s->transcript.rend(); ++it) {
          if (it->speaker == "user") {
            req.context = it->text;
            break;
          }
        }
      }
      if (req.persona.empty()) req.persona = s->persona;
    }
    Json out = run(req);
    if (s) {
      std::lock_guard guard(s->mutex);
      s->candidates.clear();
      for (const auto& c : out["candidates"]) s->candidates.push_back(c["text"].get<std::string>());
      s->method = req.method;
      s->persona = req.persona;
      out["session"] = s->id;
    }
    return out;
  }

  // ---- counting grid ------------------------------------------------------

  Json grid(std::size_t topk) const {
    const auto& g = require_grid();
    if (topk == 0) throw bad_request("topk must be at least 1");
    const auto& model = g.model();
    Json cells = Json::array();
    for (std::size_t loc = 0; loc < model.locations(); ++loc) {
      Json words = Json::array();
      for (const auto& [id, p] : cg::top_words(model, loc, topk)) {
        words.push_back({{"word", store_->vocab.word(id)}, {"p", p}});
      }
      const auto at = cg::grid_index(model.grid, loc);
      cells.push_back({{"x", at.x}, {"y", at.y}, {"words", words}});
    }
    return {{"grid", {{"x", model.grid.x}, {"y", model.grid.y}}},
            {"window", {{"x", model.window.x}, {"y", model.window.y}}},
            {"cells", cells}};
  }

  Json posterior(const Json& body) const {
    if (!body.is_object()) throw bad_request("posterior request must be a JSON object");
    GenerationRequest req;
    try {
      if (body.contains("text")) req.hint = body["text"].get<std::string>();
      if (body.contains("cell")) {
        req.cell = cg::GridIndex{body["cell"].at("x").get<std::size_t>(), body["cell"].at("y").get<std::size_t>()};
      }
      if (body.contains("smoothing")) req.smoothing = body["smoothing"].get<std::size_t>();
    } catch (const Json::exception& e) {
      throw bad_request(std::string("malformed posterior request: ") + e.what());
    }
    if (!req.hint && !req.cell) throw bad_request("posterior needs 'text' or 'cell'");
    const auto h = explicit_hint(req);
    Json j = detail::hint_json(h, true);
    j["grid"] = {{"x", h.posterior.grid.x}, {"y", h.posterior.grid.y}};
    return j;
  }

  Json personas() const {
    Json list = Json::array();
    for (const auto& [name, p] : store_->personas) {
      list.push_back({{"name", name},
                      {"methods", store_->persona_methods(p)},
                      {"lambda1", p.lambda1},
                      {"lambda2", p.lambda2},
                      {"corpus_size", p.corpus.size()}});
    }
    return {{"personas", list}, {"methods", store_->available_methods()}};
  }

 private:
  std::shared_ptr<Session> session(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw not_found("unknown session '" + id + "'");
    return it->second;
  }

  const scenting::PersonaBundle& persona(const std::string& name) const {
    auto it = store_->personas.find(name);
    if (it == store_->personas.end()) throw not_found("unknown persona '" + name + "'");
    return it->second;
  }

  template <typename T>
  static const T& need(const std::optional<T>& slot, const std::string& what, const std::string& remedy) {
    if (!slot) throw missing_model(what + " is not loaded", remedy);
    return *slot;
  }

  const cg::CountingGrid& require_grid() const {
    return need(store_->grid, "counting grid", "train one with `cg train` and save it as cg.model");
  }

  detail::Hint explicit_hint(const GenerationRequest& req) const {
    const auto& g = require_grid();
    if (req.cell) {
      const std::size_t width = req.smoothing.value_or(g.window().x);
      try {
        return {"cell:" + std::to_string(req.cell->x) + "," + std::to_string(req.cell->y) + ":" + std::to_string(width),
                hints::cell_hint(g.grid(), *req.cell, width)};
      } catch (const std::logic_error& e) {
        throw bad_request(e.what());
      }
    }
    if (req.hint) return {"text:" + join(tokenize(*req.hint)), hints::hint_posterior(g, store_->vocab, tokenize(*req.hint))};
    throw bad_request("method needs a 'hint' text or a 'cell'");
  }

  std::vector<detail::Hint> retrieved_hints(const GenerationRequest& req, const TokenSequence& source) const {
    const auto& g = require_grid();
    const auto& index = need(store_->index, "retrieval index", "build one with `hints build-index` as index.idx");
    std::vector<detail::Hint> out;
    for (auto& h : hints::ir_hints(index, g, store_->vocab, source, req.ir_k)) {
      out.push_back({"ir:" + std::to_string(h.doc), std::move(h.posterior)});
    }
    if (out.empty()) out.push_back({"uniform", cg::LocationPosterior::uniform(g.grid())});
    return out;
  }

  Json candidate_json(const decoding::Candidate& c, std::size_t rank, const Json& provenance) const {
    Json j{{"index", rank},
           {"text", join(store_->vocab.decode(c.words()))},
           {"composite", c.composite},
           {"backward", c.backward_score},
           {"acceptor", c.log_acceptor()},
           {"forward", c.log_forward()},
           {"multiplicity", c.multiplicity},
           {"provenance", provenance}};
    return j;
  }

  Json run(const GenerationRequest& req) const {
    const auto& m = req.method;
    if (std::find(methods().begin(), methods().end(), m) == methods().end()) {
      throw bad_request("unknown method '" + m + "'");
    }
    const TokenSequence context = tokenize(req.context);
    if (context.empty()) throw bad_request("context is empty");
    const scenting::PersonaBundle* p = nullptr;
    if (is_persona_method(m)) {
      if (req.persona.empty()) throw bad_request("method '" + m + "' needs a persona");
      p = &persona(req.persona);
    }
    const auto& vocab = store_->vocab;
    const auto src_ids = vocab.encode(context);
    const auto& backward = need(store_->backward, "backward model", "run `s2s train` to produce backward.model");

    Json out{{"method", m}, {"persona", req.persona}, {"seed", req.seed}, {"context", join(context)}};

    if (m == "rank") {
      if (!p->can_rank()) throw missing_model("persona '" + p->name + "' has no corpus", "add corpus.txt");
      const auto ranked = scenting::rank_retrieve(context, *p, backward, vocab, req.top_n);
      Json cands = Json::array();
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& hit = ranked[r];
        cands.push_back({{"index", r},
                         {"text", join(p->corpus.pairs[hit.index].target)},
                         {"composite", hit.score},
                         {"backward", hit.score},
                         {"acceptor", 0.0},
                         {"forward", nullptr},
                         {"multiplicity", 1},
                         {"provenance", {{"method", m}, {"sampling", "retrieval"}, {"corpus_index", hit.index}}}});
      }
      out["sampling"] = "retrieval";
      out["candidates"] = cands;
      out["hints"] = Json::array();
      return out;
    }

    decoding::DecodingModels dm;
    dm.lm = &need(store_->lm, "language model", "run `s2s train` to produce lm.model");
    dm.selector = &need(store_->selector, "sample selector", "run `s2s train` to produce selector.model");
    decoding::SamplerConfig sampler{decoding::SamplingMode::kSelective, req.samples_per_step, req.max_len};
    if (m == "vanilla-sampling") sampler.mode = decoding::SamplingMode::kVanilla;

    bool topical = false;
    bool ir = false;
    if (m == "vanilla-sampling" || m == "selective-sampling") {
      dm.forward = &need(store_->forward, "forward model", "run `s2s train` to produce forward.model");
    } else if (m == "cg-ir") {
      dm.forward = &need(store_->topic_forward, "topic-conditioned forward model",
                         "run `s2s train --topic-width <cells> --cg cg.model` and save topic.model");
      topical = ir = true;
    } else if (m == "multiply") {
      dm.forward = &need(store_->forward, "forward model", "run `s2s train` to produce forward.model");
      if (!p->lm) throw missing_model("persona '" + p->name + "' has no style LM", "train personas/" + p->name + "/lm.model");
      dm.style = {&*p->lm, req.lambda1.value_or(p->lambda1), req.lambda2.value_or(p->lambda2)};
      if (dm.style.lambda1 < 0.0 || dm.style.lambda2 < 0.0) throw bad_request("mixing weights must be non-negative");
      out["lambda1"] = dm.style.lambda1;
      out["lambda2"] = dm.style.lambda2;
    } else if (m == "finetune") {
      if (!p->finetuned) {
        throw missing_model("persona '" + p->name + "' has no finetuned model", "run `scent finetune` into finetuned.model");
      }
      dm.forward = &*p->finetuned;
      if (p->selector) dm.selector = &*p->selector;
    } else {
      if (!p->finetuned_topic) {
        throw missing_model("persona '" + p->name + "' has no topic finetuned model",
                            "run `scent finetune --cg cg.model` from topic.model into finetuned_topic.model");
      }
      dm.forward = &*p->finetuned_topic;
      if (p->selector) dm.selector = &*p->selector;
      topical = true;
      ir = m == "finetune-cg-ir";
    }
    out["sampling"] = sampler.mode == decoding::SamplingMode::kVanilla ? "vanilla" : "selective";

    std::vector<detail::Hint> hint_list;
    if (topical) hint_list = ir ? retrieved_hints(req, context) : std::vector<detail::Hint>{explicit_hint(req)};

    std::vector<decoding::Candidate> all;
    std::vector<std::size_t> hint_of;
    const auto src = s2s::wrap_source(src_ids);
    try {
      if (!topical) {
        all = decoding::sample_lanes(dm, src, req.n, sampler, req.seed);
        hint_of.assign(all.size(), 0);
      } else {
        const std::size_t per = (req.n + hint_list.size() - 1) / hint_list.size();
        for (std::size_t h = 0; h < hint_list.size(); ++h) {
          const Eigen::MatrixXd topic = hints::to_topic(hint_list[h].posterior);
          auto lanes = decoding::sample_lanes(dm, src, per, sampler, derive_seed(req.seed, h), &topic);
          for (auto& c : lanes) {
            all.push_back(std::move(c));
            hint_of.push_back(h);
          }
        }
      }
    } catch (const std::domain_error& e) {
      throw bad_request(e.what());
    }
    for (std::size_t i = 0; i < all.size(); ++i) all[i].index = i;
    auto unique = decoding::collapse_duplicates(std::move(all));
    decoding::rerank(unique, backward, src_ids);
    if (unique.size() > req.top_n) unique.resize(req.top_n);

    Json cands = Json::array();
    for (std::size_t r = 0; r < unique.size(); ++r) {
      Json prov{{"method", m}, {"sampling", out["sampling"]}, {"lane", unique[r].index}};
      if (!req.persona.empty() && p) prov["persona"] = req.persona;
      if (topical) prov["hint"] = detail::hint_json(hint_list[hint_of[unique[r].index]], false);
      cands.push_back(candidate_json(unique[r], r, prov));
    }
    Json hj = Json::array();
    for (const auto& h : hint_list) hj.push_back(detail::hint_json(h, true));
    out["candidates"] = cands;
    out["hints"] = hj;
    return out;
  }

  std::shared_ptr<const ModelStore> store_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::size_t> next_session_{0};
};

}  // namespace steer::service
