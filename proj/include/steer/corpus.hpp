#pragma once

// Text ingestion: tokenization, vocabularies, bags of words and the two
// on-disk corpus formats (tab-separated pairs and monologue documents).

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "steer/binary_io.hpp"

namespace steer {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<std::string>;

/// Lowercases, splits on whitespace and detaches trailing . , ! ? as their
/// own tokens. Apostrophes stay inside words ("i'm"). Control bytes are
/// dropped. Non-ASCII bytes pass through unchanged.
inline TokenSequence tokenize(std::string_view text) {
  TokenSequence tokens;
  auto flush = [&tokens](std::string& word) {
    std::vector<std::string> trailing;
    while (!word.empty()) {
      const char last = word.back();
      if (last != '.' && last != ',' && last != '!' && last != '?') break;
      trailing.emplace_back(1, last);
      word.pop_back();
    }
    if (!word.empty()) tokens.push_back(word);
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) tokens.push_back(*it);
    word.clear();
  };
  std::string word;
  for (const char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
      flush(word);
    } else if (c < 0x20 || c == 0x7f) {
      continue;
    } else {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : raw);
    }
  }
  flush(word);
  return tokens;
}

inline std::string join(const TokenSequence& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// Dense word <-> id mapping. Ids 0..2 are the boundary, unknown and pad
/// symbols; the rest are corpus words in decreasing frequency.
class Vocabulary {
 public:
  static constexpr TokenId kBoundary = 0;
  static constexpr TokenId kUnknown = 1;
  static constexpr TokenId kPad = 2;
  static constexpr std::size_t kReserved = 3;
  static constexpr std::string_view kBoundaryWord = "<s>";
  static constexpr std::string_view kUnknownWord = "<unk>";
  static constexpr std::string_view kPadWord = "<pad>";

  Vocabulary() {
    for (auto w : {kBoundaryWord, kUnknownWord, kPadWord}) add(std::string(w));
  }

  std::size_t size() const { return words_.size(); }

  bool contains(const std::string& word) const { return ids_.count(word) != 0; }

  TokenId id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnknown : it->second;
  }

  const std::string& word(TokenId id) const {
    if (id >= words_.size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
    return words_[id];
  }

  std::vector<TokenId> encode(const TokenSequence& tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  TokenSequence decode(const std::vector<TokenId>& ids) const {
    TokenSequence tokens;
    tokens.reserve(ids.size());
    for (auto i : ids) tokens.push_back(word(i));
    return tokens;
  }

  static bool is_reserved(const std::string& word) {
    return word == kBoundaryWord || word == kUnknownWord || word == kPadWord;
  }

  // Format: "vocab-v1 <size>" then one word per line in id order.
  void save(std::ostream& out) const {
    out << "vocab-v1 " << words_.size() << '\n';
    for (const auto& w : words_) out << w << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    save(out);
  }

  static Vocabulary load(std::istream& in) {
    const auto header = io::read_header(in, "vocab-v1");
    if (header.size() != 1) throw io::FormatError("vocab header needs exactly one size field");
    const std::size_t n = io::parse_size(header[0]);
    if (n < kReserved) throw io::FormatError("vocabulary smaller than the reserved symbols");
    Vocabulary v;
    std::string line;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw io::FormatError("vocabulary truncated at entry " + std::to_string(i));
      if (i < kReserved) {
        if (line != v.words_[i]) throw io::FormatError("reserved symbol mismatch at id " + std::to_string(i));
        continue;
      }
      if (line.empty() || v.contains(line)) throw io::FormatError("empty or duplicate word at id " + std::to_string(i));
      v.add(line);
    }
    return v;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return load(in);
  }

  void add(const std::string& word) {
    ids_.emplace(word, static_cast<TokenId>(words_.size()));
    words_.push_back(word);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Keeps the `cap` most frequent words; ties go to the word seen first.
inline Vocabulary build_vocab(const std::vector<TokenSequence>& sentences, std::size_t cap) {
  if (cap < 1) throw std::invalid_argument("vocabulary cap must be at least 1");
  struct Entry {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  std::vector<std::string> order;
  for (const auto& s : sentences) {
    for (const auto& t : s) {
      if (Vocabulary::is_reserved(t)) continue;
      auto [it, inserted] = counts.try_emplace(t, Entry{0, order.size()});
      if (inserted) order.push_back(t);
      ++it->second.count;
    }
  }
  std::stable_sort(order.begin(), order.end(), [&counts](const std::string& a, const std::string& b) {
    return counts.at(a).count > counts.at(b).count;
  });
  if (order.size() > cap) order.resize(cap);
  Vocabulary v;
  for (const auto& w : order) v.add(w);
  return v;
}

/// Multiset of word ids, sorted by id.
struct Bag {
  std::vector<std::pair<TokenId, std::size_t>> counts;
  std::size_t total = 0;

  bool empty() const { return total == 0; }

  std::size_t count(TokenId id) const {
    auto it = std::lower_bound(counts.begin(), counts.end(), std::make_pair(id, std::size_t{0}));
    return (it != counts.end() && it->first == id) ? it->second : 0;
  }
};

inline Bag make_bag(const std::vector<TokenId>& ids) {
  std::vector<TokenId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  Bag bag;
  for (auto id : sorted) {
    if (!bag.counts.empty() && bag.counts.back().first == id) {
      ++bag.counts.back().second;
    } else {
      bag.counts.emplace_back(id, 1);
    }
  }
  bag.total = ids.size();
  return bag;
}

inline Bag to_bag(const TokenSequence& tokens, const Vocabulary& vocab) {
  return make_bag(vocab.encode(tokens));
}

struct SentencePair {
  TokenSequence source;
  TokenSequence target;
};

/// Source/target pairs. Monologue corpora are stored as pairs with an empty
/// source and `previous` linking each sentence to the one before it in the
/// same document.
struct PairDataset {
  std::vector<SentencePair> pairs;
  std::vector<std::optional<std::size_t>> previous;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  bool is_monologue() const { return !previous.empty(); }

  std::vector<TokenSequence> targets() const {
    std::vector<TokenSequence> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.target);
    return out;
  }
};

enum class CorpusFormat { kPairs, kMonologue };

class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline PairDataset read_pairs(std::istream& in, CorpusFormat format) {
  PairDataset data;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> last_in_doc;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (format == CorpusFormat::kMonologue) {
      auto tokens = tokenize(line);
      if (tokens.empty()) {
        last_in_doc.reset();
        continue;
      }
      data.pairs.push_back({{}, std::move(tokens)});
      data.previous.push_back(last_in_doc);
      last_in_doc = data.pairs.size() - 1;
      continue;
    }
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw CorpusError("missing TAB separator", line_no);
    if (line.find('\t', tab + 1) != std::string::npos) throw CorpusError("more than one TAB separator", line_no);
    SentencePair pair{tokenize(std::string_view(line).substr(0, tab)),
                      tokenize(std::string_view(line).substr(tab + 1))};
    if (pair.target.empty()) throw CorpusError("empty target", line_no);
    data.pairs.push_back(std::move(pair));
  }
  return data;
}

inline PairDataset load_pairs(const std::string& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_pairs(in, format);
}

inline void write_pairs(std::ostream& out, const PairDataset& data) {
  for (const auto& p : data.pairs) out << join(p.source) << '\t' << join(p.target) << '\n';
}

}  // namespace steer
