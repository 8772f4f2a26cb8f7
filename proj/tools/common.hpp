#pragma once

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "steer/corpus.hpp"
#include "steer/counting_grid.hpp"
#include "steer/selector.hpp"
#include "steer/seq2seq.hpp"

#include "CLI11.hpp"

namespace steer::tools {

/// "16x16" or "16" -> extent.
inline cg::Extent parse_extent(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) {
      const auto n = static_cast<std::size_t>(std::stoul(text));
      return {n, n};
    }
    return {static_cast<std::size_t>(std::stoul(text.substr(0, x))),
            static_cast<std::size_t>(std::stoul(text.substr(x + 1)))};
  } catch (const std::exception&) {
    throw std::invalid_argument("expected an extent like 16x16, got '" + text + "'");
  }
}

inline CorpusFormat parse_format(const std::string& name) {
  if (name == "pairs") return CorpusFormat::kPairs;
  if (name == "monologue") return CorpusFormat::kMonologue;
  throw std::invalid_argument("corpus format must be 'pairs' or 'monologue'");
}

/// Every sentence of a corpus: targets, plus sources of pair corpora.
inline std::vector<TokenSequence> all_sentences(const PairDataset& data) {
  std::vector<TokenSequence> out;
  for (const auto& p : data.pairs) {
    if (!p.source.empty()) out.push_back(p.source);
    out.push_back(p.target);
  }
  return out;
}

/// Resolves `explicit_path` or falls back to `dir/name`.
inline std::string resolve(const std::string& explicit_path, const std::string& dir, const std::string& name) {
  if (!explicit_path.empty()) return explicit_path;
  if (dir.empty()) throw std::invalid_argument("need --" + name.substr(0, name.find('.')) + " or --models");
  return (std::filesystem::path(dir) / name).string();
}

inline void require_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error(path + " does not exist");
}

inline s2s::Seq2SeqModel load_model(const std::string& path) {
  require_file(path);
  return s2s::Seq2SeqModel::load(path);
}

inline Vocabulary load_vocab(const std::string& path) {
  require_file(path);
  return Vocabulary::load(path);
}

inline decoding::SelectorModel load_selector(const std::string& path) {
  require_file(path);
  return decoding::SelectorModel::load(path);
}

/// Parses arguments and maps failures to exit codes: 1 for runtime errors,
/// CLI11's own code for usage errors.
inline int run(CLI::App& app, int argc, char** argv, const std::function<void()>& body = {}) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (body) body();
  } catch (const std::exception& e) {
    std::cerr << app.get_name() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace steer::tools
