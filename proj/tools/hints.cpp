// Topic hints: TF-IDF retrieval index and grid posteriors.
//   hints build-index --corpus text.txt --out index.idx
//   hints search --index index.idx --query "..." -k 10
//   hints posterior --cg model.cg --vocab vocab.txt --text "..."

#include <iomanip>
#include <iostream>

#include "common.hpp"
#include "steer/topic_hints.hpp"

int main(int argc, char** argv) {
  using namespace steer;
  CLI::App app{"Counting Grid hints and retrieval", "hints"};
  app.require_subcommand(1);

  auto* build = app.add_subcommand("build-index", "index every sentence of a corpus");
  std::string corpus, format = "monologue", out;
  build->add_option("--corpus", corpus, "pairs TSV or monologue text")->required();
  build->add_option("--format", format, "pairs | monologue")->capture_default_str();
  build->add_option("--out", out, "index file")->required();

  auto* search = app.add_subcommand("search", "top-k sentences by cosine TF-IDF");
  std::string index_path, query;
  std::size_t k = 10;
  search->add_option("--index", index_path, "index file")->required();
  search->add_option("--query", query, "query text")->required();
  search->add_option("-k", k, "results")->capture_default_str();

  auto* post = app.add_subcommand("posterior", "grid posterior of a hint text or cell");
  std::string cg_path, vocab_path, text, cell;
  std::size_t smoothing = 0, top = 0;
  bool scan = false;
  post->add_option("--cg", cg_path, "Counting Grid model")->required();
  post->add_option("--vocab", vocab_path, "vocabulary (default <cg>.vocab)");
  post->add_option("--text", text, "hint text");
  post->add_option("--cell", cell, "grid cell x,y")->excludes("--text");
  post->add_option("--smoothing", smoothing, "cell neighbourhood width (default: window width)");
  post->add_option("--top", top, "print only the k most probable cells");
  post->add_flag("--scan", scan, "print the argmax cell only");

  return tools::run(app, argc, argv, [&] {
    if (*build) {
      const auto data = load_pairs(corpus, tools::parse_format(format));
      const auto index = hints::InvertedIndex::build(tools::all_sentences(data));
      index.save(out);
      std::cout << "sentences\t" << index.size() << '\n';
    } else if (*search) {
      const auto index = hints::InvertedIndex::load(index_path);
      std::cout << std::setprecision(8);
      std::size_t r = 0;
      for (const auto& hit : index.search(tokenize(query), k)) {
        std::cout << ++r << '\t' << hit.score << '\t' << hit.doc << '\t' << join(index.sentence(hit.doc)) << '\n';
      }
    } else if (*post) {
      const cg::CountingGrid grid(cg::CGModel::load(cg_path));
      cg::LocationPosterior p;
      if (!cell.empty()) {
        const auto comma = cell.find(',');
        if (comma == std::string::npos) throw std::invalid_argument("--cell expects x,y");
        const cg::GridIndex at{std::stoul(cell.substr(0, comma)), std::stoul(cell.substr(comma + 1))};
        p = hints::cell_hint(grid.grid(), at, smoothing ? smoothing : grid.window().x);
      } else {
        const auto vocab = tools::load_vocab(vocab_path.empty() ? cg_path + ".vocab" : vocab_path);
        p = hints::hint_posterior(grid, vocab, tokenize(text));
      }
      const auto best = cg::grid_index(p.grid, p.argmax());
      std::cout << "argmax\t" << best.x << ',' << best.y << '\t' << p.prob[p.argmax()] << '\n';
      if (scan) return;
      std::vector<std::size_t> order(p.prob.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      if (top > 0) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.prob[a] > p.prob[b]; });
        order.resize(std::min(top, order.size()));
      }
      std::cout << std::setprecision(10);
      for (auto i : order) {
        const auto at = cg::grid_index(p.grid, i);
        std::cout << at.x << ',' << at.y << '\t' << p.prob[i] << '\n';
      }
    }
  });
}
