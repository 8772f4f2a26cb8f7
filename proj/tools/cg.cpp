// Counting Grid training and inspection.
//   cg train --input text.txt --grid 16x16 --window 3x3 --out model.cg
//   cg show --model model.cg --vocab model.cg.vocab --topk 3

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "common.hpp"
#include "steer/counting_grid.hpp"

int main(int argc, char** argv) {
  using namespace steer;
  CLI::App app{"Counting Grid topic model", "cg"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "fit a grid by EM on sentence bags");
  std::string corpus, format = "monologue", grid = "16x16", window = "3x3", out, vocab_path;
  std::size_t iterations = 50, vocab_cap = 20000;
  std::uint64_t seed = 7;
  bool quiet = false;
  train->add_option("--input,--corpus", corpus, "training text (pairs TSV or monologue)")->required();
  train->add_option("--format", format, "pairs | monologue")->capture_default_str();
  train->add_option("--grid", grid, "grid extent ExE")->capture_default_str();
  train->add_option("--window", window, "window extent WxW")->capture_default_str();
  train->add_option("--iters,--iterations", iterations, "EM iterations")->capture_default_str();
  train->add_option("--seed", seed, "initialization seed")->capture_default_str();
  train->add_option("--vocab", vocab_path, "existing vocabulary; otherwise <out>.vocab is written");
  train->add_option("--vocab-cap", vocab_cap, "vocabulary size cap when building")->capture_default_str();
  train->add_option("--out", out, "model file")->required();
  train->add_flag("--quiet", quiet, "do not print the likelihood trace");

  auto* show = app.add_subcommand("show", "print the top words of every cell");
  std::string model_path, show_vocab;
  std::size_t topk = 3, width = 12;
  show->add_option("--model", model_path, "model file")->required();
  show->add_option("--vocab", show_vocab, "vocabulary (default <model>.vocab)");
  show->add_option("--topk", topk, "words per cell")->capture_default_str();
  show->add_option("--cell-width", width, "printed column width")->capture_default_str();

  return tools::run(app, argc, argv, [&] {
    if (*train) {
      const auto data = load_pairs(corpus, tools::parse_format(format));
      const auto sentences = tools::all_sentences(data);
      Vocabulary vocab = vocab_path.empty() ? build_vocab(sentences, vocab_cap) : tools::load_vocab(vocab_path);
      std::vector<Bag> bags;
      for (const auto& s : sentences) {
        Bag b = to_bag(s, vocab);
        if (!b.empty()) bags.push_back(std::move(b));
      }
      cg::EMConfig config;
      config.grid = tools::parse_extent(grid);
      config.window = tools::parse_extent(window);
      config.iterations = iterations;
      config.seed = seed;
      const auto result = cg::em_fit(bags, vocab.size(), config);
      if (const auto parent = std::filesystem::path(out).parent_path(); !parent.empty()) {
        std::filesystem::create_directories(parent);
      }
      result.model.save(out);
      if (vocab_path.empty()) vocab.save(out + ".vocab");
      if (!quiet) {
        std::cout << std::setprecision(10);
        for (std::size_t i = 0; i < result.log_likelihood.size(); ++i) {
          std::cout << "iter\t" << i + 1 << "\tloglik\t" << result.log_likelihood[i] << '\n';
        }
      }
    } else if (*show) {
      const auto model = cg::CGModel::load(model_path);
      const auto vocab = tools::load_vocab(show_vocab.empty() ? model_path + ".vocab" : show_vocab);
      std::cout << cg::render_grid(model, vocab, topk, width);
    }
  });
}
