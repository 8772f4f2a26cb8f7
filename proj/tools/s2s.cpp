// Encoder-decoder training, evaluation and gradient checking.
//   s2s train --pairs data.tsv --dir out/ --seed 7 [--topic-width 256 --cg model.cg]
//   s2s eval --model out/forward.model --vocab out/vocab.txt --pairs dev.tsv
//   s2s gradcheck

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "common.hpp"
#include "steer/counting_grid.hpp"
#include "steer/selector.hpp"
#include "steer/seq2seq.hpp"
#include "steer/topic_hints.hpp"

namespace {

std::set<std::string> parse_list(const std::string& text) {
  std::set<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace steer;
  namespace fs = std::filesystem;
  CLI::App app{"attentional LSTM encoder-decoder", "s2s"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train forward, backward, LM and selector models");
  std::string pairs, dir, vocab_path, cg_path, format = "pairs", only = "forward,backward,lm,selector";
  std::size_t topic_width = 0, embed = 64, hidden = 128, layers = 2, epochs = 10, batch = 32, vocab_cap = 20000;
  double lr = 0.002, clip = 5.0, init = 0.08;
  std::uint64_t seed = 7;
  double topic_blank = 0.2;
  bool quiet = false;
  train->add_option("--pairs", pairs, "source<TAB>target training pairs")->required();
  train->add_option("--format", format, "pairs | monologue (monologue suits --only lm)")->capture_default_str();
  train->add_option("--dir", dir, "output directory")->required();
  train->add_option("--seed", seed, "initialization and shuffling seed")->capture_default_str();
  train->add_option("--vocab", vocab_path, "existing vocabulary (default: built and saved as vocab.txt)");
  train->add_option("--vocab-cap", vocab_cap, "vocabulary size cap")->capture_default_str();
  train->add_option("--embed", embed, "embedding width d")->capture_default_str();
  train->add_option("--hidden", hidden, "LSTM width m")->capture_default_str();
  train->add_option("--layers", layers, "LSTM layers")->capture_default_str();
  train->add_option("--epochs", epochs, "training epochs")->capture_default_str();
  train->add_option("--batch", batch, "mini-batch size")->capture_default_str();
  train->add_option("--lr", lr, "ADAM learning rate")->capture_default_str();
  train->add_option("--clip", clip, "global gradient-norm clip")->capture_default_str();
  train->add_option("--init", init, "uniform initialization range")->capture_default_str();
  train->add_option("--topic-width", topic_width, "topic input width |L| (grid cells)");
  train->add_option("--cg", cg_path, "Counting Grid for topic inputs; also trains topic.model");
  train->add_option("--topic-blank", topic_blank, "fraction of pairs trained with the uniform topic")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  train->add_option("--only", only, "comma list of forward,backward,lm,selector,topic")->capture_default_str();
  train->add_flag("--quiet", quiet, "do not print epoch losses");

  auto* eval = app.add_subcommand("eval", "perplexity of a model on pairs");
  std::string model_path, eval_pairs, eval_vocab, direction = "forward", eval_cg;
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--pairs", eval_pairs, "source<TAB>target pairs")->required();
  eval->add_option("--vocab", eval_vocab, "vocabulary (default: vocab.txt next to the model)");
  eval->add_option("--direction", direction, "forward | backward | lm")->capture_default_str();
  eval->add_option("--cg", eval_cg, "Counting Grid for topic-conditioned models");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  std::size_t seeds = 20;
  std::uint64_t gc_seed = 0;
  double tolerance = 1e-4;
  gc->add_option("--seeds", seeds, "number of random tiny models")->capture_default_str();
  gc->add_option("--seed", gc_seed, "first seed")->capture_default_str();
  gc->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();

  int status = 0;
  const int rc = tools::run(app, argc, argv, [&] {
    if (*train) {
      const auto wanted = parse_list(only);
      for (const auto& w : wanted) {
        if (w != "forward" && w != "backward" && w != "lm" && w != "selector" && w != "topic") {
          throw std::invalid_argument("unknown model '" + w + "' in --only");
        }
      }
      const auto data = load_pairs(pairs, tools::parse_format(format));
      fs::create_directories(dir);
      const Vocabulary vocab =
          vocab_path.empty() ? build_vocab(tools::all_sentences(data), vocab_cap) : tools::load_vocab(vocab_path);
      vocab.save((fs::path(dir) / "vocab.txt").string());
      const auto encoded = s2s::encode_dataset(vocab, data);

      s2s::TrainConfig config;
      config.learning_rate = lr;
      config.clip_norm = clip;
      config.batch_size = batch;
      config.epochs = epochs;
      config.seed = seed;
      const s2s::ModelShape shape{vocab.size(), embed, hidden, layers, 0};
      auto fit = [&](const std::string& name, const std::vector<s2s::EncodedPair>& set, s2s::ModelShape sh,
                     std::uint64_t stream, const std::vector<Eigen::MatrixXd>* topics) {
        auto model = s2s::Seq2SeqModel::random(sh, derive_seed(seed, stream), init);
        s2s::train(model, set, config, topics, [&](std::size_t epoch, const s2s::Seq2SeqModel&, double loss) {
          if (!quiet) std::cout << name << "\tepoch\t" << epoch << "\tloss\t" << std::setprecision(8) << loss << '\n';
          return true;
        });
        model.save((fs::path(dir) / (name + ".model")).string());
        return model;
      };

      std::optional<s2s::Seq2SeqModel> forward, lm;
      if (wanted.count("forward") || wanted.count("selector")) forward = fit("forward", encoded, shape, 1, nullptr);
      if (wanted.count("backward")) fit("backward", s2s::reversed_pairs(encoded), shape, 2, nullptr);
      if (wanted.count("lm") || wanted.count("selector")) lm = fit("lm", s2s::lm_pairs(encoded), shape, 3, nullptr);
      if (wanted.count("selector")) {
        decoding::SelectorConfig sc;
        sc.seed = derive_seed(seed, 4);
        decoding::HarvestConfig hc;
        hc.seed = derive_seed(seed, 5);
        const auto examples = decoding::harvest_selector_examples(*forward, *lm, encoded, hc);
        const auto selector = decoding::fit_selector(examples, sc);
        selector.save((fs::path(dir) / "selector.model").string());
        if (!quiet) {
          const auto acc = decoding::selector_accuracy(selector, examples);
          std::cout << "selector\taccuracy\t" << acc.accuracy << "\tbalanced\t" << acc.balanced << '\n';
        }
      }
      if (!cg_path.empty() || wanted.count("topic")) {
        if (cg_path.empty()) throw std::invalid_argument("topic model needs --cg");
        const cg::CountingGrid grid(cg::CGModel::load(cg_path));
        if (grid.model().vocab_size != vocab.size()) {
          throw std::invalid_argument("Counting Grid vocabulary size differs from the pair vocabulary");
        }
        const std::size_t width = grid.grid().area();
        if (topic_width != 0 && topic_width != width) {
          throw std::invalid_argument("--topic-width " + std::to_string(topic_width) + " differs from the grid's " +
                                      std::to_string(width) + " cells");
        }
        auto topics = hints::target_topics(grid, encoded);
        hints::blank_topics(topics, topic_blank, derive_seed(seed, 6));
        auto sh = shape;
        sh.topic_width = width;
        fit("topic", encoded, sh, 6, &topics);
      } else if (topic_width != 0) {
        throw std::invalid_argument("--topic-width needs --cg to supply topic inputs");
      }
    } else if (*eval) {
      const auto model = tools::load_model(model_path);
      const auto vocab = tools::load_vocab(
          eval_vocab.empty() ? (fs::path(model_path).parent_path() / "vocab.txt").string() : eval_vocab);
      const auto data = load_pairs(eval_pairs, CorpusFormat::kPairs);
      auto encoded = s2s::encode_dataset(vocab, data);
      if (direction == "backward") {
        encoded = s2s::reversed_pairs(encoded);
      } else if (direction == "lm") {
        encoded = s2s::lm_pairs(encoded);
      } else if (direction != "forward") {
        throw std::invalid_argument("direction must be forward, backward or lm");
      }
      std::optional<std::vector<Eigen::MatrixXd>> topics;
      if (model.shape().topic_width > 0) {
        if (eval_cg.empty()) throw std::invalid_argument("topic-conditioned model needs --cg");
        topics = hints::target_topics(cg::CountingGrid(cg::CGModel::load(eval_cg)), encoded);
      }
      std::cout << std::setprecision(10) << s2s::perplexity(model, encoded, topics ? &*topics : nullptr) << '\n';
    } else if (*gc) {
      double worst = 0.0;
      for (std::size_t k = 0; k < seeds; ++k) {
        const std::uint64_t seed_k = gc_seed + k;
        const s2s::ModelShape sh{12, 4, 6, 2, k % 2 ? std::size_t{5} : std::size_t{0}};
        const auto model = s2s::Seq2SeqModel::random(sh, seed_k, 0.5);
        Rng rng(derive_seed(seed_k, 1));
        std::vector<s2s::EncodedPair> set;
        std::vector<Eigen::MatrixXd> topics;
        for (int i = 0; i < 3; ++i) {
          std::vector<TokenId> s, t;
          const std::size_t ls = 1 + rng.index(4), lt = 1 + rng.index(4);
          for (std::size_t j = 0; j < ls; ++j) s.push_back(static_cast<TokenId>(3 + rng.index(9)));
          for (std::size_t j = 0; j < lt; ++j) t.push_back(static_cast<TokenId>(3 + rng.index(9)));
          set.push_back({s2s::wrap_source(s), t});
          if (sh.topic_width > 0) {
            topics.push_back(hints::to_topic({{sh.topic_width, 1}, rng.dirichlet(sh.topic_width, 1.0)}));
          }
        }
        const auto report = s2s::gradient_check(model, set, sh.topic_width ? &topics : nullptr);
        worst = std::max(worst, report.max_relative_error);
        std::cout << "seed\t" << seed_k << "\tmax_relative_error\t" << report.max_relative_error << '\n';
      }
      std::cout << "worst\t" << worst << '\t' << (worst < tolerance ? "ok" : "FAIL") << '\n';
      if (!(worst < tolerance)) status = 1;
    }
  });
  return rc != 0 ? rc : status;
}
