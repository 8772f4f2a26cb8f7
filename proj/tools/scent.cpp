// Persona styling over a trained base model.
//   scent rank --persona jfk/ --models out/ --src "..." -k 10
//   scent multiply --persona jfk/ --models out/ --src "..." --lambda2 0.5
//   scent sweep --persona jfk/ --models out/ --val val.txt --lambda2 0,0.5,1
//   scent build-pseudo --persona jfk/ --models out/ --out pairs.tsv
//   scent finetune --base out/forward.model --pairs pairs.tsv --val val.txt --out jfk/finetuned.model

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "common.hpp"
#include "steer/decoding.hpp"
#include "steer/scenting.hpp"
#include "steer/topic_hints.hpp"

int main(int argc, char** argv) {
  using namespace steer;
  namespace fs = std::filesystem;
  CLI::App app{"persona styling: rank, multiply, finetune", "scent"};
  app.require_subcommand(1);

  std::string persona_dir, models, vocab_path, backward_path, forward_path, lm_path, selector_path, src;
  std::size_t n = 500, topn = 10, per_step = 10, max_len = 30;
  std::uint64_t seed = 7;
  double topic_blank = 0.2;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--models", models, "directory with vocab.txt and base models");
    sub->add_option("--vocab", vocab_path, "vocabulary");
    sub->add_option("--seed", seed, "seed")->capture_default_str();
  };

  auto* rank = app.add_subcommand("rank", "rerank the persona corpus by p(S|T)");
  std::size_t k = 10;
  common(rank);
  rank->add_option("--persona", persona_dir, "persona directory")->required();
  rank->add_option("--backward", backward_path, "backward model");
  rank->add_option("--src", src, "source sentence")->required();
  rank->add_option("-k", k, "sentences to return")->capture_default_str();

  auto* multiply = app.add_subcommand("multiply", "decode with base x persona-LM mixing");
  std::optional<double> lambda1, lambda2;
  common(multiply);
  multiply->add_option("--persona", persona_dir, "persona directory with lm.model")->required();
  multiply->add_option("--forward", forward_path, "forward model");
  multiply->add_option("--backward", backward_path, "backward model");
  multiply->add_option("--lm", lm_path, "open-domain LM");
  multiply->add_option("--selector", selector_path, "sample selector");
  multiply->add_option("--src", src, "source sentence")->required();
  multiply->add_option("--lambda1", lambda1, "base exponent (default: persona meta)");
  multiply->add_option("--lambda2", lambda2, "style exponent (default: persona meta)");
  multiply->add_option("--n", n, "candidates to sample")->capture_default_str();
  multiply->add_option("--topn", topn, "candidates to print")->capture_default_str();
  multiply->add_option("--samples-per-step", per_step, "N tokens drawn per step")->capture_default_str();
  multiply->add_option("--max-len", max_len, "maximum response length")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "validation perplexity of the mixture over lambda2");
  std::string val_path;
  std::vector<double> grid_l2{0.0, 0.25, 0.5, 1.0};
  double sweep_l1 = 1.0;
  common(sweep);
  sweep->add_option("--persona", persona_dir, "persona directory with lm.model")->required();
  sweep->add_option("--forward", forward_path, "forward model");
  sweep->add_option("--val", val_path, "monologue validation text")->required();
  sweep->add_option("--lambda1", sweep_l1, "base exponent")->capture_default_str();
  sweep->add_option("--lambda2", grid_l2, "style exponents to try")->delimiter(',')->capture_default_str();

  auto* pseudo = app.add_subcommand("build-pseudo", "pseudo-context pairs for the persona corpus");
  std::string out_path;
  std::size_t candidates = 50;
  bool forward_rerank = false;
  common(pseudo);
  pseudo->add_option("--persona", persona_dir, "persona directory with corpus.txt")->required();
  pseudo->add_option("--backward", backward_path, "backward model");
  pseudo->add_option("--lm", lm_path, "open-domain LM");
  pseudo->add_option("--selector", selector_path, "sample selector");
  pseudo->add_option("--forward", forward_path, "forward model for --forward-rerank");
  pseudo->add_option("--candidates", candidates, "backward samples per sentence")->capture_default_str();
  pseudo->add_flag("--forward-rerank", forward_rerank, "rerank pseudo contexts by log p(T|S') + acceptor");
  pseudo->add_option("--out", out_path, "pairs TSV")->required();

  auto* ft = app.add_subcommand("finetune", "continue training the base model on styled pairs");
  std::string base_path, pairs_path, ft_val, ft_out, sel_out, cg_path;
  std::size_t epochs = 10, batch = 8;
  double lr = 0.002;
  common(ft);
  ft->add_option("--base", base_path, "base forward (or topic) model")->required();
  ft->add_option("--pairs", pairs_path, "styled pairs TSV (build-pseudo output)")->required();
  ft->add_option("--val", ft_val, "monologue validation text")->required();
  ft->add_option("--out", ft_out, "finetuned model file")->required();
  ft->add_option("--selector", selector_path, "base selector");
  ft->add_option("--lm", lm_path, "open-domain LM (selector feature)");
  ft->add_option("--selector-out", sel_out, "styled selector (default: selector.model next to --out)");
  ft->add_option("--cg", cg_path, "Counting Grid for topic-conditioned base models");
  ft->add_option("--topic-blank", topic_blank, "fraction of pairs trained with the uniform topic")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  ft->add_option("--epochs", epochs, "maximum epochs")->capture_default_str();
  ft->add_option("--batch", batch, "mini-batch size")->capture_default_str();
  ft->add_option("--lr", lr, "ADAM learning rate")->capture_default_str();

  return tools::run(app, argc, argv, [&] {
    const auto vocab = tools::load_vocab(tools::resolve(vocab_path, models, "vocab.txt"));
    if (*rank) {
      const auto persona = scenting::load_persona(persona_dir);
      const auto backward = tools::load_model(tools::resolve(backward_path, models, "backward.model"));
      const auto ranked = scenting::rank_retrieve(tokenize(src), persona, backward, vocab, k);
      std::cout << "rank\tbackward\ttext\n" << std::setprecision(8);
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        std::cout << r + 1 << '\t' << ranked[r].score << '\t' << join(persona.corpus.pairs[ranked[r].index].target)
                  << '\n';
      }
    } else if (*multiply) {
      const auto persona = scenting::load_persona(persona_dir);
      if (!persona.lm) throw std::runtime_error("persona has no lm.model");
      const auto forward = tools::load_model(tools::resolve(forward_path, models, "forward.model"));
      const auto backward = tools::load_model(tools::resolve(backward_path, models, "backward.model"));
      const auto lm = tools::load_model(tools::resolve(lm_path, models, "lm.model"));
      const auto selector = tools::load_selector(tools::resolve(selector_path, models, "selector.model"));
      decoding::DecodingModels dm{&forward, &lm, &selector,
                                  {&*persona.lm, lambda1.value_or(persona.lambda1), lambda2.value_or(persona.lambda2)}};
      const auto source = vocab.encode(tokenize(src));
      const decoding::SamplerConfig config{decoding::SamplingMode::kSelective, per_step, max_len};
      auto cands = decoding::generate_candidates(dm, s2s::wrap_source(source), n, config, seed);
      decoding::rerank(cands, backward, source);
      std::cout << "rank\tcomposite\tbackward\tacceptor\tmultiplicity\ttext\n" << std::setprecision(8);
      for (std::size_t r = 0; r < cands.size() && r < topn; ++r) {
        const auto& c = cands[r];
        std::cout << r + 1 << '\t' << c.composite << '\t' << c.backward_score << '\t' << c.log_acceptor() << '\t'
                  << c.multiplicity << '\t' << join(vocab.decode(c.words())) << '\n';
      }
    } else if (*sweep) {
      const auto persona = scenting::load_persona(persona_dir);
      if (!persona.lm) throw std::runtime_error("persona has no lm.model");
      const auto forward = tools::load_model(tools::resolve(forward_path, models, "forward.model"));
      const auto val = scenting::previous_sentence_pairs(load_pairs(val_path, CorpusFormat::kMonologue), vocab);
      std::cout << "lambda1\tlambda2\tperplexity\n" << std::setprecision(8);
      for (double l2 : grid_l2) {
        std::cout << sweep_l1 << '\t' << l2 << '\t' << scenting::multiply_perplexity(forward, *persona.lm, val, sweep_l1, l2)
                  << '\n';
      }
    } else if (*pseudo) {
      const auto persona = scenting::load_persona(persona_dir);
      const auto backward = tools::load_model(tools::resolve(backward_path, models, "backward.model"));
      const auto lm = tools::load_model(tools::resolve(lm_path, models, "lm.model"));
      const auto selector = tools::load_selector(tools::resolve(selector_path, models, "selector.model"));
      std::optional<s2s::Seq2SeqModel> forward;
      if (forward_rerank) forward = tools::load_model(tools::resolve(forward_path, models, "forward.model"));
      scenting::PseudoPairConfig config;
      config.candidates = candidates;
      config.seed = seed;
      const scenting::PseudoContextModels pm{&backward, &lm, &selector, forward ? &*forward : nullptr};
      const auto out = scenting::build_pseudo_pairs(persona.corpus, vocab, pm, config);
      std::ofstream file(out_path);
      if (!file) throw std::runtime_error("cannot write " + out_path);
      write_pairs(file, out);
      std::cout << "pairs\t" << out.size() << '\n';
    } else if (*ft) {
      const auto base = tools::load_model(base_path);
      const auto lm = tools::load_model(tools::resolve(lm_path, models, "lm.model"));
      const auto base_selector = tools::load_selector(tools::resolve(selector_path, models, "selector.model"));
      const auto pairs = s2s::encode_dataset(vocab, load_pairs(pairs_path, CorpusFormat::kPairs));
      const auto val = scenting::previous_sentence_pairs(load_pairs(ft_val, CorpusFormat::kMonologue), vocab);
      scenting::FinetuneConfig config;
      config.train.epochs = epochs;
      config.train.batch_size = batch;
      config.train.learning_rate = lr;
      config.train.seed = seed;
      config.selector.seed = derive_seed(seed, 4);
      config.harvest.seed = derive_seed(seed, 5);
      std::optional<std::vector<Eigen::MatrixXd>> topics, val_topics;
      if (base.shape().topic_width > 0) {
        if (cg_path.empty()) throw std::invalid_argument("topic-conditioned base model needs --cg");
        const cg::CountingGrid grid(cg::CGModel::load(cg_path));
        topics = hints::target_topics(grid, pairs);
        hints::blank_topics(*topics, topic_blank, derive_seed(seed, 6));
        val_topics = hints::target_topics(grid, val);
      }
      const auto result = scenting::finetune(base, base_selector, lm, pairs, val, config, topics ? &*topics : nullptr,
                                             val_topics ? &*val_topics : nullptr);
      result.model.save(ft_out);
      const std::string sel = sel_out.empty() ? (fs::path(ft_out).parent_path() / "selector.model").string() : sel_out;
      result.selector.save(sel);
      std::cout << std::setprecision(8);
      for (std::size_t e = 0; e < result.val_perplexity.size(); ++e) {
        std::cout << "epoch\t" << e << "\tval_perplexity\t" << result.val_perplexity[e] << '\n';
      }
      std::cout << "best_epoch\t" << result.best_epoch << "\tstopped_early\t" << (result.stopped_early ? 1 : 0) << '\n';
    }
  });
}
