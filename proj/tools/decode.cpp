// Candidate generation with selective sampling and backward reranking.
//   decode --models out/ --src "where are you ?" --n 500 --topn 10 --seed 7
// Prints rank, composite, backward, acceptor, multiplicity and text as TSV.

#include <iomanip>
#include <iostream>

#include "common.hpp"
#include "steer/decoding.hpp"
#include "steer/topic_hints.hpp"

int main(int argc, char** argv) {
  using namespace steer;
  CLI::App app{"sample and rerank responses", "decode"};
  std::string models, forward_path, backward_path, lm_path, selector_path, vocab_path, src;
  std::string hint, cg_path, style_path;
  std::size_t n = 500, topn = 10, per_step = 10, max_len = 30;
  std::uint64_t seed = 7;
  double lambda1 = 1.0, lambda2 = 0.5;
  bool vanilla = false;
  app.add_option("--models", models, "directory with vocab.txt, forward/backward/lm/selector.model");
  app.add_option("--forward", forward_path, "forward model p(T|S) (default forward.model, or topic.model with a hint)");
  app.add_option("--backward", backward_path, "backward model p(S|T)");
  app.add_option("--lm", lm_path, "unconditioned language model p(T)");
  app.add_option("--selector", selector_path, "sample selector");
  app.add_option("--vocab", vocab_path, "vocabulary");
  app.add_option("--src", src, "source sentence")->required();
  app.add_option("--n", n, "candidates to sample")->capture_default_str();
  app.add_option("--topn", topn, "candidates to print")->capture_default_str();
  app.add_option("--samples-per-step", per_step, "N tokens drawn per step")->capture_default_str();
  app.add_option("--max-len", max_len, "maximum response length")->capture_default_str();
  app.add_option("--seed", seed, "sampling seed")->capture_default_str();
  app.add_flag("--vanilla", vanilla, "plain ancestral sampling instead of selective sampling");
  app.add_option("--topic-from-hint", hint, "hint text whose grid posterior conditions the decoder");
  app.add_option("--cg", cg_path, "Counting Grid for --topic-from-hint (default <models>/cg.model)");
  app.add_option("--style-lm", style_path, "style LM mixed into the step distribution");
  app.add_option("--lambda1", lambda1, "base exponent for --style-lm")->capture_default_str();
  app.add_option("--lambda2", lambda2, "style exponent for --style-lm")->capture_default_str();

  return tools::run(app, argc, argv, [&] {
    const auto vocab = tools::load_vocab(tools::resolve(vocab_path, models, "vocab.txt"));
    const auto forward =
        tools::load_model(tools::resolve(forward_path, models, hint.empty() ? "forward.model" : "topic.model"));
    const auto backward = tools::load_model(tools::resolve(backward_path, models, "backward.model"));
    const auto lm = tools::load_model(tools::resolve(lm_path, models, "lm.model"));
    const auto selector = tools::load_selector(tools::resolve(selector_path, models, "selector.model"));
    std::optional<s2s::Seq2SeqModel> style;
    if (!style_path.empty()) style = tools::load_model(style_path);

    decoding::DecodingModels dm{&forward, &lm, &selector, {}};
    if (style) dm.style = {&*style, lambda1, lambda2};
    const decoding::SamplerConfig config{vanilla ? decoding::SamplingMode::kVanilla : decoding::SamplingMode::kSelective,
                                         per_step, max_len};
    std::optional<Eigen::MatrixXd> topic;
    if (!hint.empty()) {
      if (cg_path.empty() && models.empty()) throw std::invalid_argument("--topic-from-hint needs --cg or --models");
      const cg::CountingGrid grid(cg::CGModel::load(tools::resolve(cg_path, models, "cg.model")));
      topic = hints::to_topic(hints::hint_posterior(grid, vocab, tokenize(hint)));
    }
    const auto source = vocab.encode(tokenize(src));
    if (source.empty()) throw std::invalid_argument("source sentence is empty");
    auto cands = decoding::generate_candidates(dm, s2s::wrap_source(source), n, config, seed, topic ? &*topic : nullptr);
    decoding::rerank(cands, backward, source);
    std::cout << "rank\tcomposite\tbackward\tacceptor\tmultiplicity\ttext\n" << std::setprecision(8);
    for (std::size_t r = 0; r < cands.size() && r < topn; ++r) {
      const auto& c = cands[r];
      std::cout << r + 1 << '\t' << c.composite << '\t' << c.backward_score << '\t' << c.log_acceptor() << '\t'
                << c.multiplicity << '\t' << join(vocab.decode(c.words())) << '\n';
    }
  });
}
