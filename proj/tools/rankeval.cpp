// 20-way ranking evaluation.
//   rankeval --scorer backward --models dir/ --instances test.tsv   -> MRR<TAB>P@1
//   rankeval --make-from pairs.tsv --count 500 --seed 7 --out test.tsv

#include <fstream>
#include <iomanip>
#include <iostream>

#include "common.hpp"
#include "steer/eval.hpp"

int main(int argc, char** argv) {
  using namespace steer;
  CLI::App app{"MRR and P@1 over one true answer and 19 distractors", "rankeval"};
  std::string scorer = "backward", models, instances, make_from, out;
  std::size_t count = 500;
  std::uint64_t seed = 7;
  app.add_option("--scorer", scorer, "forward | forward/lm | backward")->capture_default_str();
  app.add_option("--models", models, "directory with vocab.txt and the scorer's models");
  app.add_option("--instances", instances, "instance TSV: source, truth, 19 distractors");
  app.add_option("--make-from", make_from, "build instances from a pairs TSV instead of scoring");
  app.add_option("--count", count, "instances to build")->capture_default_str();
  app.add_option("--seed", seed, "distractor sampling seed")->capture_default_str();
  app.add_option("--out", out, "instance file written by --make-from");

  return tools::run(app, argc, argv, [&] {
    if (!make_from.empty()) {
      if (out.empty()) throw std::invalid_argument("--make-from needs --out");
      const auto data = load_pairs(make_from, CorpusFormat::kPairs);
      std::ofstream file(out);
      if (!file) throw std::runtime_error("cannot write " + out);
      eval::write_instances(file, eval::make_instances(data, count, seed));
      return;
    }
    if (instances.empty() || models.empty()) throw std::invalid_argument("scoring needs --models and --instances");
    const auto vocab = tools::load_vocab(tools::resolve("", models, "vocab.txt"));
    std::optional<s2s::Seq2SeqModel> forward, backward, lm;
    auto maybe = [&](std::optional<s2s::Seq2SeqModel>& slot, const std::string& name) {
      const auto path = tools::resolve("", models, name);
      if (std::filesystem::exists(path)) slot = s2s::Seq2SeqModel::load(path);
    };
    maybe(forward, "forward.model");
    maybe(backward, "backward.model");
    maybe(lm, "lm.model");
    const eval::ScoringModels sm{&vocab, forward ? &*forward : nullptr, backward ? &*backward : nullptr,
                                 lm ? &*lm : nullptr};
    const auto result = eval::ranking_eval(eval::make_scorer(scorer, sm), eval::load_instances(instances));
    std::cout << std::setprecision(6) << result.mrr << '\t' << result.p_at_1 << '\n';
  });
}
