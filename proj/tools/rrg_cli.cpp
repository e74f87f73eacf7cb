#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rrg/corpus.hpp"
#include "rrg/errors.hpp"
#include "rrg/harness.hpp"
#include "rrg/policy.hpp"
#include "rrg/rewards.hpp"
#include "rrg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rrg;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string corpus;  // JSONL written by gen-data; generated from config when empty
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig::defaults() : ExperimentConfig::load(g.config);
  if (g.seed) {
    cfg.trainer.seed = *g.seed;
    cfg.harness.seeds = {*g.seed};
  }
  return cfg;
}

Environment load_environment(const Globals& g) {
  ExperimentConfig cfg = load_config(g);
  if (g.corpus.empty()) return make_environment(cfg);
  return make_environment(cfg, read_corpus_jsonl(g.corpus));
}

fs::path out_dir(const Globals& g) {
  fs::path p(g.out);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
  if (!out) throw LoadError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_log(const fs::path& path, const std::vector<StepLog>& log) {
  std::string text;
  for (const auto& s : log) text += to_json(s).dump() + "\n";
  write_text(path, text);
}

Checkpoint load_checkpoint(const std::string& path, const Environment& env) {
  if (!fs::exists(path)) throw LoadError("checkpoint not found: " + path);
  return read_checkpoint(path, &env.dims);
}

const CaseRecord& find_case(const Environment& env, const std::string& id) {
  for (const auto& c : env.cases)
    if (c.case_id == id) return c;
  throw ConfigError("--case", "no case with id " + id);
}

MetricsReport eval_checkpoint(const Environment& env, const std::string& path) {
  const Checkpoint ck = load_checkpoint(path, env);
  MetricsReport r = evaluate(ck.params, env.eval_cases(), *env.rewards, env.config.trainer.max_tokens);
  r.checkpoint = ck.meta.label.empty() ? fs::path(path).filename().string() : ck.meta.label;
  r.split = env.config.harness.eval_split;
  r.seed = ck.meta.seed;
  r.config_hash = env.config.config_hash;
  return r;
}

void cmd_gen_data(const Globals& g) {
  const ExperimentConfig cfg = load_config(g);
  const Lexicon& lex = Lexicon::standard();
  const Corpus corpus = generate_corpus(cfg.corpus, lex);
  const fs::path dir = out_dir(g);
  write_corpus_jsonl(dir / "corpus.jsonl", corpus.cases, lex);
  write_vocab_json(dir / "vocab.json", lex.vocab);
  std::printf("wrote %zu cases to %s\n", corpus.cases.size(), (dir / "corpus.jsonl").c_str());
}

void cmd_sft(const Globals& g) {
  const Environment env = load_environment(g);
  const TrainConfig& tc = env.config.trainer;
  TrainState st = TrainState::from_params(initial_params(env, tc.seed), tc.seed);
  run_sft(st, env.split.train, env.split.val, tc);
  const fs::path dir = out_dir(g);
  write_checkpoint(dir / "sft.ckpt", st.theta, {1, -1, 0, tc.seed, "sft"});
  write_json(dir / "sft_val_nll.json", st.sft_val_nll);
  std::printf("sft: %zu epochs, final val nll %.6f\n", st.sft_val_nll.size(),
              st.sft_val_nll.empty() ? 0.0 : st.sft_val_nll.back());
}

void cmd_train(const Globals& g) {
  const Environment env = load_environment(g);
  const TrainConfig& tc = env.config.trainer;
  const TrainOutcome o = train(tc, initial_params(env, tc.seed), env.split.train, env.split.val, *env.rewards);
  const fs::path dir = out_dir(g);
  const long s0 = tc.stages[0].rl_steps;
  write_checkpoint(dir / "sft.ckpt", o.sft, {1, -1, 0, tc.seed, "sft"});
  write_checkpoint(dir / "stage0.ckpt", o.stage0, {1, 0, s0, tc.seed, "stage0"});
  write_checkpoint(dir / "stage1.ckpt", o.stage1, {1, 1, o.state.step, tc.seed, "stage1"});
  write_log(dir / "train_log.jsonl", o.state.log);
  write_json(dir / "config.json", env.config.to_json());
  std::printf("train: %ld policy steps, checkpoints in %s\n", o.state.step, dir.c_str());
}

void cmd_eval(const Globals& g, const std::string& checkpoint) {
  const Environment env = load_environment(g);
  const MetricsReport r = eval_checkpoint(env, checkpoint);
  const json j = to_json(r);
  write_json(out_dir(g) / ("metrics_" + r.checkpoint + ".json"), j);
  std::cout << j.dump(2) << "\n";
}

void cmd_compare(const Globals& g, const std::vector<std::string>& checkpoints) {
  if (checkpoints.size() < 2) throw CLI::ValidationError("--checkpoint", "compare needs at least two checkpoints");
  const Environment env = load_environment(g);
  std::vector<MetricsReport> reports;
  for (const auto& p : checkpoints) reports.push_back(eval_checkpoint(env, p));
  const Comparison c = compare(reports);
  const fs::path dir = out_dir(g);
  write_json(dir / "compare.json", to_json(c));
  const std::string table = comparison_table(c);
  write_text(dir / "compare.txt", table);
  std::cout << table;
}

void cmd_generate(const Globals& g, const std::string& checkpoint, const std::string& case_id, long step) {
  const Environment env = load_environment(g);
  const Checkpoint ck = load_checkpoint(checkpoint, env);
  const CaseRecord& c = find_case(env, case_id);
  const TokenSeq out = greedy_decode(ck.params, c.image_features, env.config.trainer.max_tokens);
  RewardBreakdown b = env.rewards->score(out, c, step);
  b.r_total = total_reward(b, 0, env.rewards->weights());
  const Vocab& vocab = env.rewards->lexicon().vocab;
  std::cout << vocab.detokenize(out) << "\n";
  json j = b;
  j["case_id"] = c.case_id;
  j["step"] = step;
  j["reference"] = vocab.detokenize(c.gt_report);
  std::cout << j.dump(2) << "\n";
}

void cmd_sweep(const Globals& g, const std::string& param) {
  const Environment env = load_environment(g);
  const auto& h = env.config.harness;
  const SweepResult s =
      param == "lambda_vis" ? sweep_lambda_vis(env, h.lambda_vis_grid) : sweep_k_clin(env, h.k_clin_grid);
  const fs::path dir = out_dir(g);
  write_json(dir / ("sweep_" + param + ".json"), to_json(s));
  write_text(dir / ("sweep_" + param + ".csv"), sweep_csv(s));
  for (const auto& m : s.summary)
    std::printf("%s=%g median_composite=%.4f [%.4f, %.4f] median_reward_var=%.6f\n", param.c_str(), m.value,
                m.median_composite, m.min_composite, m.max_composite, m.median_reward_var);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage group-relative policy optimization lab for template radiology reports"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Experiment config JSON")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--corpus", g.corpus, "Corpus JSONL from gen-data")->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("gen-data", "Write corpus.jsonl and vocab.json");
  auto* sft = app.add_subcommand("sft", "Supervised warmup only");
  auto* trn = app.add_subcommand("train", "SFT, then both policy stages");

  std::string checkpoint;
  auto* ev = app.add_subcommand("eval", "Greedy-decode the eval split and score it");
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);

  std::vector<std::string> checkpoints;
  auto* cmp = app.add_subcommand("compare", "Evaluate several checkpoints with deltas vs the first");
  cmp->add_option("--checkpoint", checkpoints, "Repeat once per checkpoint")->required();

  std::string case_id;
  long step = 0;
  auto* gen1 = app.add_subcommand("generate", "Decode one case and print its reward decomposition");
  gen1->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  gen1->add_option("--case", case_id)->required();
  gen1->add_option("--step", step, "Policy step for the clinical schedule")->capture_default_str();

  std::string param;
  auto* sw = app.add_subcommand("sweep", "Ablation sweep over a reward weight");
  sw->add_option("--param", param)->required()->check(CLI::IsMember({"lambda_vis", "k_clin"}));

  for (auto* sub : {gen, sft, trn, ev, cmp, gen1, sw}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) cmd_gen_data(g);
    if (*sft) cmd_sft(g);
    if (*trn) cmd_train(g);
    if (*ev) cmd_eval(g, checkpoint);
    if (*cmp) cmd_compare(g, checkpoints);
    if (*gen1) cmd_generate(g, checkpoint, case_id, step);
    if (*sw) cmd_sweep(g, param);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
