#include "rrg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "rrg/errors.hpp"
#include "rrg/metrics.hpp"
#include "rrg/parallel.hpp"
#include "rrg/rng.hpp"

namespace rrg {

using nlohmann::json;

// ---------------------------------------------------------------- config

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ExperimentConfig::validate() const {
  corpus.validate();
  if (std::abs(split.train + split.val + split.test - 1.0) > 1e-9)
    throw ConfigError("corpus.split", "ratios must sum to 1");
  if (policy.embed_dim < 1) throw ConfigError("policy.embed_dim", "must be positive");
  if (policy.context < 1) throw ConfigError("policy.context", "must be positive");
  rewards.weights.validate();
  if (rewards.semantic_dim < 1) throw ConfigError("rewards.semantic_dim", "must be positive");
  if (!(rewards.expert_ridge > 0.0)) throw ConfigError("rewards.expert_ridge", "must be positive");
  trainer.validate();
  if (harness.eval_split != "val" && harness.eval_split != "test" && harness.eval_split != "train")
    throw ConfigError("harness.eval_split", "expected train, val or test");
  if (harness.seeds.empty()) throw ConfigError("harness.seeds", "need at least one seed");
  if (harness.workers < 1) throw ConfigError("harness.workers", "must be positive");
}

json ExperimentConfig::to_json() const {
  json rewards_j = rewards.weights;
  rewards_j["semantic_dim"] = rewards.semantic_dim;
  rewards_j["embedding_seed"] = rewards.embedding_seed;
  rewards_j["expert_ridge"] = rewards.expert_ridge;
  json corpus_j = corpus;
  corpus_j["split"] = {split.train, split.val, split.test};
  return json{{"corpus", corpus_j},
              {"policy", {{"embed_dim", policy.embed_dim}, {"context", policy.context}}},
              {"rewards", rewards_j},
              {"trainer", trainer},
              {"harness",
               {{"eval_split", harness.eval_split},
                {"seeds", harness.seeds},
                {"lambda_vis_grid", harness.lambda_vis_grid},
                {"k_clin_grid", harness.k_clin_grid},
                {"workers", harness.workers}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::vector<std::string> kSections = {"corpus", "policy", "rewards", "trainer", "harness"};
  for (const auto& [key, _] : j.items())
    if (std::find(kSections.begin(), kSections.end(), key) == kSections.end())
      throw ConfigError(key, "unknown config section");
  ExperimentConfig c;
  try {
    if (j.contains("corpus")) {
      const auto& cj = j.at("corpus");
      c.corpus = cj.get<CorpusConfig>();
      if (cj.contains("split")) {
        const auto r = cj.at("split").get<std::vector<double>>();
        if (r.size() != 3) throw ConfigError("corpus.split", "expected [train, val, test]");
        c.split = {r[0], r[1], r[2]};
      }
    }
    if (j.contains("policy")) {
      const auto& pj = j.at("policy");
      c.policy.embed_dim = pj.value("embed_dim", c.policy.embed_dim);
      c.policy.context = pj.value("context", c.policy.context);
    }
    if (j.contains("rewards")) {
      const auto& rj = j.at("rewards");
      c.rewards.weights = rj.get<RewardWeights>();
      c.rewards.semantic_dim = rj.value("semantic_dim", c.rewards.semantic_dim);
      c.rewards.embedding_seed = rj.value("embedding_seed", c.rewards.embedding_seed);
      c.rewards.expert_ridge = rj.value("expert_ridge", c.rewards.expert_ridge);
    }
    if (j.contains("trainer")) c.trainer = j.at("trainer").get<TrainConfig>();
    if (j.contains("harness")) {
      const auto& hj = j.at("harness");
      c.harness.eval_split = hj.value("eval_split", c.harness.eval_split);
      c.harness.seeds = hj.value("seeds", c.harness.seeds);
      c.harness.lambda_vis_grid = hj.value("lambda_vis_grid", c.harness.lambda_vis_grid);
      c.harness.k_clin_grid = hj.value("k_clin_grid", c.harness.k_clin_grid);
      c.harness.workers = hj.value("workers", c.harness.workers);
    }
  } catch (const json::exception& e) {
    throw ConfigError("config", e.what());
  }
  c.validate();
  c.config_hash = fnv1a_hex(c.to_json().dump());
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw ConfigError("--config", path.string() + ": " + e.what());
  }
  auto c = from_json(j);
  c.config_hash = fnv1a_hex(bytes);
  return c;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.config_hash = fnv1a_hex(c.to_json().dump());
  return c;
}

// ---------------------------------------------------------------- environment

const std::vector<CaseRecord>& Environment::eval_cases() const {
  if (config.harness.eval_split == "train") return split.train;
  if (config.harness.eval_split == "test") return split.test;
  return split.val;
}

RewardModel Environment::reweighted(const RewardWeights& w) const {
  return RewardModel(w, rewards->embeddings(), rewards->expert(), rewards->lexicon());
}

Environment make_environment(const ExperimentConfig& cfg, std::optional<std::vector<CaseRecord>> cases) {
  cfg.validate();
  const Lexicon& lex = Lexicon::standard();
  Environment env;
  env.config = cfg;
  env.cases = cases ? std::move(*cases) : generate_corpus(cfg.corpus, lex).cases;
  if (env.cases.empty()) throw ConfigError("corpus.n_cases", "corpus is empty");
  env.split = split_corpus(env.cases, cfg.split, cfg.corpus.seed);
  if (env.split.train.empty()) throw ConfigError("corpus.split", "training split is empty");
  env.dims = PolicyDims{lex.vocab.size(), cfg.policy.embed_dim,
                        static_cast<int>(env.cases.front().image_features.size()), cfg.policy.context};
  env.dims.validate();
  auto expert = DomainExpert::fit(env.split.train, cfg.rewards.expert_ridge, lex);
  auto emb = EmbeddingTable::seeded(lex, cfg.rewards.semantic_dim, cfg.rewards.embedding_seed);
  env.rewards = std::make_unique<RewardModel>(cfg.rewards.weights, std::move(emb), std::move(expert), lex);
  return env;
}

PolicyParams initial_params(const Environment& env, std::uint64_t seed) {
  return init_params(env.dims, derive_seed(seed, {61}));
}

// ---------------------------------------------------------------- evaluation

json to_json(const MetricsReport& r) {
  return json{{"schema_version", kMetricsSchemaVersion},
              {"checkpoint", r.checkpoint},
              {"split", r.split},
              {"seed", r.seed},
              {"config_hash", r.config_hash},
              {"n_cases", r.n_cases},
              {"metrics",
               {{"bleu1", r.bleu[0]},
                {"bleu2", r.bleu[1]},
                {"bleu3", r.bleu[2]},
                {"bleu4", r.bleu[3]},
                {"avg_bleu", r.avg_bleu},
                {"rougeL", r.rougeL},
                {"meteor_lite", r.meteor},
                {"clinical_precision", r.clinical_precision},
                {"clinical_recall", r.clinical_recall},
                {"clinical_f1", r.clinical_f1},
                {"triple_f1", r.triple_f1},
                {"visual_similarity", r.visual_similarity},
                {"format_rate", r.format_rate}}}};
}

MetricsReport metrics_from_json(const json& j) {
  if (j.value("schema_version", 0) != kMetricsSchemaVersion) throw LoadError("unsupported metrics schema version");
  MetricsReport r;
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.n_cases = j.at("n_cases").get<std::size_t>();
  const auto& m = j.at("metrics");
  for (int n = 0; n < 4; ++n) r.bleu[n] = m.at("bleu" + std::to_string(n + 1)).get<double>();
  r.avg_bleu = m.at("avg_bleu").get<double>();
  r.rougeL = m.at("rougeL").get<double>();
  r.meteor = m.at("meteor_lite").get<double>();
  r.clinical_precision = m.at("clinical_precision").get<double>();
  r.clinical_recall = m.at("clinical_recall").get<double>();
  r.clinical_f1 = m.at("clinical_f1").get<double>();
  r.triple_f1 = m.at("triple_f1").get<double>();
  r.visual_similarity = m.at("visual_similarity").get<double>();
  r.format_rate = m.at("format_rate").get<double>();
  return r;
}

std::map<std::string, double> metric_values(const MetricsReport& r) {
  return {{"bleu1", r.bleu[0]},
          {"bleu2", r.bleu[1]},
          {"bleu3", r.bleu[2]},
          {"bleu4", r.bleu[3]},
          {"avg_bleu", r.avg_bleu},
          {"rougeL", r.rougeL},
          {"meteor_lite", r.meteor},
          {"clinical_precision", r.clinical_precision},
          {"clinical_recall", r.clinical_recall},
          {"clinical_f1", r.clinical_f1},
          {"triple_f1", r.triple_f1},
          {"visual_similarity", r.visual_similarity},
          {"format_rate", r.format_rate}};
}

MetricsReport evaluate_reports(const std::vector<TokenSeq>& decoded, const std::vector<CaseRecord>& cases,
                               const RewardModel& rewards) {
  if (decoded.size() != cases.size()) throw std::invalid_argument("one decoded report per case required");
  if (cases.empty()) throw ConfigError("split", "cannot evaluate an empty split");
  const Lexicon& lex = rewards.lexicon();
  MetricsReport r;
  F1Counts labels, triples;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const TokenSeq& out = decoded[i];
    const TokenSeq& gt = cases[i].gt_report;
    for (int n = 0; n < 4; ++n) r.bleu[n] += bleu_n(out, gt, n + 1);
    r.rougeL += rouge_l(out, gt);
    r.meteor += meteor_lite(out, gt);
    const LabelSet pred = extract_labels(out, lex);
    labels += f1_counts(pred, extract_labels(gt, lex));
    triples += f1_counts(extract_triples(out, lex), extract_triples(gt, lex));
    r.visual_similarity += cosine_or_zero(pred.multihot(), rewards.expert().image_head(cases[i].image_features));
    r.format_rate += format_reward(out);
  }
  const double n = static_cast<double>(cases.size());
  for (double& b : r.bleu) b /= n;
  r.avg_bleu = (r.bleu[0] + r.bleu[1] + r.bleu[2] + r.bleu[3]) / 4.0;
  r.rougeL /= n;
  r.meteor /= n;
  r.visual_similarity /= n;
  r.format_rate /= n;
  r.clinical_precision = labels.precision();
  r.clinical_recall = labels.recall();
  r.clinical_f1 = labels.f1();
  r.triple_f1 = triples.f1();
  r.n_cases = cases.size();
  return r;
}

MetricsReport evaluate(const PolicyParams& params, const std::vector<CaseRecord>& cases, const RewardModel& rewards,
                       int max_tokens) {
  std::vector<TokenSeq> decoded;
  decoded.reserve(cases.size());
  for (const auto& c : cases) decoded.push_back(greedy_decode(params, c.image_features, max_tokens));
  return evaluate_reports(decoded, cases, rewards);
}

Comparison compare(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("compare needs at least one report");
  Comparison c;
  c.reports = reports;
  const auto base = metric_values(reports.front());
  for (const auto& r : reports) {
    std::map<std::string, double> d;
    for (const auto& [k, v] : metric_values(r)) d[k] = v - base.at(k);
    c.deltas.push_back(std::move(d));
  }
  return c;
}

json to_json(const Comparison& c) {
  json rows = json::array();
  for (std::size_t i = 0; i < c.reports.size(); ++i)
    rows.push_back(json{{"report", to_json(c.reports[i])}, {"delta_vs_first", c.deltas[i]}});
  return json{{"schema_version", kMetricsSchemaVersion}, {"rows", rows}};
}

std::string comparison_table(const Comparison& c) {
  static const char* const kCols[] = {"bleu1",       "bleu2",        "bleu3",           "bleu4",
                                      "avg_bleu",    "rougeL",       "meteor_lite",     "clinical_precision",
                                      "clinical_recall", "clinical_f1", "triple_f1", "visual_similarity",
                                      "format_rate"};
  std::size_t width = 16;  // fits "0.1234 (+0.1234)"
  for (const auto& r : c.reports) width = std::max(width, r.checkpoint.size());
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-20s", "metric");
  out << buf;
  for (const auto& r : c.reports) {
    std::string name = r.checkpoint;
    name.resize(width, ' ');
    out << "  " << name;
  }
  out << '\n';
  for (const char* col : kCols) {
    std::snprintf(buf, sizeof buf, "%-20s", col);
    out << buf;
    for (std::size_t i = 0; i < c.reports.size(); ++i) {
      const double v = metric_values(c.reports[i]).at(col);
      if (i == 0)
        std::snprintf(buf, sizeof buf, "%.4f", v);
      else
        std::snprintf(buf, sizeof buf, "%.4f (%+.4f)", v, c.deltas[i].at(col));
      std::string cell = buf;
      cell.resize(width, ' ');
      out << "  " << cell;
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- sweeps

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace {

template <typename T>
std::vector<double> sorted_unique_grid(std::vector<T> grid, const char* name) {
  if (grid.empty()) throw ConfigError(name, "grid is empty");
  std::sort(grid.begin(), grid.end());
  if (std::adjacent_find(grid.begin(), grid.end()) != grid.end()) throw ConfigError(name, "grid values must be distinct");
  return {grid.begin(), grid.end()};
}

void summarize(SweepResult& s) {
  for (double v : s.grid) {
    std::vector<double> comp, f1, b4, vis, var;
    for (const auto& r : s.runs) {
      if (r.value != v) continue;
      comp.push_back(r.report.composite());
      f1.push_back(r.report.clinical_f1);
      b4.push_back(r.report.bleu[3]);
      vis.push_back(r.report.visual_similarity);
      var.push_back(r.mean_step_reward_var);
    }
    s.summary.push_back(SweepSummary{v, median(comp), *std::min_element(comp.begin(), comp.end()),
                                     *std::max_element(comp.begin(), comp.end()), median(f1), median(b4), median(vis),
                                     median(var)});
  }
  for (const auto& r : s.runs) {
    auto it = s.argmax_by_seed.find(r.seed);
    if (it == s.argmax_by_seed.end()) {
      s.argmax_by_seed[r.seed] = r.value;
      continue;
    }
    const auto& best = *std::find_if(s.runs.begin(), s.runs.end(),
                                     [&](const SweepRun& o) { return o.seed == r.seed && o.value == it->second; });
    if (r.report.composite() > best.report.composite()) it->second = r.value;
  }
}

double mean_reward_var(const std::vector<StepLog>& log, std::size_t from) {
  double s = 0.0;
  for (std::size_t i = from; i < log.size(); ++i) s += log[i].reward_var;
  return log.size() > from ? s / static_cast<double>(log.size() - from) : 0.0;
}

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig c = base;
  c.seed = seed;
  return c;
}

}  // namespace

SweepResult sweep_lambda_vis(const Environment& env, std::vector<double> grid_in) {
  SweepResult s;
  s.param = "lambda_vis";
  s.grid = sorted_unique_grid(std::move(grid_in), "lambda_vis_grid");
  for (double v : s.grid)
    if (v < 0.0 || v > 1.0) throw ConfigError("lambda_vis_grid", "values must lie in [0, 1]");
  const auto& cfg = env.config;
  const auto& seeds = cfg.harness.seeds;

  // stage-0 parameters per seed, shared read-only by that seed's grid points
  std::vector<TrainState> base(seeds.size());
  parallel_for(seeds.size(), cfg.harness.workers, [&](std::size_t i) {
    const TrainConfig tc = seeded(cfg.trainer, seeds[i]);
    TrainState st = TrainState::from_params(initial_params(env, seeds[i]), seeds[i]);
    run_sft(st, env.split.train, env.split.val, tc);
    run_stage(st, 0, tc.stages[0].rl_steps, env.split.train, *env.rewards, tc);
    base[i] = std::move(st);
  });

  const std::size_t jobs = s.grid.size() * seeds.size();
  s.runs.resize(jobs);
  parallel_for(jobs, cfg.harness.workers, [&](std::size_t j) {
    const std::size_t gi = j / seeds.size(), si = j % seeds.size();
    const TrainConfig tc = seeded(cfg.trainer, seeds[si]);
    RewardWeights w = cfg.rewards.weights;
    w.lambda_vis = s.grid[gi];
    const RewardModel rm = env.reweighted(w);
    TrainState st = base[si];
    const std::size_t from = st.log.size();
    run_stage(st, 1, tc.stages[1].rl_steps, env.split.train, rm, tc);
    SweepRun& run = s.runs[j];
    run.value = s.grid[gi];
    run.seed = seeds[si];
    run.report = evaluate(st.theta, env.eval_cases(), *env.rewards, tc.max_tokens);
    run.report.checkpoint = "stage1[lambda_vis=" + std::to_string(s.grid[gi]) + "]";
    run.report.split = cfg.harness.eval_split;
    run.report.seed = seeds[si];
    run.report.config_hash = cfg.config_hash;
    run.mean_step_reward_var = mean_reward_var(st.log, from);
    run.final_mean_reward = st.log.empty() ? 0.0 : st.log.back().mean_reward;
  });
  summarize(s);
  return s;
}

SweepResult sweep_k_clin(const Environment& env, std::vector<int> grid_in) {
  SweepResult s;
  s.param = "k_clin";
  for (int v : grid_in)
    if (v < 1) throw ConfigError("k_clin_grid", "values must be positive integers");
  s.grid = sorted_unique_grid(std::move(grid_in), "k_clin_grid");
  const auto& cfg = env.config;
  const auto& seeds = cfg.harness.seeds;

  std::vector<TrainState> base(seeds.size());
  parallel_for(seeds.size(), cfg.harness.workers, [&](std::size_t i) {
    const TrainConfig tc = seeded(cfg.trainer, seeds[i]);
    TrainState st = TrainState::from_params(initial_params(env, seeds[i]), seeds[i]);
    run_sft(st, env.split.train, env.split.val, tc);
    base[i] = std::move(st);
  });

  const std::size_t jobs = s.grid.size() * seeds.size();
  s.runs.resize(jobs);
  parallel_for(jobs, cfg.harness.workers, [&](std::size_t j) {
    const std::size_t gi = j / seeds.size(), si = j % seeds.size();
    const TrainConfig tc = seeded(cfg.trainer, seeds[si]);
    RewardWeights w = cfg.rewards.weights;
    w.k_clin = static_cast<int>(s.grid[gi]);
    const RewardModel rm = env.reweighted(w);
    TrainState st = base[si];
    run_stage(st, 0, tc.stages[0].rl_steps, env.split.train, rm, tc);
    SweepRun& run = s.runs[j];
    run.value = s.grid[gi];
    run.seed = seeds[si];
    run.report = evaluate(st.theta, env.eval_cases(), *env.rewards, tc.max_tokens);
    run.report.checkpoint = "stage0[k_clin=" + std::to_string(w.k_clin) + "]";
    run.report.split = cfg.harness.eval_split;
    run.report.seed = seeds[si];
    run.report.config_hash = cfg.config_hash;
    run.mean_step_reward_var = mean_reward_var(st.log, 0);
    run.final_mean_reward = st.log.empty() ? 0.0 : st.log.back().mean_reward;
  });
  summarize(s);
  return s;
}

json to_json(const SweepResult& s) {
  json runs = json::array();
  for (const auto& r : s.runs)
    runs.push_back(json{{"value", r.value},
                        {"seed", r.seed},
                        {"composite", r.report.composite()},
                        {"mean_step_reward_var", r.mean_step_reward_var},
                        {"final_mean_reward", r.final_mean_reward},
                        {"report", to_json(r.report)}});
  json summary = json::array();
  for (const auto& m : s.summary)
    summary.push_back(json{{"value", m.value},
                           {"median_composite", m.median_composite},
                           {"min_composite", m.min_composite},
                           {"max_composite", m.max_composite},
                           {"median_clinical_f1", m.median_clinical_f1},
                           {"median_bleu4", m.median_bleu4},
                           {"median_visual_similarity", m.median_visual_similarity},
                           {"median_reward_var", m.median_reward_var}});
  json argmax = json::object();
  for (const auto& [seed, v] : s.argmax_by_seed) argmax[std::to_string(seed)] = v;
  return json{{"schema_version", kMetricsSchemaVersion},
              {"param", s.param},
              {"grid", s.grid},
              {"runs", runs},
              {"summary", summary},
              {"argmax_by_seed", argmax}};
}

std::string sweep_csv(const SweepResult& s) {
  std::ostringstream out;
  out << s.param << ",seed,composite,clinical_f1,bleu4,rougeL,visual_similarity,format_rate,mean_step_reward_var\n";
  char buf[256];
  for (const auto& r : s.runs) {
    std::snprintf(buf, sizeof buf, "%.17g,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.value,
                  static_cast<unsigned long long>(r.seed), r.report.composite(), r.report.clinical_f1,
                  r.report.bleu[3], r.report.rougeL, r.report.visual_similarity, r.report.format_rate,
                  r.mean_step_reward_var);
    out << buf;
  }
  return out.str();
}

}  // namespace rrg
