#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrg/corpus.hpp"
#include "rrg/policy.hpp"
#include "rrg/rewards.hpp"
#include "rrg/trainer.hpp"

namespace rrg {

struct PolicyConfig {
  int embed_dim = 16;
  int context = 3;
};

struct RewardConfig {
  RewardWeights weights;
  int semantic_dim = 32;
  std::uint64_t embedding_seed = 5;
  double expert_ridge = 1e-3;
};

struct HarnessConfig {
  std::string eval_split = "val";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<double> lambda_vis_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<int> k_clin_grid = {1, 5, 10, 25, 100};
  int workers = 1;  // parallel sweep jobs
};

/// Whole-experiment configuration; JSON sections corpus / policy / rewards /
/// trainer / harness.
struct ExperimentConfig {
  CorpusConfig corpus;
  SplitRatios split;
  PolicyConfig policy;
  RewardConfig rewards;
  TrainConfig trainer;
  HarnessConfig harness;
  std::string config_hash;  // FNV-1a of the loaded bytes (or of the default dump)

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Parses the file and records the hash of its exact bytes.
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig defaults();
};

std::string fnv1a_hex(std::string_view bytes);

/// Corpus, split, frozen expert, and reward model built from a config.
struct Environment {
  ExperimentConfig config;
  std::vector<CaseRecord> cases;
  CorpusSplit split;
  PolicyDims dims;
  std::unique_ptr<RewardModel> rewards;

  const std::vector<CaseRecord>& eval_cases() const;
  /// Same frozen pieces with different weights.
  RewardModel reweighted(const RewardWeights& w) const;
};

/// Generates the corpus (or uses `cases` when given), splits it, fits the expert.
Environment make_environment(const ExperimentConfig& cfg, std::optional<std::vector<CaseRecord>> cases = std::nullopt);

PolicyParams initial_params(const Environment& env, std::uint64_t seed);

struct MetricsReport {
  double bleu[4] = {0, 0, 0, 0};
  double avg_bleu = 0.0;
  double rougeL = 0.0;
  double meteor = 0.0;
  double clinical_precision = 0.0;
  double clinical_recall = 0.0;
  double clinical_f1 = 0.0;
  double triple_f1 = 0.0;
  double visual_similarity = 0.0;
  double format_rate = 0.0;
  std::string checkpoint;
  std::string split;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t n_cases = 0;

  /// Mean of clinical F1 and BLEU-4; the sweep objective.
  double composite() const { return 0.5 * (clinical_f1 + bleu[3]); }
};

inline constexpr int kMetricsSchemaVersion = 1;
nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

/// Scores already-decoded reports against the cases' ground truth.
MetricsReport evaluate_reports(const std::vector<TokenSeq>& decoded, const std::vector<CaseRecord>& cases,
                               const RewardModel& rewards);

/// Greedy-decodes every case with `params`, then scores.
MetricsReport evaluate(const PolicyParams& params, const std::vector<CaseRecord>& cases, const RewardModel& rewards,
                       int max_tokens);

struct Comparison {
  std::vector<MetricsReport> reports;
  std::vector<std::map<std::string, double>> deltas;  // vs reports[0]
};

Comparison compare(const std::vector<MetricsReport>& reports);
nlohmann::json to_json(const Comparison& c);
std::string comparison_table(const Comparison& c);

/// Flat metric name -> value view used by compare and the CSV writer.
std::map<std::string, double> metric_values(const MetricsReport& r);

struct SweepRun {
  double value = 0.0;
  std::uint64_t seed = 0;
  MetricsReport report;
  double mean_step_reward_var = 0.0;  // mean over policy steps of within-group reward variance
  double final_mean_reward = 0.0;
};

struct SweepSummary {
  double value = 0.0;
  double median_composite = 0.0;
  double min_composite = 0.0;
  double max_composite = 0.0;
  double median_clinical_f1 = 0.0;
  double median_bleu4 = 0.0;
  double median_visual_similarity = 0.0;
  double median_reward_var = 0.0;
};

struct SweepResult {
  std::string param;
  std::vector<double> grid;
  std::vector<SweepRun> runs;  // ordered by (grid value, seed)
  std::vector<SweepSummary> summary;
  /// Per seed, the grid value with the best composite score.
  std::map<std::uint64_t, double> argmax_by_seed;
};

nlohmann::json to_json(const SweepResult& s);
std::string sweep_csv(const SweepResult& s);

/// Stage 1 training per grid value and seed, each from that seed's stage-0 parameters.
SweepResult sweep_lambda_vis(const Environment& env, std::vector<double> grid);
/// Stage-0 training per grid value and seed, each from that seed's SFT parameters.
SweepResult sweep_k_clin(const Environment& env, std::vector<int> grid);

double median(std::vector<double> v);

}  // namespace rrg
