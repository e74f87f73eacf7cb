#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrg/corpus.hpp"
#include "rrg/policy.hpp"
#include "rrg/rewards.hpp"

namespace rrg {

enum class AdvantageMode { ZScore, RankNorm };

const char* to_string(AdvantageMode m);
AdvantageMode advantage_mode_from_string(const std::string& s);

/// Per-stage settings. reward_stage selects the reward pipeline (0: textual,
/// 1: textual + visual); it and the mask default to the stage index.
struct StageConfig {
  int rl_steps = 300;
  AdvantageMode advantage_mode = AdvantageMode::ZScore;
  std::optional<int> reward_stage;
  std::optional<ParamMask> mask;
  std::optional<double> learning_rate;
};

struct TrainConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  double learning_rate = 0.05;
  int inner_epochs = 1;
  int batch_size = 8;
  int sft_epochs = 15;
  double sft_learning_rate = 0.1;
  int sft_batch_size = 16;
  double temperature = 1.0;
  int max_tokens = 64;
  int workers = 1;
  std::uint64_t seed = 1;
  std::array<StageConfig, 2> stages{StageConfig{300, AdvantageMode::ZScore, {}, {}, {}},
                                    StageConfig{300, AdvantageMode::RankNorm, {}, {}, {}}};

  void validate() const;
  int reward_stage(int stage) const;
  ParamMask mask(int stage) const;
  double stage_learning_rate(int stage) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepLog {
  long step = 0;
  int stage = 0;
  double mean_reward = 0.0;
  double mean_r_ver = 0.0;
  std::optional<double> mean_r_clin;  // only on steps where the clinical term fired
  double mean_S = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  int degenerate_groups = 0;
  double reward_var = 0.0;  // mean within-group population variance of r_total
  double mean_length = 0.0;
  double format_rate = 0.0;
};

nlohmann::json to_json(const StepLog& s);

struct TrainState {
  PolicyParams theta;
  PolicyParams theta_old;  // snapshot the current groups were sampled from
  PolicyParams theta_ref;  // frozen reference for the KL term
  long step = 0;           // global policy step k
  int stage = 0;
  std::uint64_t seed = 0;
  std::vector<StepLog> log;
  std::vector<double> sft_val_nll;  // one entry per SFT epoch

  static TrainState from_params(PolicyParams init, std::uint64_t seed);
};

// ---------------------------------------------------------------- SFT

/// Mean over sequences of -sum_t log pi(r_t | r_<t, x).
double sft_loss(const PolicyParams& params, std::span<const CaseRecord> batch);

/// Loss and gradient of sft_loss under `mask`.
ObjectiveResult sft_gradient(const PolicyParams& params, const ParamMask& mask, std::span<const CaseRecord> batch);

/// Minibatch gradient descent on sft_loss, then theta_ref <- theta.
/// Throws NumericalError when the epoch loss exceeds 10x the initial loss.
void run_sft(TrainState& state, std::span<const CaseRecord> train, std::span<const CaseRecord> val,
             const TrainConfig& cfg);

// ---------------------------------------------------------------- advantages

/// (r - mean) / population std; all zero when std < 1e-8.
std::vector<double> advantages_zscore(std::span<const double> rewards);

/// rank_normalize(r) minus its mean (0.5), values in [-0.5, 0.5].
std::vector<double> advantages_ranknorm(std::span<const double> rewards);

std::vector<double> advantages(AdvantageMode mode, std::span<const double> rewards);

/// True when the group carries no ranking signal (every advantage is zero).
bool degenerate_group(AdvantageMode mode, std::span<const double> rewards);

// ---------------------------------------------------------------- GRPO

struct GrpoInputs {
  const CandidateGroup* group;
  const Eigen::VectorXd* features;
  std::span<const double> advantages;
  std::span<const std::vector<double>> ref_logprobs;  // under theta_ref, per candidate
};

struct GrpoResult {
  double loss = 0.0;
  PolicyParams grad;
  double kl = 0.0;             // KL term before the beta factor, aggregated like the surrogate
  double clip_fraction = 0.0;  // share of tokens whose ratio gradient is cut by clipping
};

/// -(1/G) sum_i (1/|o_i|) sum_t min(rho A_i, clip(rho) A_i) + beta KL with
/// per-token KL estimate exp(d) - d - 1, d = log pi_ref - log pi_theta.
GrpoResult grpo_loss(const PolicyParams& theta, const ParamMask& mask, const GrpoInputs& in, double clip_eps,
                     double kl_beta);

/// One policy step: sample per case under theta_old, score, compute
/// advantages, accumulate masked GRPO gradients, apply inner_epochs updates.
/// Increments state.step once and appends a StepLog.
const StepLog& policy_step(TrainState& state, std::span<const CaseRecord> batch, const RewardModel& rewards,
                           const TrainConfig& cfg, int stage);

/// Case indices for policy step k (1-based): consecutive windows over a
/// seeded permutation of the split, reshuffled every pass.
std::vector<std::size_t> batch_indices(std::size_t n_cases, int batch_size, long step, std::uint64_t seed);

struct TrainOutcome {
  PolicyParams sft;
  PolicyParams stage0;
  PolicyParams stage1;
  TrainState state;
};

/// SFT, then stage 0 and stage 1 policy optimization.
TrainOutcome train(const TrainConfig& cfg, const PolicyParams& init, std::span<const CaseRecord> train_split,
                   std::span<const CaseRecord> val_split, const RewardModel& rewards);

/// Runs `steps` policy steps of one stage from the current state.
void run_stage(TrainState& state, int stage, int steps, std::span<const CaseRecord> train_split,
               const RewardModel& rewards, const TrainConfig& cfg);

}  // namespace rrg
