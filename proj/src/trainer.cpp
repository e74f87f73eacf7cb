#include "rrg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrg/errors.hpp"
#include "rrg/parallel.hpp"
#include "rrg/rng.hpp"

namespace rrg {

using nlohmann::json;

const char* to_string(AdvantageMode m) { return m == AdvantageMode::ZScore ? "zscore" : "ranknorm"; }

AdvantageMode advantage_mode_from_string(const std::string& s) {
  if (s == "zscore") return AdvantageMode::ZScore;
  if (s == "ranknorm") return AdvantageMode::RankNorm;
  throw ConfigError("advantage_mode", "expected 'zscore' or 'ranknorm', got '" + s + "'");
}

void TrainConfig::validate() const {
  if (group_size < 2) throw ConfigError("group_size", "must be at least 2");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("clip_eps", "must lie in (0, 1)");
  if (!(kl_beta >= 0.0)) throw ConfigError("kl_beta", "must be nonnegative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (inner_epochs < 1) throw ConfigError("inner_epochs", "must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be positive");
  if (sft_epochs < 0) throw ConfigError("sft_epochs", "must be nonnegative");
  if (!(sft_learning_rate > 0.0)) throw ConfigError("sft_learning_rate", "must be positive");
  if (sft_batch_size < 1) throw ConfigError("sft_batch_size", "must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "training rollouts need temperature > 0");
  if (max_tokens < 1) throw ConfigError("max_tokens", "must be positive");
  if (workers < 1) throw ConfigError("workers", "must be positive");
  for (int s = 0; s < 2; ++s) {
    const auto& st = stages[static_cast<std::size_t>(s)];
    const std::string pre = "stages[" + std::to_string(s) + "].";
    if (st.rl_steps < 0) throw ConfigError(pre + "rl_steps", "must be nonnegative");
    if (st.reward_stage && *st.reward_stage != 0 && *st.reward_stage != 1)
      throw ConfigError(pre + "reward_stage", "must be 0 or 1");
    if (st.mask && !st.mask->any()) throw ConfigError(pre + "mask", "at least one block must be trainable");
    if (st.learning_rate && !(*st.learning_rate > 0.0)) throw ConfigError(pre + "learning_rate", "must be positive");
  }
}

int TrainConfig::reward_stage(int stage) const {
  return stages.at(static_cast<std::size_t>(stage)).reward_stage.value_or(stage);
}

ParamMask TrainConfig::mask(int stage) const {
  return stages.at(static_cast<std::size_t>(stage)).mask.value_or(stage_mask(stage));
}

double TrainConfig::stage_learning_rate(int stage) const {
  return stages.at(static_cast<std::size_t>(stage)).learning_rate.value_or(learning_rate);
}

namespace {

json mask_json(const ParamMask& m) {
  return json{{"E", m.embeddings}, {"P", m.vision}, {"W", m.output}, {"b", m.bias}};
}

ParamMask mask_from(const json& j) {
  return {j.value("E", true), j.value("P", true), j.value("W", true), j.value("b", true)};
}

}  // namespace

void to_json(json& j, const TrainConfig& c) {
  j = json{{"group_size", c.group_size},
           {"clip_eps", c.clip_eps},
           {"kl_beta", c.kl_beta},
           {"learning_rate", c.learning_rate},
           {"inner_epochs", c.inner_epochs},
           {"batch_size", c.batch_size},
           {"sft_epochs", c.sft_epochs},
           {"sft_learning_rate", c.sft_learning_rate},
           {"sft_batch_size", c.sft_batch_size},
           {"temperature", c.temperature},
           {"max_tokens", c.max_tokens},
           {"workers", c.workers},
           {"seed", c.seed}};
  json stages = json::array();
  for (int s = 0; s < 2; ++s) {
    const auto& st = c.stages[static_cast<std::size_t>(s)];
    json js{{"rl_steps", st.rl_steps}, {"advantage_mode", to_string(st.advantage_mode)}};
    if (st.reward_stage) js["reward_stage"] = *st.reward_stage;
    if (st.mask) js["mask"] = mask_json(*st.mask);
    if (st.learning_rate) js["learning_rate"] = *st.learning_rate;
    stages.push_back(js);
  }
  j["stages"] = stages;
}

void from_json(const json& j, TrainConfig& c) {
  c.group_size = j.value("group_size", c.group_size);
  c.clip_eps = j.value("clip_eps", c.clip_eps);
  c.kl_beta = j.value("kl_beta", c.kl_beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.inner_epochs = j.value("inner_epochs", c.inner_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.sft_epochs = j.value("sft_epochs", c.sft_epochs);
  c.sft_learning_rate = j.value("sft_learning_rate", c.sft_learning_rate);
  c.sft_batch_size = j.value("sft_batch_size", c.sft_batch_size);
  c.temperature = j.value("temperature", c.temperature);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.workers = j.value("workers", c.workers);
  c.seed = j.value("seed", c.seed);
  if (j.contains("stages")) {
    const auto& st = j.at("stages");
    if (!st.is_array() || st.size() != 2) throw ConfigError("trainer.stages", "expected an array of 2 stage objects");
    for (std::size_t s = 0; s < 2; ++s) {
      auto& out = c.stages[s];
      const auto& js = st[s];
      out.rl_steps = js.value("rl_steps", out.rl_steps);
      if (js.contains("advantage_mode"))
        out.advantage_mode = advantage_mode_from_string(js.at("advantage_mode").get<std::string>());
      if (js.contains("reward_stage")) out.reward_stage = js.at("reward_stage").get<int>();
      if (js.contains("mask")) out.mask = mask_from(js.at("mask"));
      if (js.contains("learning_rate")) out.learning_rate = js.at("learning_rate").get<double>();
    }
  }
}

json to_json(const StepLog& s) {
  json j{{"step", s.step},
         {"stage", s.stage},
         {"mean_reward", s.mean_reward},
         {"mean_r_ver", s.mean_r_ver},
         {"mean_S", s.mean_S},
         {"kl", s.kl},
         {"clip_fraction", s.clip_fraction},
         {"degenerate_groups", s.degenerate_groups},
         {"reward_var", s.reward_var},
         {"mean_length", s.mean_length},
         {"format_rate", s.format_rate}};
  if (s.mean_r_clin) j["mean_r_clin"] = *s.mean_r_clin;
  return j;
}

TrainState TrainState::from_params(PolicyParams init, std::uint64_t seed) {
  TrainState s;
  s.theta = init;
  s.theta_old = init;
  s.theta_ref = std::move(init);
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------- SFT

namespace {

std::vector<SequenceInput> gt_inputs(std::span<const CaseRecord> batch) {
  std::vector<SequenceInput> in;
  in.reserve(batch.size());
  for (const auto& c : batch) in.push_back({&c.gt_report, &c.image_features});
  return in;
}

void apply_update(PolicyParams& theta, const PolicyParams& grad, const ParamMask& mask, double lr) {
  for (auto blk : kAllBlocks)
    if (mask.trainable(blk)) theta.flat(blk) -= lr * grad.flat(blk);
}

}  // namespace

double sft_loss(const PolicyParams& params, std::span<const CaseRecord> batch) {
  if (batch.empty()) throw ConfigError("batch", "sft_loss needs a nonempty batch");
  double total = 0.0;
  for (const auto& c : batch) {
    const auto lp = sequence_logprobs(params, c.gt_report, c.image_features);
    total -= std::accumulate(lp.begin(), lp.end(), 0.0);
  }
  const double loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericalError("sft_loss", "loss is not finite");
  return loss;
}

ObjectiveResult sft_gradient(const PolicyParams& params, const ParamMask& mask, std::span<const CaseRecord> batch) {
  if (batch.empty()) throw ConfigError("batch", "sft_loss needs a nonempty batch");
  const auto inputs = gt_inputs(batch);
  const double scale = 1.0 / static_cast<double>(batch.size());
  return grad_objective(params, mask, inputs,
                        [scale](const std::vector<std::vector<double>>& lp, std::vector<std::vector<double>>& d) {
                          double loss = 0.0;
                          for (std::size_t s = 0; s < lp.size(); ++s)
                            for (std::size_t t = 0; t < lp[s].size(); ++t) {
                              loss -= scale * lp[s][t];
                              d[s][t] = -scale;
                            }
                          return loss;
                        });
}

void run_sft(TrainState& state, std::span<const CaseRecord> train, std::span<const CaseRecord> val,
             const TrainConfig& cfg) {
  const ParamMask all = stage_mask(0);
  if (cfg.sft_epochs > 0 && train.empty()) throw ConfigError("train_split", "SFT needs training cases");
  double initial = -1.0;
  for (int epoch = 0; epoch < cfg.sft_epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(state.seed, {51, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.sft_batch_size)) {
      std::vector<CaseRecord> batch;
      for (std::size_t k = lo; k < std::min(order.size(), lo + static_cast<std::size_t>(cfg.sft_batch_size)); ++k)
        batch.push_back(train[order[k]]);
      const auto r = sft_gradient(state.theta, all, batch);
      if (initial < 0.0) initial = r.loss;
      if (r.loss > 10.0 * initial)
        throw NumericalError("sft", "diverged at epoch " + std::to_string(epoch) + ": loss " + std::to_string(r.loss) +
                                        " > 10x initial " + std::to_string(initial));
      apply_update(state.theta, r.grad, all, cfg.sft_learning_rate);
      epoch_loss += r.loss;
      ++batches;
    }
    state.sft_val_nll.push_back(val.empty() ? epoch_loss / static_cast<double>(batches) : sft_loss(state.theta, val));
  }
  state.theta_old = state.theta;
  state.theta_ref = state.theta;
}

// ---------------------------------------------------------------- advantages

std::vector<double> advantages_zscore(std::span<const double> r) {
  if (r.size() < 2) throw GroupSizeError("advantages need a group of at least 2");
  const double n = static_cast<double>(r.size());
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / n;
  double var = 0.0;
  for (double x : r) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(r.size(), 0.0);
  if (sd < 1e-8) return out;
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = (r[i] - mean) / sd;
  return out;
}

std::vector<double> advantages_ranknorm(std::span<const double> r) {
  auto out = rank_normalize(r);
  // tie-averaged ranks always average to exactly 1/2
  for (double& x : out) x -= 0.5;
  return out;
}

std::vector<double> advantages(AdvantageMode mode, std::span<const double> r) {
  return mode == AdvantageMode::ZScore ? advantages_zscore(r) : advantages_ranknorm(r);
}

bool degenerate_group(AdvantageMode mode, std::span<const double> r) {
  const auto a = advantages(mode, r);
  return std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; });
}

// ---------------------------------------------------------------- GRPO

GrpoResult grpo_loss(const PolicyParams& theta, const ParamMask& mask, const GrpoInputs& in, double eps,
                     double beta) {
  const CandidateGroup& g = *in.group;
  const std::size_t G = g.candidates.size();
  if (G < 2) throw GroupSizeError("GRPO needs a group of at least 2");
  if (in.advantages.size() != G) throw std::invalid_argument("grpo_loss: one advantage per candidate required");
  if (in.ref_logprobs.size() != G || g.logprobs_old.size() != G)
    throw std::invalid_argument("grpo_loss: logprob rows must match the group");

  std::vector<SequenceInput> seqs;
  for (const auto& c : g.candidates) seqs.push_back({&c, in.features});

  double kl_total = 0.0;
  long clipped = 0, tokens = 0;
  auto objective = [&](const std::vector<std::vector<double>>& lp, std::vector<std::vector<double>>& d) {
    double loss = 0.0;
    for (std::size_t i = 0; i < G; ++i) {
      const auto T = lp[i].size();
      if (T == 0) continue;
      if (g.logprobs_old[i].size() != T || in.ref_logprobs[i].size() != T)
        throw std::invalid_argument("grpo_loss: logprob row length mismatch for candidate " + std::to_string(i));
      const double w = 1.0 / (static_cast<double>(G) * static_cast<double>(T));
      const double a = in.advantages[i];
      for (std::size_t t = 0; t < T; ++t) {
        const double rho = std::exp(lp[i][t] - g.logprobs_old[i][t]);
        if (!std::isfinite(rho))
          throw NumericalError("ratio", "non-finite probability ratio for candidate " + std::to_string(i));
        const double unclipped = rho * a;
        const double clipped_term = std::clamp(rho, 1.0 - eps, 1.0 + eps) * a;
        const bool flows = unclipped <= clipped_term;
        const double surrogate = flows ? unclipped : clipped_term;
        const double delta = in.ref_logprobs[i][t] - lp[i][t];
        const double ed = std::exp(delta);
        const double kl = ed - delta - 1.0;
        loss += w * (-surrogate + beta * kl);
        kl_total += w * kl;
        d[i][t] = w * ((flows ? -unclipped : 0.0) + beta * (1.0 - ed));
        clipped += flows ? 0 : 1;
        ++tokens;
      }
    }
    return loss;
  };
  auto r = grad_objective(theta, mask, seqs, objective);
  GrpoResult out;
  out.loss = r.loss;
  out.grad = std::move(r.grad);
  out.kl = kl_total;
  out.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
  return out;
}

std::vector<std::size_t> batch_indices(std::size_t n, int batch_size, long step, std::uint64_t seed) {
  if (n == 0) throw ConfigError("train_split", "no cases to batch");
  std::vector<std::size_t> out;
  const auto b = static_cast<std::size_t>(batch_size);
  const std::size_t start = static_cast<std::size_t>(step - 1) * b;
  std::size_t cached_pass = SIZE_MAX;
  std::vector<std::size_t> perm(n);
  for (std::size_t pos = start; pos < start + b; ++pos) {
    const std::size_t pass = pos / n;
    if (pass != cached_pass) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(seed, {31, pass}));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_pass = pass;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

namespace {

struct CaseRollout {
  CandidateGroup group;
  std::vector<std::vector<double>> ref_logprobs;
  std::vector<RewardBreakdown> rewards;
  std::vector<double> adv;
  bool degenerate = false;
};

}  // namespace

const StepLog& policy_step(TrainState& state, std::span<const CaseRecord> batch, const RewardModel& rewards,
                           const TrainConfig& cfg, int stage) {
  if (batch.empty()) throw ConfigError("batch", "policy step needs cases");
  const int reward_stage = cfg.reward_stage(stage);
  const ParamMask mask = cfg.mask(stage);
  const AdvantageMode mode = cfg.stages.at(static_cast<std::size_t>(stage)).advantage_mode;
  const double lr = cfg.stage_learning_rate(stage);
  const SampleOptions opts{cfg.group_size, cfg.max_tokens, cfg.temperature};

  state.theta_old = state.theta;
  state.stage = stage;
  const long k = ++state.step;

  std::vector<CaseRollout> roll(batch.size());
  parallel_for(batch.size(), cfg.workers, [&](std::size_t j) {
    auto& r = roll[j];
    const auto& c = batch[j];
    r.group = sample_group(state.theta_old, c, opts, derive_seed(state.seed, {41, static_cast<std::uint64_t>(k), j}));
    for (const auto& cand : r.group.candidates)
      r.ref_logprobs.push_back(sequence_logprobs(state.theta_ref, cand, c.image_features));
    r.rewards = rewards.score_group(r.group.candidates, c, k, reward_stage);
    std::vector<double> totals;
    for (const auto& b : r.rewards) totals.push_back(b.r_total);
    r.adv = advantages(mode, totals);
    r.degenerate = std::all_of(r.adv.begin(), r.adv.end(), [](double a) { return a == 0.0; });
  });

  StepLog log;
  log.step = k;
  log.stage = stage;
  double n_cand = 0.0, clin_sum = 0.0;
  bool fired = false;
  for (const auto& r : roll) {
    double mean = 0.0;
    for (const auto& b : r.rewards) mean += b.r_total;
    mean /= static_cast<double>(r.rewards.size());
    double var = 0.0;
    for (std::size_t i = 0; i < r.rewards.size(); ++i) {
      const auto& b = r.rewards[i];
      var += (b.r_total - mean) * (b.r_total - mean);
      log.mean_reward += b.r_total;
      log.mean_r_ver += b.r_ver;
      log.mean_S += b.vis_sim;
      log.format_rate += b.format;
      log.mean_length += static_cast<double>(r.group.candidates[i].size());
      if (b.clin_applied) {
        fired = true;
        clin_sum += b.r_clin;
      }
      n_cand += 1.0;
    }
    log.reward_var += var / static_cast<double>(r.rewards.size());
    log.degenerate_groups += r.degenerate ? 1 : 0;
  }
  log.mean_reward /= n_cand;
  log.mean_r_ver /= n_cand;
  log.mean_S /= n_cand;
  log.format_rate /= n_cand;
  log.mean_length /= n_cand;
  log.reward_var /= static_cast<double>(roll.size());
  if (fired) log.mean_r_clin = clin_sum / n_cand;

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    std::vector<std::optional<GrpoResult>> parts(batch.size());
    parallel_for(batch.size(), cfg.workers, [&](std::size_t j) {
      const auto& r = roll[j];
      if (r.degenerate) return;
      parts[j] = grpo_loss(state.theta, mask, {&r.group, &batch[j].image_features, r.adv, r.ref_logprobs},
                           cfg.clip_eps, cfg.kl_beta);
    });
    PolicyParams grad = PolicyParams::zeros(state.theta.dims);
    double kl = 0.0, clip = 0.0;
    int used = 0;
    for (const auto& p : parts) {
      if (!p) continue;
      for (auto blk : kAllBlocks)
        if (mask.trainable(blk)) grad.flat(blk) += p->grad.flat(blk);
      kl += p->kl;
      clip += p->clip_fraction;
      ++used;
    }
    if (epoch == 0 && used > 0) {
      log.kl = kl / used;
      log.clip_fraction = clip / used;
    }
    if (used > 0) apply_update(state.theta, grad, mask, lr * inv_batch);
  }
  if (!state.theta.all_finite()) throw NumericalError("theta", "parameters became non-finite after update");
  state.log.push_back(log);
  return state.log.back();
}

void run_stage(TrainState& state, int stage, int steps, std::span<const CaseRecord> train_split,
               const RewardModel& rewards, const TrainConfig& cfg) {
  std::vector<CaseRecord> batch;
  for (int s = 0; s < steps; ++s) {
    const long k = state.step + 1;
    try {
      batch.clear();
      for (auto i : batch_indices(train_split.size(), cfg.batch_size, k, state.seed)) batch.push_back(train_split[i]);
      policy_step(state, batch, rewards, cfg, stage);
    } catch (const TrainingError&) {
      throw;
    } catch (const std::exception& e) {
      throw TrainingError(stage, k, e.what());
    }
  }
}

TrainOutcome train(const TrainConfig& cfg, const PolicyParams& init, std::span<const CaseRecord> train_split,
                   std::span<const CaseRecord> val_split, const RewardModel& rewards) {
  cfg.validate();
  TrainOutcome out;
  out.state = TrainState::from_params(init, cfg.seed);
  try {
    run_sft(out.state, train_split, val_split, cfg);
  } catch (const std::exception& e) {
    throw TrainingError(-1, 0, std::string("SFT: ") + e.what());
  }
  out.sft = out.state.theta;
  for (int stage = 0; stage < 2; ++stage) {
    run_stage(out.state, stage, cfg.stages[static_cast<std::size_t>(stage)].rl_steps, train_split, rewards, cfg);
    (stage == 0 ? out.stage0 : out.stage1) = out.state.theta;
  }
  return out;
}

}  // namespace rrg
