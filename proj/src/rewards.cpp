#include "rrg/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrg/errors.hpp"

namespace rrg {

using nlohmann::json;

DomainExpert::DomainExpert(Eigen::MatrixXd decoder, const Lexicon& lex)
    : decoder_(std::move(decoder)), lex_(&lex) {
  if (decoder_.rows() != kNumLabels) throw ConfigError("expert", "decoder must have K rows");
  if (!decoder_.allFinite()) throw NumericalError("expert", "decoder has non-finite entries");
}

DomainExpert DomainExpert::fit(std::span<const CaseRecord> cases, double ridge, const Lexicon& lex) {
  if (cases.empty()) throw ConfigError("expert", "cannot fit on an empty split");
  if (!(ridge > 0.0)) throw ConfigError("expert_ridge", "must be positive");
  const auto d_x = cases.front().image_features.size();
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d_x, d_x);
  Eigen::MatrixXd ytx = Eigen::MatrixXd::Zero(kNumLabels, d_x);
  for (const auto& c : cases) {
    if (c.image_features.size() != d_x) throw ConfigError("expert", "inconsistent feature dimension");
    xtx.noalias() += c.image_features * c.image_features.transpose();
    ytx.noalias() += c.labels.multihot() * c.image_features.transpose();
  }
  xtx.diagonal().array() += ridge;
  // D = Y^T X (X^T X + ridge I)^{-1}; solve the symmetric system on the right
  Eigen::MatrixXd decoder = xtx.ldlt().solve(ytx.transpose()).transpose();
  return DomainExpert(std::move(decoder), lex);
}

Eigen::VectorXd DomainExpert::image_head(const Eigen::VectorXd& x) const {
  if (x.size() != decoder_.cols()) throw ConfigError("image_features", "dimension mismatch with expert");
  return (decoder_ * x).cwiseMax(0.0).cwiseMin(1.0);
}

Eigen::VectorXd DomainExpert::text_head(const TokenSeq& report) const {
  return extract_labels(report, *lex_).multihot();
}

void RewardWeights::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(name, "must be a finite nonnegative real");
  };
  nonneg(lambda_lex, "lambda_lex");
  nonneg(lambda_sem, "lambda_sem");
  nonneg(lambda_cx, "lambda_cx");
  nonneg(lambda_rg, "lambda_rg");
  nonneg(lambda_clin, "lambda_clin");
  nonneg(lambda_vis, "lambda_vis");
  nonneg(lambda_fmt, "lambda_fmt");
  if (std::abs(lambda_lex + lambda_sem - 1.0) > 1e-9)
    throw ConfigError("lambda_lex", "lambda_lex + lambda_sem must equal 1");
  if (lambda_vis > 1.0) throw ConfigError("lambda_vis", "must lie in [0, 1]");
  if (k_clin < 1) throw ConfigError("k_clin", "must be a positive integer");
}

bool RewardWeights::clinical_fires(long k) const {
  return schedule_mode == ScheduleMode::Periodic ? k % k_clin == 0 : k == k_clin;
}

double RewardWeights::upper_bound(int stage) const {
  const double text = 2.0 * lambda_lex + lambda_sem + lambda_clin * (lambda_cx + lambda_rg);
  const double staged = stage == 0 ? text : (1.0 - lambda_vis) * text + lambda_vis;
  return staged + lambda_fmt;
}

void to_json(json& j, const RewardWeights& w) {
  j = json{{"lambda_lex", w.lambda_lex},   {"lambda_sem", w.lambda_sem},
           {"lambda_cx", w.lambda_cx},     {"lambda_rg", w.lambda_rg},
           {"lambda_clin", w.lambda_clin}, {"lambda_vis", w.lambda_vis},
           {"lambda_fmt", w.lambda_fmt},   {"k_clin", w.k_clin},
           {"schedule_mode", w.schedule_mode == ScheduleMode::Periodic ? "periodic" : "literal"}};
}

void from_json(const json& j, RewardWeights& w) {
  w.lambda_lex = j.value("lambda_lex", w.lambda_lex);
  w.lambda_sem = j.value("lambda_sem", w.lambda_sem);
  w.lambda_cx = j.value("lambda_cx", w.lambda_cx);
  w.lambda_rg = j.value("lambda_rg", w.lambda_rg);
  w.lambda_clin = j.value("lambda_clin", w.lambda_clin);
  w.lambda_vis = j.value("lambda_vis", w.lambda_vis);
  w.lambda_fmt = j.value("lambda_fmt", w.lambda_fmt);
  w.k_clin = j.value("k_clin", w.k_clin);
  if (j.contains("schedule_mode")) {
    const auto m = j.at("schedule_mode").get<std::string>();
    if (m == "periodic")
      w.schedule_mode = ScheduleMode::Periodic;
    else if (m == "literal")
      w.schedule_mode = ScheduleMode::Literal;
    else
      throw ConfigError("schedule_mode", "expected 'periodic' or 'literal', got '" + m + "'");
  }
}

void to_json(json& j, const RewardBreakdown& b) {
  j = json{{"bleu4", b.bleu4},     {"rougeL", b.rougeL}, {"semantic", b.semantic},
           {"s_cx", b.s_cx},       {"s_rg", b.s_rg},     {"format", b.format},
           {"vis_sim", b.vis_sim}, {"r_ver", b.r_ver},   {"r_clin", b.r_clin},
           {"clin_applied", b.clin_applied},             {"r_text", b.r_text},
           {"r_vis", b.r_vis},     {"r_total", b.r_total}};
  j["vis_rank"] = b.vis_rank ? json(*b.vis_rank) : json(nullptr);
}

double verifiable_reward(const TokenSeq& cand, const TokenSeq& gt, const RewardWeights& w,
                         const EmbeddingTable& emb) {
  return w.lambda_lex * (bleu_n(cand, gt, 4) + rouge_l(cand, gt)) + w.lambda_sem * semantic_f1(cand, gt, emb);
}

double clinical_reward(const TokenSeq& cand, const TokenSeq& gt, const RewardWeights& w,
                       const Lexicon& lex) {
  const double s_cx = micro_f1(extract_labels(cand, lex), extract_labels(gt, lex));
  const double s_rg = micro_f1(extract_triples(cand, lex), extract_triples(gt, lex));
  return w.lambda_cx * s_cx + w.lambda_rg * s_rg;
}

double stage1_reward(const TokenSeq& cand, const TokenSeq& gt, long step, const RewardWeights& w,
                     const EmbeddingTable& emb, const Lexicon& lex) {
  const double r_ver = verifiable_reward(cand, gt, w, emb);
  if (!w.clinical_fires(step)) return r_ver;
  return r_ver + w.lambda_clin * clinical_reward(cand, gt, w, lex);
}

double format_reward(const TokenSeq& cand) {
  std::ptrdiff_t open = -1, close = -1;
  int n_open = 0, n_close = 0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (cand[i] == Vocab::kReportOpen) {
      ++n_open;
      open = static_cast<std::ptrdiff_t>(i);
    } else if (cand[i] == Vocab::kReportClose) {
      ++n_close;
      close = static_cast<std::ptrdiff_t>(i);
    }
  }
  if (n_open != 1 || n_close != 1 || open > close) return 0.0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const auto pos = static_cast<std::ptrdiff_t>(i);
    const bool word = !Vocab::is_special(cand[i]) || cand[i] == Vocab::kUnk;
    if (word && (pos < open || pos > close)) return 0.0;
  }
  return 1.0;
}

double cosine_or_zero(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

double visual_similarity(const TokenSeq& cand, const Eigen::VectorXd& x, const DomainExpert& expert) {
  return cosine_or_zero(expert.text_head(cand), expert.image_head(x));
}

std::vector<double> rank_normalize(std::span<const double> scores) {
  const std::size_t g = scores.size();
  if (g < 2) throw GroupSizeError("rank_normalize needs at least 2 scores, got " + std::to_string(g));
  std::vector<std::size_t> order(g);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> out(g);
  const double denom = static_cast<double>(g - 1);
  for (std::size_t lo = 0; lo < g;) {
    std::size_t hi = lo;
    while (hi + 1 < g && scores[order[hi + 1]] == scores[order[lo]]) ++hi;
    // positions lo..hi hold ranks lo+1..hi+1; the mean of 1 - r/denom over
    // consecutive r is its value at the midpoint
    const double value = 1.0 - (static_cast<double>(lo + hi) / 2.0) / denom;
    for (std::size_t k = lo; k <= hi; ++k) out[order[k]] = value;
    lo = hi + 1;
  }
  return out;
}

double composite_visual_reward(const RewardBreakdown& b, const RewardWeights& w) {
  if (!b.vis_rank) throw SequencingError("composite visual reward requested before group ranking");
  return (1.0 - w.lambda_vis) * b.r_text + w.lambda_vis * *b.vis_rank;
}

double total_reward(const RewardBreakdown& b, int stage, const RewardWeights& w) {
  if (stage != 0 && stage != 1) throw ConfigError("stage", "must be 0 or 1");
  const double staged = stage == 0 ? b.r_text : composite_visual_reward(b, w);
  return staged + w.lambda_fmt * b.format;
}

RewardModel::RewardModel(RewardWeights weights, EmbeddingTable emb, DomainExpert expert, const Lexicon& lex)
    : weights_(weights), emb_(std::move(emb)), expert_(std::move(expert)), lex_(&lex) {
  weights_.validate();
}

RewardBreakdown RewardModel::score(const TokenSeq& cand, const CaseRecord& c, long step) const {
  const auto& w = weights_;
  RewardBreakdown b;
  b.bleu4 = bleu_n(cand, c.gt_report, 4);
  b.rougeL = rouge_l(cand, c.gt_report);
  b.semantic = semantic_f1(cand, c.gt_report, emb_);
  b.r_ver = w.lambda_lex * (b.bleu4 + b.rougeL) + w.lambda_sem * b.semantic;

  const LabelSet cand_labels = extract_labels(cand, *lex_);
  b.s_cx = micro_f1(cand_labels, extract_labels(c.gt_report, *lex_));
  b.s_rg = micro_f1(extract_triples(cand, *lex_), extract_triples(c.gt_report, *lex_));
  b.r_clin = w.lambda_cx * b.s_cx + w.lambda_rg * b.s_rg;
  b.clin_applied = w.clinical_fires(step);
  b.r_text = b.clin_applied ? b.r_ver + w.lambda_clin * b.r_clin : b.r_ver;

  b.format = format_reward(cand);
  b.vis_sim = cosine_or_zero(cand_labels.multihot(), expert_.image_head(c.image_features));
  return b;
}

std::vector<RewardBreakdown> RewardModel::score_group(std::span<const TokenSeq> candidates,
                                                      const CaseRecord& c, long step, int stage) const {
  std::vector<RewardBreakdown> out;
  out.reserve(candidates.size());
  for (const auto& cand : candidates) out.push_back(score(cand, c, step));
  if (stage == 1) {
    std::vector<double> sims;
    for (const auto& b : out) sims.push_back(b.vis_sim);
    const auto ranks = rank_normalize(sims);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].vis_rank = ranks[i];
      out[i].r_vis = composite_visual_reward(out[i], weights_);
    }
  }
  for (auto& b : out) b.r_total = total_reward(b, stage, weights_);
  return out;
}

}  // namespace rrg
