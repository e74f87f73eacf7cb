#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rrg/corpus.hpp"
#include "rrg/lexicon.hpp"
#include "rrg/metrics.hpp"

namespace rrg {

/// Frozen image/text label model defining the shared similarity space.
/// image_head: clamp(D x, 0, 1) with D a ridge least-squares decoder;
/// text_head: multihot of rule-extracted labels.
class DomainExpert {
 public:
  DomainExpert(Eigen::MatrixXd decoder, const Lexicon& lex = Lexicon::standard());

  /// Solves min_D sum ||y - D x||^2 + ridge ||D||^2 over the given cases.
  static DomainExpert fit(std::span<const CaseRecord> cases, double ridge,
                          const Lexicon& lex = Lexicon::standard());

  Eigen::VectorXd image_head(const Eigen::VectorXd& image_features) const;
  Eigen::VectorXd text_head(const TokenSeq& report) const;
  const Eigen::MatrixXd& decoder() const { return decoder_; }

 private:
  Eigen::MatrixXd decoder_;  // K x d_x
  const Lexicon* lex_;
};

enum class ScheduleMode { Periodic, Literal };

struct RewardWeights {
  double lambda_lex = 0.5;
  double lambda_sem = 0.5;
  double lambda_cx = 0.5;
  double lambda_rg = 0.5;
  double lambda_clin = 1.0;
  double lambda_vis = 0.5;
  double lambda_fmt = 0.5;
  int k_clin = 10;
  ScheduleMode schedule_mode = ScheduleMode::Periodic;

  void validate() const;
  /// Whether the clinical term is added at global policy step k (k >= 1).
  bool clinical_fires(long k) const;
  /// Upper bound on r_total for the given reward pipeline stage.
  double upper_bound(int stage) const;
};

void to_json(nlohmann::json& j, const RewardWeights& w);
void from_json(const nlohmann::json& j, RewardWeights& w);

struct RewardBreakdown {
  double bleu4 = 0.0;
  double rougeL = 0.0;
  double semantic = 0.0;
  double s_cx = 0.0;
  double s_rg = 0.0;
  double format = 0.0;
  double vis_sim = 0.0;
  std::optional<double> vis_rank;  // set by the group-level ranking pass
  double r_ver = 0.0;
  double r_clin = 0.0;
  bool clin_applied = false;
  double r_text = 0.0;
  double r_vis = 0.0;
  double r_total = 0.0;
};

void to_json(nlohmann::json& j, const RewardBreakdown& b);

double verifiable_reward(const TokenSeq& candidate, const TokenSeq& gt, const RewardWeights& w,
                         const EmbeddingTable& emb);
double clinical_reward(const TokenSeq& candidate, const TokenSeq& gt, const RewardWeights& w,
                       const Lexicon& lex = Lexicon::standard());
/// R_ver plus lambda_clin R_clin on steps where the schedule fires.
double stage1_reward(const TokenSeq& candidate, const TokenSeq& gt, long step, const RewardWeights& w,
                     const EmbeddingTable& emb, const Lexicon& lex = Lexicon::standard());
/// 1 iff one <report> precedes one </report> and every word lies between them.
double format_reward(const TokenSeq& candidate);
/// cos(text_head(candidate), image_head(x)); 0 when either vector is zero.
double visual_similarity(const TokenSeq& candidate, const Eigen::VectorXd& image_features,
                         const DomainExpert& expert);
double cosine_or_zero(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Rank 1 = largest; out_i = 1 - (rank_i - 1)/(G - 1); tied scores share the
/// mean of the values their rank positions span. Throws GroupSizeError for G < 2.
std::vector<double> rank_normalize(std::span<const double> scores);

/// (1 - lambda_vis) r_text + lambda_vis vis_rank. Throws SequencingError when
/// the breakdown has not been through group ranking.
double composite_visual_reward(const RewardBreakdown& b, const RewardWeights& w);

/// Stage 0: r_text + lambda_fmt format; stage 1: r_vis + lambda_fmt format.
double total_reward(const RewardBreakdown& b, int stage, const RewardWeights& w);

/// Bundles the frozen pieces a reward evaluation needs.
class RewardModel {
 public:
  RewardModel(RewardWeights weights, EmbeddingTable emb, DomainExpert expert,
              const Lexicon& lex = Lexicon::standard());

  const RewardWeights& weights() const { return weights_; }
  const EmbeddingTable& embeddings() const { return emb_; }
  const DomainExpert& expert() const { return expert_; }
  const Lexicon& lexicon() const { return *lex_; }

  /// Per-candidate text and visual components; vis_rank still unset.
  RewardBreakdown score(const TokenSeq& candidate, const CaseRecord& c, long step) const;

  /// Scores a whole group for the given reward stage (0 text, 1 text+visual),
  /// including the ranking pass and r_total.
  std::vector<RewardBreakdown> score_group(std::span<const TokenSeq> candidates, const CaseRecord& c,
                                           long step, int stage) const;

 private:
  RewardWeights weights_;
  EmbeddingTable emb_;
  DomainExpert expert_;
  const Lexicon* lex_;
};

}  // namespace rrg
