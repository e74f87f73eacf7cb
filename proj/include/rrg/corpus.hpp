#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rrg/lexicon.hpp"

namespace rrg {

enum class LabelState : std::uint8_t { Absent, Present };

struct DiseaseLabel {
  int id;
  std::string name;
};

/// One state per label id. "No Finding" (id 0) is an ordinary label here;
/// the corpus generator sets it Present exactly when no pathology is Present.
class LabelSet {
 public:
  LabelSet() { states_.fill(LabelState::Absent); }

  LabelState state(int id) const { return states_.at(static_cast<std::size_t>(id)); }
  bool present(int id) const { return state(id) == LabelState::Present; }
  void set(int id, LabelState s) { states_.at(static_cast<std::size_t>(id)) = s; }
  void set_present(int id, bool p = true) { set(id, p ? LabelState::Present : LabelState::Absent); }

  std::vector<int> present_ids() const;
  int count_present() const;
  bool any_pathology() const;
  Eigen::VectorXd multihot() const;

  /// Copy with the no-finding state recomputed from the pathology states.
  LabelSet canonical() const;

  /// Pathology bit i+1 taken from bit i of mask; no-finding derived.
  static LabelSet from_pathology_mask(std::uint32_t mask);

  bool operator==(const LabelSet&) const = default;

 private:
  std::array<LabelState, kNumLabels> states_;
};

std::vector<DiseaseLabel> disease_labels(const Ontology& ontology = Ontology::builtin());

struct CaseRecord {
  std::string case_id;
  Eigen::VectorXd image_features;
  LabelSet labels;
  TokenSeq gt_report;
};

struct CorpusConfig {
  int n_cases = 500;
  int d_x = 32;
  double noise_sigma = 0.15;
  double disease_prior = 0.2;
  std::uint64_t seed = 7;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct Corpus {
  CorpusConfig config;
  Eigen::MatrixXd mixing;  // d_x x K, unit-norm columns
  std::vector<CaseRecord> cases;
};

/// d_x x K matrix with iid U[-1,1] entries and unit-length columns.
Eigen::MatrixXd mixing_matrix(int d_x, std::uint64_t seed);

/// mixing * multihot(labels) + N(0, sigma^2) per coordinate.
Eigen::VectorXd synthesize_features(const Eigen::MatrixXd& mixing, const LabelSet& labels,
                                    double noise_sigma, std::uint64_t stream_seed);

Corpus generate_corpus(const CorpusConfig& cfg, const Lexicon& lex = Lexicon::standard());

/// Template report: <report> findings : positives, pertinent negatives,
/// impression : names | no-finding clause . </report>
TokenSeq render_report(const LabelSet& labels, const Lexicon& lex = Lexicon::standard());

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct CorpusSplit {
  std::vector<CaseRecord> train;
  std::vector<CaseRecord> val;
  std::vector<CaseRecord> test;
};

/// Seeded shuffle then contiguous cut. Sizes: floor for train and val, the
/// remainder to test, so sizes always sum to the corpus size.
CorpusSplit split_corpus(const std::vector<CaseRecord>& cases, const SplitRatios& ratios,
                         std::uint64_t seed);

void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<CaseRecord>& cases,
                        const Lexicon& lex = Lexicon::standard());
std::vector<CaseRecord> read_corpus_jsonl(const std::filesystem::path& path,
                                          const Lexicon& lex = Lexicon::standard());
void write_vocab_json(const std::filesystem::path& path, const Vocab& vocab);
Vocab read_vocab_json(const std::filesystem::path& path);

}  // namespace rrg
