#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "rrg/corpus.hpp"
#include "rrg/lexicon.hpp"

namespace rrg {

/// Counts of every n-gram of order 1..max_order.
struct NgramProfile {
  std::map<TokenSeq, int> counts;
  static NgramProfile of(const TokenSeq& tokens, int max_order);
};

using TripleSet = std::set<Triple>;

/// Frozen unit-norm token vectors standing in for a contextual embedding space.
class EmbeddingTable {
 public:
  /// Seeded Gaussian directions, normalized. Tokens that occur in the trigger
  /// phrases of exactly one label share that label's vector.
  static EmbeddingTable seeded(const Lexicon& lex, int dim, std::uint64_t seed);

  /// Explicit rows, normalized on construction. Rows must be nonzero.
  explicit EmbeddingTable(Eigen::MatrixXd vectors, std::uint64_t seed = 0);

  int dim() const { return static_cast<int>(vectors_.cols()); }
  int size() const { return static_cast<int>(vectors_.rows()); }
  std::uint64_t seed() const { return seed_; }
  auto vector(TokenId id) const { return vectors_.row(id); }
  double cosine(TokenId a, TokenId b) const { return vectors_.row(a).dot(vectors_.row(b)); }

 private:
  Eigen::MatrixXd vectors_;
  std::uint64_t seed_;
};

// All scores below strip special tokens (report tags etc.) from both inputs.

/// Sentence BLEU up to order n with brevity penalty; zero higher-order counts
/// get add-one smoothing, unigram precision is never smoothed.
double bleu_n(const TokenSeq& candidate, const TokenSeq& reference, int n);

/// LCS-based F1 (beta = 1).
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

/// Exact-match METEOR: F_mean (alpha 0.9) times 1 - 0.5 (chunks/matches)^3.
double meteor_lite(const TokenSeq& candidate, const TokenSeq& reference);

/// Greedy max-cosine matching F1 with cosines clamped to [0, 1].
double semantic_f1(const TokenSeq& candidate, const TokenSeq& reference, const EmbeddingTable& emb);

LabelSet extract_labels(const TokenSeq& text, const Lexicon& lex = Lexicon::standard());
TripleSet extract_triples(const TokenSeq& text, const Lexicon& lex = Lexicon::standard());

struct F1Counts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  F1Counts& operator+=(const F1Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  double precision() const;
  double recall() const;
  /// 2TP / (2TP + FP + FN); 1 when all counts are zero.
  double f1() const;
};

F1Counts f1_counts(const std::set<int>& pred, const std::set<int>& gold);
F1Counts f1_counts(const TripleSet& pred, const TripleSet& gold);
F1Counts f1_counts(const LabelSet& pred, const LabelSet& gold);  // over Present labels

double micro_f1(const std::set<int>& pred, const std::set<int>& gold);
double micro_f1(const TripleSet& pred, const TripleSet& gold);
double micro_f1(const LabelSet& pred, const LabelSet& gold);

}  // namespace rrg
