// Shared fixtures and independent reference computations for the test binaries.
// Nothing here calls into the metric or gradient code it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rrg/harness.hpp"
#include "rrg/lexicon.hpp"
#include "rrg/policy.hpp"

namespace rrg::testing {

/// Letters to ids above the special range, so "a b c" becomes {10, 11, 12}.
/// Words longer than one character map by their first letter plus 26 * length.
inline TokenSeq seq(const std::string& text) {
  TokenSeq out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(10 + (w[0] - 'a') + 26 * static_cast<int>(w.size() - 1));
  return out;
}

// ---------------------------------------------------------------- metric oracles

inline std::vector<TokenSeq> ngrams(const TokenSeq& s, int n) {
  std::vector<TokenSeq> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
  return out;
}

/// Clipped matches by pairing each candidate n-gram with an unused equal
/// reference n-gram; O(n^2) on purpose.
inline int clipped_matches(const TokenSeq& cand, const TokenSeq& ref, int n) {
  auto c = ngrams(cand, n);
  auto r = ngrams(ref, n);
  std::vector<bool> used(r.size(), false);
  int m = 0;
  for (const auto& g : c)
    for (std::size_t j = 0; j < r.size(); ++j)
      if (!used[j] && r[j] == g) {
        used[j] = true;
        ++m;
        break;
      }
  return m;
}

inline double oracle_bleu(const TokenSeq& cand, const TokenSeq& ref, int n) {
  if (cand.empty()) return 0.0;
  double logsum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const int total = std::max(0, static_cast<int>(cand.size()) - k + 1);
    const int m = clipped_matches(cand, ref, k);
    double p;
    if (k == 1)
      p = static_cast<double>(m) / total;
    else
      p = m > 0 ? static_cast<double>(m) / total : 1.0 / (total + 1);
    if (p == 0.0) return 0.0;
    logsum += std::log(p);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref.size()) / cand.size()));
  return bp * std::exp(logsum / n);
}

/// Longest common subsequence by enumerating every subsequence of the
/// candidate (candidates here are at most ~16 tokens).
inline int brute_lcs(const TokenSeq& a, const TokenSeq& b) {
  const int n = static_cast<int>(a.size());
  int best = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    const int len = __builtin_popcount(mask);
    if (len <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1u)) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else ++j;
    }
    if (ok) best = len;
  }
  return best;
}

inline double oracle_rouge_l(const TokenSeq& cand, const TokenSeq& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const double l = brute_lcs(cand, ref);
  if (l == 0) return 0.0;
  const double p = l / cand.size(), r = l / ref.size();
  return 2 * p * r / (p + r);
}

inline double oracle_semantic_f1(const TokenSeq& cand, const TokenSeq& ref, const Eigen::MatrixXd& unit_rows) {
  if (cand.empty() || ref.empty()) return 0.0;
  auto cosc = [&](TokenId a, TokenId b) { return std::clamp(unit_rows.row(a).dot(unit_rows.row(b)), 0.0, 1.0); };
  double p = 0, r = 0;
  for (TokenId c : cand) {
    double best = 0;
    for (TokenId g : ref) best = std::max(best, cosc(c, g));
    p += best;
  }
  for (TokenId g : ref) {
    double best = 0;
    for (TokenId c : cand) best = std::max(best, cosc(c, g));
    r += best;
  }
  p /= cand.size();
  r /= ref.size();
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

// ---------------------------------------------------------------- worked examples

struct MetricCase {
  const char* cand;
  const char* ref;
  double expected;
};

// BLEU-4, hand counted. Orders >= 2 with no match use 1/(total + 1).
inline const std::vector<MetricCase> kBleu4Cases = {
    {"a b c d e", "a b c d e", 1.0},
    {"a b c d", "a b c d e", 0.77880078307140488},             // exp(1 - 5/4)
    {"a b c", "d e f", 0.0},                                   // unigram precision 0
    {"a b c", "a b c", 1.0},                                   // empty 4-gram set smooths to 1/1
    {"a b x d", "a b c d", 0.45180100180492244},               // (3/4 * 1/3 * 1/3 * 1/2)^(1/4)
    {"a a a a", "a b", 0.31947155212313627},                   // (1/4 * 1/4 * 1/3 * 1/2)^(1/4)
};

inline const std::vector<MetricCase> kRougeCases = {
    {"a b c d", "a b c d", 1.0},
    {"a b c", "a c", 0.8},
    {"a b", "c d", 0.0},
    {"a b c d", "a c b d", 0.75},
    {"a b", "a b c d", 2.0 / 3.0},
};

// F_mean = P R / (0.9 P + 0.1 R), penalty 0.5 (chunks / matches)^3.
inline const std::vector<MetricCase> kMeteorCases = {
    {"a b c d", "a b c d", 0.9921875},
    {"a b", "c d", 0.0},
    {"d c b a", "a b c d", 0.5},
    {"a b x", "a b c d", 0.48076923076923078},  // F = (1/3) / 0.65, one chunk
    {"a x b", "a b", 0.47619047619047616},      // F = (2/3) / 0.7, two chunks
};

struct SetCase {
  std::set<int> pred;
  std::set<int> gold;
  double expected;
};

inline const std::vector<SetCase> kMicroF1Cases = {
    {{1, 2}, {2, 3}, 0.5},
    {{4, 7}, {4, 7}, 1.0},
    {{}, {1}, 0.0},
    {{}, {}, 1.0},
    {{1, 2, 3, 4}, {1, 2}, 2.0 / 3.0},
};

/// Two-dimensional embedding rows for the semantic examples: ids 10..14 are
/// a=(1,0), b=(0,1), c=(1,1)/sqrt2, d=(-1,0), e=(0,-1); every other id gets a
/// third axis of its own so it is orthogonal to all of them.
inline Eigen::MatrixXd semantic_rows(int vocab) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(vocab, vocab + 2);
  for (int i = 0; i < vocab; ++i) m(i, 2 + i) = 1.0;
  auto set2 = [&](int id, double x, double y) {
    m.row(id).setZero();
    m(id, 0) = x;
    m(id, 1) = y;
  };
  set2(10, 1, 0);
  set2(11, 0, 1);
  set2(12, M_SQRT1_2, M_SQRT1_2);
  set2(13, -1, 0);
  set2(14, 0, -1);
  return m;
}

inline const std::vector<MetricCase> kSemanticCases = {
    {"a b c", "a b c", 1.0},
    {"a b z", "a b", 0.8},              // P = 2/3, R = 1
    {"c", "a b", M_SQRT1_2},            // P = R = 1/sqrt2
    {"d", "a", 0.0},                    // cosine -1 clamps to 0
    {"a z", "a b", 0.5},                // P = 1/2, R = 1/2
};

// ---------------------------------------------------------------- fixtures

/// A corpus and trainer small enough for a unit test to run end to end.
inline ExperimentConfig small_config(int n_cases = 60, int steps = 4) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  cfg.corpus.n_cases = n_cases;
  cfg.split = {0.8, 0.2, 0.0};
  cfg.policy.embed_dim = 8;
  cfg.trainer.group_size = 4;
  cfg.trainer.batch_size = 3;
  cfg.trainer.sft_epochs = 2;
  cfg.trainer.max_tokens = 24;
  cfg.trainer.stages[0].rl_steps = steps;
  cfg.trainer.stages[1].rl_steps = steps;
  cfg.harness.seeds = {1, 2};
  return cfg;
}

// ---------------------------------------------------------------- gradients

/// Central differences of f over every entry of every block in `blocks`.
inline PolicyParams finite_difference(const PolicyParams& at, const std::function<double(const PolicyParams&)>& f,
                                      double h = 1e-5) {
  PolicyParams g = PolicyParams::zeros(at.dims);
  PolicyParams x = at;
  for (Block b : kAllBlocks) {
    auto xs = x.flat(b);
    auto gs = g.flat(b);
    for (Eigen::Index i = 0; i < xs.size(); ++i) {
      const double keep = xs[i];
      xs[i] = keep + h;
      const double up = f(x);
      xs[i] = keep - h;
      const double down = f(x);
      xs[i] = keep;
      gs[i] = (up - down) / (2 * h);
    }
  }
  return g;
}

/// Largest per-entry relative error |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const PolicyParams& analytic, const PolicyParams& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (Block b : kAllBlocks) {
    auto a = analytic.flat(b);
    auto n = numeric.flat(b);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double denom = std::max({std::abs(a[i]), std::abs(n[i]), floor});
      worst = std::max(worst, std::abs(a[i] - n[i]) / denom);
    }
  }
  return worst;
}

}  // namespace rrg::testing
