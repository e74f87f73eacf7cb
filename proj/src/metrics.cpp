#include "rrg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "rrg/errors.hpp"
#include "rrg/rng.hpp"

namespace rrg {

NgramProfile NgramProfile::of(const TokenSeq& tokens, int max_order) {
  NgramProfile p;
  for (int n = 1; n <= max_order; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
      ++p.counts[TokenSeq(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                          tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return p;
}

// ---------------------------------------------------------------- embeddings

EmbeddingTable::EmbeddingTable(Eigen::MatrixXd vectors, std::uint64_t seed)
    : vectors_(std::move(vectors)), seed_(seed) {
  for (Eigen::Index r = 0; r < vectors_.rows(); ++r) {
    const double n = vectors_.row(r).norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw ConfigError("embedding", "row " + std::to_string(r) + " has zero or non-finite norm");
    vectors_.row(r) /= n;
  }
}

EmbeddingTable EmbeddingTable::seeded(const Lexicon& lex, int dim, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("embedding_dim", "must be positive");
  const int v = lex.vocab.size();
  Eigen::MatrixXd m(v, dim);
  Rng rng(derive_seed(seed, {11}));
  for (int r = 0; r < v; ++r)
    for (int c = 0; c < dim; ++c) m(r, c) = rng.normal();

  // token -> owning label, or -1 when the token is shared by several labels
  std::unordered_map<TokenId, int> owner;
  std::set<TokenId> cue_tokens;
  for (const auto& cue : lex.ontology.negation_cues)
    for (const auto& w : cue) cue_tokens.insert(lex.vocab.id(w));
  for (int d = 0; d < kNumLabels; ++d) {
    for (const auto& trig : lex.ontology.labels[static_cast<std::size_t>(d)].triggers) {
      for (const auto& w : trig) {
        const TokenId t = lex.vocab.id(w);
        if (cue_tokens.count(t)) continue;
        auto [it, fresh] = owner.emplace(t, d);
        if (!fresh && it->second != d) it->second = -1;
      }
    }
  }
  // every owned token copies the row of the label's first owned token
  std::unordered_map<int, TokenId> anchor;
  for (TokenId t = 0; t < v; ++t) {
    auto it = owner.find(t);
    if (it == owner.end() || it->second < 0) continue;
    auto [a, fresh] = anchor.emplace(it->second, t);
    if (!fresh) m.row(t) = m.row(a->second);
  }
  return EmbeddingTable(std::move(m), seed);
}

// ---------------------------------------------------------------- BLEU

double bleu_n(const TokenSeq& cand_in, const TokenSeq& ref_in, int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu_n: order must be in 1..4");
  const TokenSeq cand = strip_special(cand_in);
  const TokenSeq ref = strip_special(ref_in);
  if (cand.empty()) return 0.0;

  const auto cp = NgramProfile::of(cand, n);
  const auto rp = NgramProfile::of(ref, n);
  std::vector<long> match(static_cast<std::size_t>(n) + 1, 0);
  for (const auto& [gram, count] : cp.counts) {
    auto it = rp.counts.find(gram);
    if (it != rp.counts.end()) match[gram.size()] += std::min(count, it->second);
  }
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const long total = std::max<long>(0, static_cast<long>(cand.size()) - k + 1);
    double p;
    if (match[static_cast<std::size_t>(k)] > 0) {
      p = static_cast<double>(match[static_cast<std::size_t>(k)]) / static_cast<double>(total);
    } else if (k == 1) {
      return 0.0;
    } else {
      p = 1.0 / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref.size()) /
                                                     static_cast<double>(cand.size())));
  return bp * std::exp(log_sum / n);
}

// ---------------------------------------------------------------- ROUGE-L

namespace {

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const TokenSeq& cand_in, const TokenSeq& ref_in) {
  const TokenSeq cand = strip_special(cand_in);
  const TokenSeq ref = strip_special(ref_in);
  if (cand.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------- METEOR

double meteor_lite(const TokenSeq& cand_in, const TokenSeq& ref_in) {
  const TokenSeq cand = strip_special(cand_in);
  const TokenSeq ref = strip_special(ref_in);
  if (cand.empty() || ref.empty()) return 0.0;

  // Left-to-right alignment: continue the current chunk when the next
  // reference position matches, otherwise take the earliest free occurrence.
  std::vector<bool> used(ref.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> align;  // (cand pos, ref pos)
  std::ptrdiff_t last_ref = -2;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    std::ptrdiff_t pick = -1;
    const auto next = static_cast<std::size_t>(last_ref + 1);
    if (last_ref >= 0 && next < ref.size() && !used[next] && ref[next] == cand[i]) {
      pick = static_cast<std::ptrdiff_t>(next);
    } else {
      for (std::size_t j = 0; j < ref.size(); ++j)
        if (!used[j] && ref[j] == cand[i]) {
          pick = static_cast<std::ptrdiff_t>(j);
          break;
        }
    }
    if (pick < 0) {
      last_ref = -2;
      continue;
    }
    used[static_cast<std::size_t>(pick)] = true;
    align.emplace_back(i, static_cast<std::size_t>(pick));
    last_ref = pick;
  }
  const double m = static_cast<double>(align.size());
  if (m == 0.0) return 0.0;

  int chunks = 0;
  for (std::size_t k = 0; k < align.size(); ++k) {
    const bool continues = k > 0 && align[k].first == align[k - 1].first + 1 &&
                           align[k].second == align[k - 1].second + 1;
    if (!continues) ++chunks;
  }
  constexpr double kAlpha = 0.9;
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = p * r / (kAlpha * p + (1.0 - kAlpha) * r);
  const double frag = static_cast<double>(chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

// ---------------------------------------------------------------- semantic F1

double semantic_f1(const TokenSeq& cand_in, const TokenSeq& ref_in, const EmbeddingTable& emb) {
  const TokenSeq cand = strip_special(cand_in);
  const TokenSeq ref = strip_special(ref_in);
  if (cand.empty() || ref.empty()) return 0.0;

  auto greedy = [&emb](const TokenSeq& from, const TokenSeq& to) {
    double sum = 0.0;
    for (auto a : from) {
      double best = 0.0;
      for (auto b : to) best = std::max(best, std::clamp(emb.cosine(a, b), 0.0, 1.0));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  const double p = greedy(cand, ref);
  const double r = greedy(ref, cand);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------- extraction

namespace {

using Words = std::vector<std::string>;

Words to_words(const TokenSeq& text, const Vocab& vocab) {
  Words out;
  for (auto t : strip_special(text)) out.push_back(vocab.token(t));
  return out;
}

bool matches_at(const Words& w, std::size_t pos, const Phrase& p) {
  if (pos + p.size() > w.size()) return false;
  return std::equal(p.begin(), p.end(), w.begin() + static_cast<std::ptrdiff_t>(pos));
}

bool is_terminator(const Ontology& o, const std::string& w) {
  return std::find(o.terminators.begin(), o.terminators.end(), w) != o.terminators.end();
}

/// A cue lies wholly inside [pos - window, pos) with no sentence break after it.
bool negated_at(const Words& w, std::size_t pos, const Ontology& o) {
  const std::size_t lo = pos >= static_cast<std::size_t>(o.negation_window)
                             ? pos - static_cast<std::size_t>(o.negation_window)
                             : 0;
  for (std::size_t s = lo; s < pos; ++s) {
    for (const auto& cue : o.negation_cues) {
      if (s + cue.size() > pos || !matches_at(w, s, cue)) continue;
      bool broken = false;
      for (std::size_t k = s + cue.size(); k < pos; ++k) broken = broken || is_terminator(o, w[k]);
      if (!broken) return true;
    }
  }
  return false;
}

/// Longest phrase from `table` starting at pos; returns its length or 0.
std::size_t match_named(const Words& w, std::size_t pos, const std::vector<NamedPhrase>& table,
                        std::string* name) {
  for (const auto& e : table) {
    if (matches_at(w, pos, e.tokens)) {
      *name = e.name;
      return e.tokens.size();
    }
  }
  return 0;
}

/// [there is [a]] [modifier] finding [prep the location]
std::optional<Triple> parse_finding_sentence(const Words& s, const Ontology& o) {
  const auto& g = o.grammar;
  std::size_t i = 0;
  if (i + 1 < s.size() && s[i] == "there" && (s[i + 1] == "is" || s[i + 1] == "are")) {
    i += 2;
    if (i < s.size() && (s[i] == "a" || s[i] == "an")) ++i;
  }
  Triple t{"none", "none", "none"};
  if (i < s.size() && std::find(g.modifiers.begin(), g.modifiers.end(), s[i]) != g.modifiers.end()) {
    // a modifier word may itself start a finding phrase; prefer the finding
    std::string probe;
    if (match_named(s, i, g.findings, &probe) == 0) t.modifier = s[i++];
  }
  const std::size_t flen = match_named(s, i, g.findings, &t.finding);
  if (flen == 0) return std::nullopt;
  i += flen;
  if (i == s.size()) return t;
  if (std::find(g.prepositions.begin(), g.prepositions.end(), s[i]) == g.prepositions.end())
    return std::nullopt;
  ++i;
  if (i >= s.size() || s[i] != g.determiner) return std::nullopt;
  ++i;
  const std::size_t llen = match_named(s, i, g.locations, &t.location);
  if (llen == 0 || i + llen != s.size()) return std::nullopt;
  return t;
}

}  // namespace

LabelSet extract_labels(const TokenSeq& text, const Lexicon& lex) {
  const auto& o = lex.ontology;
  const Words w = to_words(text, lex.vocab);
  LabelSet out;
  for (int d = 0; d < kNumLabels; ++d) {
    bool present = false;
    for (const auto& trig : o.labels[static_cast<std::size_t>(d)].triggers) {
      for (std::size_t pos = 0; pos < w.size() && !present; ++pos)
        if (matches_at(w, pos, trig) && !negated_at(w, pos, o)) present = true;
      if (present) break;
    }
    out.set_present(d, present);
  }
  return out;
}

TripleSet extract_triples(const TokenSeq& text, const Lexicon& lex) {
  const auto& o = lex.ontology;
  Words w = to_words(text, lex.vocab);
  // the impression section restates findings by name only; it is not parsed
  for (std::size_t pos = 0; pos < w.size(); ++pos) {
    if (matches_at(w, pos, o.impression_header)) {
      w.resize(pos);
      break;
    }
  }
  TripleSet out;
  Words sentence;
  auto flush = [&] {
    std::size_t start = 0;
    if (matches_at(sentence, 0, o.findings_header)) start = o.findings_header.size();
    const Words body(sentence.begin() + static_cast<std::ptrdiff_t>(start), sentence.end());
    if (!body.empty())
      if (auto t = parse_finding_sentence(body, o)) out.insert(*t);
    sentence.clear();
  };
  for (const auto& word : w) {
    if (is_terminator(o, word))
      flush();
    else
      sentence.push_back(word);
  }
  flush();
  return out;
}

// ---------------------------------------------------------------- F1

double F1Counts::precision() const {
  return tp + fp == 0 ? (fn == 0 ? 1.0 : 0.0) : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double F1Counts::recall() const {
  return tp + fn == 0 ? (fp == 0 ? 1.0 : 0.0) : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double F1Counts::f1() const {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace {

template <typename Set>
F1Counts count_sets(const Set& pred, const Set& gold) {
  F1Counts c;
  for (const auto& e : pred) (gold.count(e) ? c.tp : c.fp) += 1;
  for (const auto& e : gold)
    if (!pred.count(e)) ++c.fn;
  return c;
}

std::set<int> present_set(const LabelSet& l) {
  const auto ids = l.present_ids();
  return {ids.begin(), ids.end()};
}

}  // namespace

F1Counts f1_counts(const std::set<int>& pred, const std::set<int>& gold) { return count_sets(pred, gold); }
F1Counts f1_counts(const TripleSet& pred, const TripleSet& gold) { return count_sets(pred, gold); }
F1Counts f1_counts(const LabelSet& pred, const LabelSet& gold) {
  return count_sets(present_set(pred), present_set(gold));
}

double micro_f1(const std::set<int>& pred, const std::set<int>& gold) { return f1_counts(pred, gold).f1(); }
double micro_f1(const TripleSet& pred, const TripleSet& gold) { return f1_counts(pred, gold).f1(); }
double micro_f1(const LabelSet& pred, const LabelSet& gold) { return f1_counts(pred, gold).f1(); }

}  // namespace rrg
