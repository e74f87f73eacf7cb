#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace rrg {

inline constexpr int kNumLabels = 14;
inline constexpr int kNoFindingId = 0;

using Phrase = std::vector<std::string>;
using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// (finding, location, modifier); "none" marks an absent slot.
struct Triple {
  std::string finding;
  std::string location;
  std::string modifier;
  auto operator<=>(const Triple&) const = default;
};

struct NamedPhrase {
  Phrase tokens;
  std::string name;
};

struct TripleGrammar {
  std::vector<std::string> prepositions;
  std::string determiner;
  std::vector<std::string> modifiers;
  std::vector<NamedPhrase> findings;   // longest match wins
  std::vector<NamedPhrase> locations;  // longest match wins
};

/// Per-label templates and trigger phrases. The no-finding label has no
/// sentence templates; it is rendered through the impression clause.
struct LabelRule {
  std::string name;
  Phrase impression;
  Phrase positive;
  Phrase negative;
  std::vector<Phrase> triggers;
  std::optional<Triple> triple;
};

/// Rule tables behind report rendering and rule-based extraction. Loaded from
/// assets/clinical_rules.json, which is compiled into the library.
struct Ontology {
  std::vector<LabelRule> labels;
  std::vector<Phrase> negation_cues;
  int negation_window = 3;
  std::vector<std::string> terminators;
  Phrase findings_header;
  Phrase impression_header;
  Phrase no_finding_clause;
  int negated_absent_count = 3;
  TripleGrammar grammar;
  std::vector<std::string> extra_vocabulary;

  static Ontology from_json(const nlohmann::json& j);
  static const Ontology& builtin();
};

/// Closed whitespace vocabulary. Ids 0..5 are the special tokens.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kReportOpen = 4;
  static constexpr TokenId kReportClose = 5;
  static constexpr int kNumSpecial = 6;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  /// Specials followed by every ontology word in first-appearance order.
  static Vocab from_ontology(const Ontology& ontology);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenId id(std::string_view word) const;  // kUnk when absent
  bool contains(std::string_view word) const;
  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecial; }

  TokenSeq tokenize(std::string_view text) const;
  std::string detokenize(const TokenSeq& tokens) const;
  TokenSeq encode(const Phrase& words) const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Ontology plus the vocabulary derived from it.
struct Lexicon {
  Ontology ontology;
  Vocab vocab;

  explicit Lexicon(Ontology o) : ontology(std::move(o)), vocab(Vocab::from_ontology(ontology)) {}
  static const Lexicon& standard();
};

/// Drop every special token (tags, bos/eos, padding, unknown is kept).
TokenSeq strip_special(const TokenSeq& tokens);

}  // namespace rrg
