#include "rrg/lexicon.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "rrg/errors.hpp"

namespace rrg {

namespace detail {
extern const char* const kClinicalRulesJson;
}

namespace {

using nlohmann::json;

Phrase phrase(const json& j) { return j.get<Phrase>(); }

std::vector<NamedPhrase> named_phrases(const json& j) {
  std::vector<NamedPhrase> out;
  for (const auto& e : j) out.push_back({phrase(e.at("tokens")), e.at("name").get<std::string>()});
  // longest match first; stable keeps file order among equal lengths
  std::stable_sort(out.begin(), out.end(), [](const NamedPhrase& a, const NamedPhrase& b) {
    return a.tokens.size() > b.tokens.size();
  });
  return out;
}

}  // namespace

Ontology Ontology::from_json(const json& j) {
  Ontology o;
  for (const auto& c : j.at("negation_cues")) o.negation_cues.push_back(phrase(c));
  o.negation_window = j.at("negation_window").get<int>();
  o.terminators = j.at("sentence_terminators").get<std::vector<std::string>>();
  o.findings_header = phrase(j.at("section_headers").at("findings"));
  o.impression_header = phrase(j.at("section_headers").at("impression"));
  o.no_finding_clause = phrase(j.at("no_finding_clause"));
  o.negated_absent_count = j.at("negated_absent_count").get<int>();
  for (const auto& l : j.at("labels")) {
    LabelRule r;
    r.name = l.at("name").get<std::string>();
    if (l.contains("impression")) r.impression = phrase(l.at("impression"));
    if (l.contains("positive")) r.positive = phrase(l.at("positive"));
    if (l.contains("negative")) r.negative = phrase(l.at("negative"));
    for (const auto& t : l.at("triggers")) r.triggers.push_back(phrase(t));
    if (l.contains("triple")) {
      const auto& t = l.at("triple");
      r.triple = Triple{t.at("finding").get<std::string>(), t.at("location").get<std::string>(),
                        t.at("modifier").get<std::string>()};
    }
    o.labels.push_back(std::move(r));
  }
  if (static_cast<int>(o.labels.size()) != kNumLabels)
    throw ConfigError("labels", "expected " + std::to_string(kNumLabels) + " labels, got " +
                                    std::to_string(o.labels.size()));
  const auto& g = j.at("triple_grammar");
  o.grammar.prepositions = g.at("prepositions").get<std::vector<std::string>>();
  o.grammar.determiner = g.at("determiner").get<std::string>();
  o.grammar.modifiers = g.at("modifiers").get<std::vector<std::string>>();
  o.grammar.findings = named_phrases(g.at("findings"));
  o.grammar.locations = named_phrases(g.at("locations"));
  o.extra_vocabulary = j.at("extra_vocabulary").get<std::vector<std::string>>();
  return o;
}

const Ontology& Ontology::builtin() {
  static const Ontology o = from_json(json::parse(detail::kClinicalRulesJson));
  return o;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  static const char* const kSpecials[kNumSpecial] = {"<pad>", "<bos>",    "<eos>",
                                                     "<unk>", "<report>", "</report>"};
  if (static_cast<int>(tokens_.size()) < kNumSpecial)
    throw LoadError("vocabulary shorter than the special-token block");
  for (int i = 0; i < kNumSpecial; ++i)
    if (tokens_[static_cast<std::size_t>(i)] != kSpecials[i])
      throw LoadError("vocabulary special token " + std::to_string(i) + " is '" +
                      tokens_[static_cast<std::size_t>(i)] + "', expected '" + kSpecials[i] + "'");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw LoadError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::from_ontology(const Ontology& o) {
  std::vector<std::string> tokens = {"<pad>", "<bos>", "<eos>", "<unk>", "<report>", "</report>"};
  std::unordered_set<std::string> seen(tokens.begin(), tokens.end());
  auto add = [&](const std::string& w) {
    if (seen.insert(w).second) tokens.push_back(w);
  };
  auto add_phrase = [&](const Phrase& p) {
    for (const auto& w : p) add(w);
  };
  add_phrase(o.findings_header);
  add_phrase(o.impression_header);
  add_phrase(o.no_finding_clause);
  for (const auto& t : o.terminators) add(t);
  for (const auto& l : o.labels) {
    add_phrase(l.positive);
    add_phrase(l.negative);
    add_phrase(l.impression);
    for (const auto& t : l.triggers) add_phrase(t);
  }
  for (const auto& c : o.negation_cues) add_phrase(c);
  add(o.grammar.determiner);
  for (const auto& w : o.grammar.prepositions) add(w);
  for (const auto& w : o.grammar.modifiers) add(w);
  for (const auto& f : o.grammar.findings) add_phrase(f.tokens);
  for (const auto& f : o.grammar.locations) add_phrase(f.tokens);
  for (const auto& w : o.extra_vocabulary) add(w);
  return Vocab(std::move(tokens));
}

TokenId Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

TokenSeq Vocab::tokenize(std::string_view text) const {
  TokenSeq out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(id(w));
  return out;
}

std::string Vocab::detokenize(const TokenSeq& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += token(tokens[i]);
  }
  return out;
}

TokenSeq Vocab::encode(const Phrase& words) const {
  TokenSeq out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

nlohmann::json Vocab::to_json() const { return tokens_; }

Vocab Vocab::from_json(const nlohmann::json& j) { return Vocab(j.get<std::vector<std::string>>()); }

const Lexicon& Lexicon::standard() {
  static const Lexicon lex(Ontology::builtin());
  return lex;
}

TokenSeq strip_special(const TokenSeq& tokens) {
  TokenSeq out;
  out.reserve(tokens.size());
  for (auto t : tokens)
    if (!Vocab::is_special(t) || t == Vocab::kUnk) out.push_back(t);
  return out;
}

}  // namespace rrg
