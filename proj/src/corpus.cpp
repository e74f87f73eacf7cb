#include "rrg/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "rrg/errors.hpp"
#include "rrg/rng.hpp"

namespace rrg {

using nlohmann::json;

std::vector<int> LabelSet::present_ids() const {
  std::vector<int> out;
  for (int i = 0; i < kNumLabels; ++i)
    if (present(i)) out.push_back(i);
  return out;
}

int LabelSet::count_present() const { return static_cast<int>(present_ids().size()); }

bool LabelSet::any_pathology() const {
  for (int i = 0; i < kNumLabels; ++i)
    if (i != kNoFindingId && present(i)) return true;
  return false;
}

Eigen::VectorXd LabelSet::multihot() const {
  Eigen::VectorXd v(kNumLabels);
  for (int i = 0; i < kNumLabels; ++i) v[i] = present(i) ? 1.0 : 0.0;
  return v;
}

LabelSet LabelSet::canonical() const {
  LabelSet out = *this;
  out.set_present(kNoFindingId, !any_pathology());
  return out;
}

LabelSet LabelSet::from_pathology_mask(std::uint32_t mask) {
  LabelSet out;
  for (int i = 1; i < kNumLabels; ++i) out.set_present(i, (mask >> (i - 1)) & 1u);
  return out.canonical();
}

std::vector<DiseaseLabel> disease_labels(const Ontology& ontology) {
  std::vector<DiseaseLabel> out;
  for (int i = 0; i < kNumLabels; ++i)
    out.push_back({i, ontology.labels[static_cast<std::size_t>(i)].name});
  return out;
}

void CorpusConfig::validate() const {
  if (n_cases < 0) throw ConfigError("n_cases", "must be nonnegative");
  if (d_x < kNumLabels)
    throw ConfigError("d_x", "must be at least the label count " + std::to_string(kNumLabels));
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("noise_sigma", "must be a finite nonnegative real");
  if (!(disease_prior >= 0.0 && disease_prior <= 1.0))
    throw ConfigError("disease_prior", "must lie in [0, 1]");
}

void to_json(json& j, const CorpusConfig& c) {
  j = json{{"n_cases", c.n_cases},
           {"d_x", c.d_x},
           {"noise_sigma", c.noise_sigma},
           {"disease_prior", c.disease_prior},
           {"seed", c.seed}};
}

void from_json(const json& j, CorpusConfig& c) {
  c.n_cases = j.value("n_cases", c.n_cases);
  c.d_x = j.value("d_x", c.d_x);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.disease_prior = j.value("disease_prior", c.disease_prior);
  c.seed = j.value("seed", c.seed);
}

Eigen::MatrixXd mixing_matrix(int d_x, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0}));
  Eigen::MatrixXd m(d_x, kNumLabels);
  // column-major fill order is part of the reproducibility contract
  for (int c = 0; c < kNumLabels; ++c)
    for (int r = 0; r < d_x; ++r) m(r, c) = rng.uniform(-1.0, 1.0);
  for (int c = 0; c < kNumLabels; ++c) m.col(c) /= m.col(c).norm();
  return m;
}

Eigen::VectorXd synthesize_features(const Eigen::MatrixXd& mixing, const LabelSet& labels,
                                    double noise_sigma, std::uint64_t stream_seed) {
  Eigen::VectorXd x = mixing * labels.multihot();
  if (noise_sigma > 0.0) {
    Rng rng(stream_seed);
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += noise_sigma * rng.normal();
  }
  return x;
}

Corpus generate_corpus(const CorpusConfig& cfg, const Lexicon& lex) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  corpus.mixing = mixing_matrix(cfg.d_x, cfg.seed);
  corpus.cases.reserve(static_cast<std::size_t>(cfg.n_cases));
  for (int i = 0; i < cfg.n_cases; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Rng label_rng(derive_seed(cfg.seed, {1, idx}));
    LabelSet labels;
    for (int d = 0; d < kNumLabels; ++d)
      if (d != kNoFindingId) labels.set_present(d, label_rng.bernoulli(cfg.disease_prior));
    labels = labels.canonical();

    CaseRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "case-%05d", i);
    rec.case_id = id;
    rec.labels = labels;
    rec.image_features =
        synthesize_features(corpus.mixing, labels, cfg.noise_sigma, derive_seed(cfg.seed, {2, idx}));
    rec.gt_report = render_report(labels, lex);
    corpus.cases.push_back(std::move(rec));
  }
  return corpus;
}

TokenSeq render_report(const LabelSet& labels, const Lexicon& lex) {
  const auto& o = lex.ontology;
  Phrase words = {"<report>"};
  auto append = [&](const Phrase& p) { words.insert(words.end(), p.begin(), p.end()); };

  append(o.findings_header);
  std::vector<int> positives;
  for (int d = 0; d < kNumLabels; ++d) {
    if (d == kNoFindingId || !labels.present(d)) continue;
    positives.push_back(d);
    append(o.labels[static_cast<std::size_t>(d)].positive);
  }
  int negated = 0;
  for (int d = 0; d < kNumLabels && negated < o.negated_absent_count; ++d) {
    if (d == kNoFindingId || labels.present(d)) continue;
    append(o.labels[static_cast<std::size_t>(d)].negative);
    ++negated;
  }
  append(o.impression_header);
  if (positives.empty()) {
    append(o.no_finding_clause);
  } else {
    for (std::size_t k = 0; k < positives.size(); ++k) {
      if (k) words.push_back(",");
      append(o.labels[static_cast<std::size_t>(positives[k])].impression);
    }
  }
  words.push_back(o.terminators.front());
  words.push_back("</report>");
  return lex.vocab.encode(words);
}

CorpusSplit split_corpus(const std::vector<CaseRecord>& cases, const SplitRatios& r,
                         std::uint64_t seed) {
  if (r.train < 0 || r.val < 0 || r.test < 0)
    throw ConfigError("split_ratios", "ratios must be nonnegative");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw ConfigError("split_ratios", "ratios must sum to 1");

  const std::size_t n = cases.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {3}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  // the 1e-9 slack absorbs representation error such as 0.7 * 100
  auto count = [n](double ratio) {
    return std::min(n, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
  };
  const std::size_t n_train = count(r.train);
  const std::size_t n_val = std::min(n - n_train, count(r.val));

  CorpusSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = cases[order[i]];
    if (i < n_train)
      out.train.push_back(c);
    else if (i < n_train + n_val)
      out.val.push_back(c);
    else
      out.test.push_back(c);
  }
  return out;
}

void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<CaseRecord>& cases,
                        const Lexicon& lex) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  for (const auto& c : cases) {
    json labels = json::object();
    for (int d = 0; d < kNumLabels; ++d)
      labels[lex.ontology.labels[static_cast<std::size_t>(d)].name] =
          c.labels.present(d) ? "Present" : "Absent";
    json rec{{"case_id", c.case_id},
             {"image_features", std::vector<double>(c.image_features.data(),
                                                    c.image_features.data() + c.image_features.size())},
             {"labels", labels},
             {"report", lex.vocab.detokenize(c.gt_report)}};
    out << rec.dump() << '\n';
  }
}

std::vector<CaseRecord> read_corpus_jsonl(const std::filesystem::path& path, const Lexicon& lex) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open corpus file " + path.string());
  std::vector<CaseRecord> cases;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CaseRecord c;
      c.case_id = j.at("case_id").get<std::string>();
      const auto feats = j.at("image_features").get<std::vector<double>>();
      c.image_features = Eigen::Map<const Eigen::VectorXd>(feats.data(),
                                                           static_cast<Eigen::Index>(feats.size()));
      const auto& labels = j.at("labels");
      for (int d = 0; d < kNumLabels; ++d) {
        const auto& name = lex.ontology.labels[static_cast<std::size_t>(d)].name;
        const auto state = labels.at(name).get<std::string>();
        if (state != "Present" && state != "Absent")
          throw LoadError("label state '" + state + "' for " + name);
        c.labels.set_present(d, state == "Present");
      }
      c.gt_report = lex.vocab.tokenize(j.at("report").get<std::string>());
      cases.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cases;
}

void write_vocab_json(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out << vocab.to_json().dump() << '\n';
}

Vocab read_vocab_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open vocabulary file " + path.string());
  try {
    return Vocab::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace rrg
