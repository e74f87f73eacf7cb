#include "rrg/policy.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "rrg/errors.hpp"
#include "rrg/rng.hpp"

namespace rrg {

void PolicyDims::validate() const {
  if (vocab_size < Vocab::kNumSpecial) throw ConfigError("vocab_size", "smaller than the special-token block");
  if (embed_dim < 1) throw ConfigError("embed_dim", "must be positive");
  if (feature_dim < 1) throw ConfigError("feature_dim", "must be positive");
  if (context < 1) throw ConfigError("context", "must be positive");
}

const char* block_name(Block b) {
  switch (b) {
    case Block::Embeddings: return "E";
    case Block::Vision: return "P";
    case Block::Output: return "W";
    case Block::Bias: return "b";
  }
  return "?";
}

const char* block_partition(Block b) { return b == Block::Vision ? "vision" : "language"; }

PolicyParams PolicyParams::zeros(const PolicyDims& d) {
  d.validate();
  PolicyParams p;
  p.dims = d;
  p.E = Eigen::MatrixXd::Zero(d.vocab_size, d.embed_dim);
  p.P = Eigen::MatrixXd::Zero(d.embed_dim, d.feature_dim);
  p.W = Eigen::MatrixXd::Zero(d.vocab_size, 2 * d.embed_dim);
  p.b = Eigen::VectorXd::Zero(d.vocab_size);
  return p;
}

Eigen::Map<Eigen::VectorXd> PolicyParams::flat(Block blk) {
  switch (blk) {
    case Block::Embeddings: return {E.data(), E.size()};
    case Block::Vision: return {P.data(), P.size()};
    case Block::Output: return {W.data(), W.size()};
    case Block::Bias: return {b.data(), b.size()};
  }
  throw std::logic_error("unknown block");
}

Eigen::Map<const Eigen::VectorXd> PolicyParams::flat(Block blk) const {
  switch (blk) {
    case Block::Embeddings: return {E.data(), E.size()};
    case Block::Vision: return {P.data(), P.size()};
    case Block::Output: return {W.data(), W.size()};
    case Block::Bias: return {b.data(), b.size()};
  }
  throw std::logic_error("unknown block");
}

Eigen::Index PolicyParams::num_params() const { return E.size() + P.size() + W.size() + b.size(); }

bool PolicyParams::all_finite() const {
  return E.allFinite() && P.allFinite() && W.allFinite() && b.allFinite();
}

bool PolicyParams::operator==(const PolicyParams& o) const {
  if (!(dims == o.dims)) return false;
  for (auto blk : kAllBlocks) {
    const auto a = flat(blk);
    const auto c = o.flat(blk);
    if (a.size() != c.size() || std::memcmp(a.data(), c.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0)
      return false;
  }
  return true;
}

bool ParamMask::trainable(Block b) const {
  switch (b) {
    case Block::Embeddings: return embeddings;
    case Block::Vision: return vision;
    case Block::Output: return output;
    case Block::Bias: return bias;
  }
  return false;
}

ParamMask stage_mask(int stage) {
  if (stage == 0) return {true, true, true, true};
  if (stage == 1) return {false, true, false, false};
  throw ConfigError("stage", "must be 0 or 1");
}

PolicyParams init_params(const PolicyDims& dims, std::uint64_t seed) {
  PolicyParams p = PolicyParams::zeros(dims);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.embed_dim));
  for (auto blk : kAllBlocks) {
    Rng rng(derive_seed(seed, {21, static_cast<std::uint64_t>(blk)}));
    auto f = p.flat(blk);
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = rng.uniform(-0.1, 0.1) * scale;
  }
  return p;
}

namespace {

void check_features(const PolicyParams& p, const Eigen::VectorXd& x) {
  if (x.size() != p.dims.feature_dim)
    throw ConfigError("image_features", "dimension " + std::to_string(x.size()) + " does not match policy feature_dim " +
                                            std::to_string(p.dims.feature_dim));
}

void check_token(const PolicyParams& p, TokenId t) {
  if (t < 0 || t >= p.dims.vocab_size) throw ConfigError("tokens", "token id " + std::to_string(t) + " out of range");
}

/// Mean embedding of tokens[t-n .. t-1], <bos>-padded.
void context_mean(const PolicyParams& p, std::span<const TokenId> prefix, Eigen::Ref<Eigen::VectorXd> out) {
  const int n = p.dims.context;
  out.setZero();
  const auto len = static_cast<std::ptrdiff_t>(prefix.size());
  for (int j = 0; j < n; ++j) {
    const std::ptrdiff_t pos = len - n + j;
    const TokenId tok = pos >= 0 ? prefix[static_cast<std::size_t>(pos)] : Vocab::kBos;
    out += p.E.row(tok).transpose();
  }
  out /= static_cast<double>(n);
}

/// Logit offset shared by every position: W_v P x + b.
Eigen::VectorXd image_offset(const PolicyParams& p, const Eigen::VectorXd& v) {
  const int de = p.dims.embed_dim;
  return p.W.rightCols(de) * v + p.b;
}

struct SeqForward {
  Eigen::VectorXd v;      // P x
  Eigen::MatrixXd ctx;    // embed x T
  Eigen::MatrixXd probs;  // vocab x T
  std::vector<double> logp;
};

SeqForward forward_sequence(const PolicyParams& p, const TokenSeq& tokens, const Eigen::VectorXd& x) {
  check_features(p, x);
  const int de = p.dims.embed_dim;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  SeqForward f;
  f.v = p.P * x;
  f.ctx.resize(de, T);
  const std::span<const TokenId> all(tokens);
  for (Eigen::Index t = 0; t < T; ++t) {
    check_token(p, tokens[static_cast<std::size_t>(t)]);
    context_mean(p, all.first(static_cast<std::size_t>(t)), f.ctx.col(t));
  }
  const Eigen::VectorXd u = image_offset(p, f.v);
  f.probs.noalias() = p.W.leftCols(de) * f.ctx;
  f.probs.colwise() += u;
  f.logp.resize(tokens.size());
  for (Eigen::Index t = 0; t < T; ++t) {
    auto col = f.probs.col(t);
    const double mx = col.maxCoeff();
    const double lse = mx + std::log((col.array() - mx).exp().sum());
    f.logp[static_cast<std::size_t>(t)] = col[tokens[static_cast<std::size_t>(t)]] - lse;
    col = (col.array() - lse).exp();
  }
  return f;
}

int sample_from(const Eigen::VectorXd& logits, double temperature, Rng& rng) {
  Eigen::Index best = 0;
  const double mx = logits.maxCoeff(&best);
  if (temperature == 0.0) return static_cast<int>(best);
  const Eigen::VectorXd w = ((logits.array() - mx) / temperature).exp();
  const double u = rng.uniform() * w.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(w.size() - 1);
}

TokenSeq rollout(const PolicyParams& p, const Eigen::VectorXd& x, int max_tokens, double temperature, Rng& rng) {
  const int de = p.dims.embed_dim;
  const Eigen::VectorXd u = image_offset(p, p.P * x);
  Eigen::VectorXd c(de);
  TokenSeq out;
  while (static_cast<int>(out.size()) < max_tokens) {
    context_mean(p, out, c);
    const Eigen::VectorXd logits = p.W.leftCols(de) * c + u;
    const TokenId tok = sample_from(logits, temperature, rng);
    out.push_back(tok);
    if (tok == Vocab::kReportClose || tok == Vocab::kEos) break;
  }
  return out;
}

}  // namespace

Eigen::VectorXd forward_logits(const PolicyParams& p, std::span<const TokenId> context,
                               const Eigen::VectorXd& x) {
  check_features(p, x);
  for (auto t : context) check_token(p, t);
  const int de = p.dims.embed_dim;
  Eigen::VectorXd c(de);
  context_mean(p, context, c);
  Eigen::VectorXd h(2 * de);
  h << c, p.P * x;
  return p.W * h + p.b;
}

std::vector<double> sequence_logprobs(const PolicyParams& p, const TokenSeq& tokens, const Eigen::VectorXd& x) {
  return forward_sequence(p, tokens, x).logp;
}

CandidateGroup sample_group(const PolicyParams& p, const CaseRecord& c, const SampleOptions& opts,
                            std::uint64_t stream_seed) {
  if (opts.group_size < 2) throw GroupSizeError("group size must be at least 2");
  if (!(opts.temperature >= 0.0)) throw ConfigError("temperature", "must be nonnegative");
  if (opts.max_tokens < 1) throw ConfigError("max_tokens", "must be positive");
  check_features(p, c.image_features);
  CandidateGroup g;
  g.case_id = c.case_id;
  for (int i = 0; i < opts.group_size; ++i) {
    Rng rng(derive_seed(stream_seed, {static_cast<std::uint64_t>(i)}));
    g.candidates.push_back(rollout(p, c.image_features, opts.max_tokens, opts.temperature, rng));
    g.logprobs_old.push_back(sequence_logprobs(p, g.candidates.back(), c.image_features));
  }
  return g;
}

TokenSeq greedy_decode(const PolicyParams& p, const Eigen::VectorXd& x, int max_tokens) {
  check_features(p, x);
  Rng unused(0);
  return rollout(p, x, max_tokens, 0.0, unused);
}

ObjectiveResult grad_objective(const PolicyParams& p, const ParamMask& mask,
                               std::span<const SequenceInput> sequences, const TokenObjective& objective) {
  std::vector<SeqForward> fwd;
  fwd.reserve(sequences.size());
  std::vector<std::vector<double>> logp, dlogp;
  for (const auto& s : sequences) {
    fwd.push_back(forward_sequence(p, *s.tokens, *s.features));
    logp.push_back(fwd.back().logp);
    dlogp.emplace_back(s.tokens->size(), 0.0);
  }
  ObjectiveResult r;
  r.loss = objective(logp, dlogp);
  if (!std::isfinite(r.loss)) throw NumericalError("loss", "objective value is not finite");
  r.grad = PolicyParams::zeros(p.dims);

  const int de = p.dims.embed_dim;
  const int n = p.dims.context;
  const auto Wc = p.W.leftCols(de);
  const auto Wv = p.W.rightCols(de);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const TokenSeq& tokens = *sequences[s].tokens;
    const Eigen::VectorXd& x = *sequences[s].features;
    SeqForward& f = fwd[s];
    if (dlogp[s].size() != tokens.size()) throw std::logic_error("objective resized dlogp");
    // dZ = dlogp_t (onehot - p_t), formed in place over the probability matrix
    Eigen::MatrixXd& dz = f.probs;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto col = static_cast<Eigen::Index>(t);
      const double g = dlogp[s][t];
      dz.col(col) *= -g;
      dz(tokens[t], col) += g;
    }
    const Eigen::VectorXd dz_sum = dz.rowwise().sum();
    if (mask.bias) r.grad.b += dz_sum;
    if (mask.output) {
      r.grad.W.leftCols(de).noalias() += dz * f.ctx.transpose();
      r.grad.W.rightCols(de).noalias() += dz_sum * f.v.transpose();
    }
    if (mask.vision) r.grad.P.noalias() += (Wv.transpose() * dz_sum) * x.transpose();
    if (mask.embeddings) {
      const Eigen::MatrixXd dctx = (Wc.transpose() * dz) / static_cast<double>(n);
      const auto len = static_cast<std::ptrdiff_t>(tokens.size());
      for (std::ptrdiff_t t = 0; t < len; ++t) {
        for (int j = 0; j < n; ++j) {
          const std::ptrdiff_t pos = t - n + j;
          const TokenId tok = pos >= 0 ? tokens[static_cast<std::size_t>(pos)] : Vocab::kBos;
          r.grad.E.row(tok) += dctx.col(t).transpose();
        }
      }
    }
  }
  for (auto blk : kAllBlocks)
    if (!r.grad.flat(blk).allFinite())
      throw NumericalError(block_name(blk), "gradient has non-finite entries");
  return r;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'R', 'R', 'G', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw LoadError("truncated checkpoint header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

template <typename Mat>
void put_row_major(std::ostream& out, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

template <typename Mat>
void get_row_major(std::istream& in, Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std::bit_cast<double>(get_u64(in));
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const PolicyParams& p, const CheckpointMeta& meta) {
  const nlohmann::json header{
      {"format_version", meta.format_version},
      {"dims",
       {{"vocab_size", p.dims.vocab_size},
        {"embed_dim", p.dims.embed_dim},
        {"feature_dim", p.dims.feature_dim},
        {"context", p.dims.context}}},
      {"stage", meta.stage},
      {"step", meta.step},
      {"seed", meta.seed},
      {"label", meta.label},
      {"arrays", {"E", "P", "W", "b"}}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_row_major(out, p.E);
  put_row_major(out, p.P);
  put_row_major(out, p.W);
  put_row_major(out, p.b);
  if (!out) throw LoadError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const PolicyDims* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw LoadError(path.string() + ": not a checkpoint file");
  const std::uint64_t len = get_u64(in);
  if (len > (1u << 20)) throw LoadError(path.string() + ": implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw LoadError("truncated checkpoint header");

  Checkpoint ck;
  try {
    const auto h = nlohmann::json::parse(text);
    ck.meta.format_version = h.at("format_version").get<int>();
    if (ck.meta.format_version != 1)
      throw LoadError(path.string() + ": unsupported format version " + std::to_string(ck.meta.format_version));
    const auto& d = h.at("dims");
    PolicyDims dims{d.at("vocab_size").get<int>(), d.at("embed_dim").get<int>(), d.at("feature_dim").get<int>(),
                    d.at("context").get<int>()};
    dims.validate();
    if (expected && !(dims == *expected))
      throw LoadError(path.string() + ": checkpoint dims (vocab " + std::to_string(dims.vocab_size) + ", feature " +
                      std::to_string(dims.feature_dim) + ") do not match expected (vocab " +
                      std::to_string(expected->vocab_size) + ", feature " + std::to_string(expected->feature_dim) + ")");
    ck.meta.stage = h.at("stage").get<int>();
    ck.meta.step = h.at("step").get<long>();
    ck.meta.seed = h.at("seed").get<std::uint64_t>();
    ck.meta.label = h.value("label", "");
    ck.params = PolicyParams::zeros(dims);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  get_row_major(in, ck.params.E);
  get_row_major(in, ck.params.P);
  get_row_major(in, ck.params.W);
  get_row_major(in, ck.params.b);
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError(path.string() + ": trailing bytes after arrays");
  return ck;
}

}  // namespace rrg
