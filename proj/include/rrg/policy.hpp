#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rrg/corpus.hpp"
#include "rrg/lexicon.hpp"

namespace rrg {

struct PolicyDims {
  int vocab_size = 0;
  int embed_dim = 16;
  int feature_dim = 32;
  int context = 3;

  void validate() const;
  bool operator==(const PolicyDims&) const = default;
};

enum class Block { Embeddings, Vision, Output, Bias };
inline constexpr std::array<Block, 4> kAllBlocks = {Block::Embeddings, Block::Vision, Block::Output,
                                                    Block::Bias};
const char* block_name(Block b);       // "E", "P", "W", "b"
const char* block_partition(Block b);  // "language" or "vision"

/// Learnable tensors. Logits for a context window with mean embedding c and
/// image features x are W [c; P x] + b.
struct PolicyParams {
  PolicyDims dims;
  Eigen::MatrixXd E;  // vocab x embed
  Eigen::MatrixXd P;  // embed x feature (vision projection)
  Eigen::MatrixXd W;  // vocab x 2 embed
  Eigen::VectorXd b;  // vocab

  static PolicyParams zeros(const PolicyDims& dims);

  Eigen::Map<Eigen::VectorXd> flat(Block b);
  Eigen::Map<const Eigen::VectorXd> flat(Block b) const;
  Eigen::Index num_params() const;
  bool all_finite() const;

  /// Exact (bitwise) equality of dims and every entry.
  bool operator==(const PolicyParams& other) const;
};

struct ParamMask {
  bool embeddings = true;
  bool vision = true;
  bool output = true;
  bool bias = true;

  bool trainable(Block b) const;
  bool any() const { return embeddings || vision || output || bias; }
  bool operator==(const ParamMask&) const = default;
};

/// Stage 0 trains every block; stage 1 trains only the vision projection.
ParamMask stage_mask(int stage);

/// U[-0.1, 0.1] / sqrt(embed_dim), deterministic in seed.
PolicyParams init_params(const PolicyDims& dims, std::uint64_t seed);

/// Logits for the next token. `context` holds the preceding tokens; only the
/// last dims.context are used and missing slots are <bos>.
Eigen::VectorXd forward_logits(const PolicyParams& params, std::span<const TokenId> context,
                               const Eigen::VectorXd& image_features);

/// log pi(tokens[t] | tokens[<t], x) for every position.
std::vector<double> sequence_logprobs(const PolicyParams& params, const TokenSeq& tokens,
                                      const Eigen::VectorXd& image_features);

struct SampleOptions {
  int group_size = 8;
  int max_tokens = 64;
  double temperature = 1.0;  // 0 selects greedy argmax decoding
};

struct CandidateGroup {
  std::string case_id;
  std::vector<TokenSeq> candidates;
  std::vector<std::vector<double>> logprobs_old;  // policy log-probs at sampling time
  int size() const { return static_cast<int>(candidates.size()); }
};

/// G ancestral samples; each stops after </report> or <eos>, or at max_tokens.
/// Candidate i draws from its own stream derived from (stream_seed, i).
CandidateGroup sample_group(const PolicyParams& params, const CaseRecord& c, const SampleOptions& opts,
                            std::uint64_t stream_seed);

/// Greedy decode of one report.
TokenSeq greedy_decode(const PolicyParams& params, const Eigen::VectorXd& image_features, int max_tokens);

struct SequenceInput {
  const TokenSeq* tokens;
  const Eigen::VectorXd* features;
};

/// Objective defined through per-token log-probabilities. Receives
/// logprobs[s][t] and must fill dlogp[s][t] = dLoss/dlogprob; returns the loss.
using TokenObjective = std::function<double(const std::vector<std::vector<double>>& logprobs,
                                            std::vector<std::vector<double>>& dlogp)>;

struct ObjectiveResult {
  double loss = 0.0;
  PolicyParams grad;  // zero on masked blocks
};

/// Exact gradient of a token-level objective through the softmax policy.
/// Throws NumericalError naming the block when a gradient is not finite.
ObjectiveResult grad_objective(const PolicyParams& params, const ParamMask& mask,
                               std::span<const SequenceInput> sequences, const TokenObjective& objective);

struct CheckpointMeta {
  int format_version = 1;
  int stage = -1;  // -1 for the SFT checkpoint
  long step = 0;
  std::uint64_t seed = 0;
  std::string label;
};

/// Layout: 8-byte magic "RRGCKPT1", little-endian u64 header length, JSON
/// header, then E, P, W, b as little-endian float64 in row-major order.
void write_checkpoint(const std::filesystem::path& path, const PolicyParams& params, const CheckpointMeta& meta);

struct Checkpoint {
  PolicyParams params;
  CheckpointMeta meta;
};

/// Validates the header dims (and, when given, that they equal `expected`)
/// before reading the arrays. Throws LoadError.
Checkpoint read_checkpoint(const std::filesystem::path& path, const PolicyDims* expected = nullptr);

}  // namespace rrg
