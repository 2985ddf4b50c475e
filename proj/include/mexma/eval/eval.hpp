#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mexma/corpus/corpus.hpp"
#include "mexma/encoder/encoder.hpp"

namespace mexma::eval {

using encoder::TokenId;

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// embeddings

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<float> matrix;  // row-major, size() x dim
  std::vector<std::uint64_t> ids;
  std::string language;  // optional tag

  std::size_t size() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {matrix.data() + i * dim, dim}; }

  // Row count matches ids and every entry is finite.
  void validate() const;
};

// "EMB1": magic, u32 rows, u32 dim, little-endian f32 rows. Ids go to `<path>.ids`,
// one per line. A missing sidecar on load means ids 0..rows-1.
void save_emb1(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_emb1(const std::filesystem::path& path);
std::filesystem::path ids_sidecar(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// mining

// Cosine of the L2-normalized vectors, in double. Throws EvalError on a zero vector.
double cosine(std::span<const float> x, std::span<const float> y);

// Mean cosine of x to its k most similar rows of `cands`, summed in descending order.
double neighborhood(std::span<const float> x, const EmbeddingSet& cands, std::size_t k);

// Ratio margin: cos(x, y) over the mean of x's neighborhood in cands_y and y's in cands_x.
double margin_score(std::span<const float> x, std::span<const float> y, const EmbeddingSet& cands_x,
                    const EmbeddingSet& cands_y, std::size_t k = 4);

struct QueryResult {
  std::uint64_t query_id = 0;
  std::uint64_t predicted_id = 0;
  std::uint64_t gold_id = 0;
  double margin = 0;
  bool hard_negative = false;  // the winning candidate was a perturbed copy
  bool correct() const { return !hard_negative && predicted_id == gold_id; }
};

struct MiningReport {
  double error_rate = 0;
  std::size_t errors = 0;
  std::size_t hard_negative_errors = 0;
  std::size_t k = 0;
  std::size_t pool_size = 0;
  std::vector<QueryResult> queries;
};

// Source id -> target id; must be a bijection between the two id sets.
using GoldMap = std::map<std::uint64_t, std::uint64_t>;

GoldMap identity_gold(const EmbeddingSet& src);

// Every source row predicts the target with the highest margin; ties go to the lowest
// pool index.
MiningReport xsim_error(const EmbeddingSet& src, const EmbeddingSet& tgt, const GoldMap& gold,
                        std::size_t k = 4);

// xsim_error over the target pool with `hard_negatives` appended after it. A hard
// negative's id names the target it perturbs.
MiningReport xsimpp_error(const EmbeddingSet& src, const EmbeddingSet& tgt,
                          const EmbeddingSet& hard_negatives, const GoldMap& gold,
                          std::size_t k = 4);

// ---------------------------------------------------------------------------
// model-facing analyses

enum class Pooling { Cls, Mean };
Pooling parse_pooling(std::string_view name);
std::string_view to_string(Pooling p);

// Sentences are encoded in chunks of `batch` rows; results do not depend on it.
EmbeddingSet encode_sentences(const encoder::EncoderParams<float>& params,
                              const encoder::EncoderConfig& config,
                              std::span<const std::vector<TokenId>> rows,
                              std::span<const std::uint64_t> ids, Pooling pooling,
                              std::size_t batch = 64);

struct MiningSides {
  EmbeddingSet src, tgt, hard_negatives;
};

// Content ids that a hard negative may substitute: [first, first + count).
struct ContentRange {
  TokenId first = 5;
  std::size_t count = 0;
};

// Embeds both sides of `pairs` and `per_target` perturbed copies of every target.
MiningSides embed_for_mining(const encoder::EncoderParams<float>& params,
                             const encoder::EncoderConfig& config,
                             std::span<const corpus::ParallelPair> pairs, Pooling pooling,
                             std::size_t per_target, ContentRange target_content,
                             std::mt19937_64& rng);

enum class TokenCategory { Translation, SameSentence, SameLanguage, Other };
std::string_view to_string(TokenCategory c);

struct TokenNeighbor {
  std::uint64_t pair_id = 0;
  bool target_side = false;
  std::size_t position = 0;
  TokenId token = 0;
  double cosine = 0;
  TokenCategory category = TokenCategory::Other;
};

struct TokenQuery {
  std::uint64_t pair_id = 0;
  std::size_t position = 0;
  TokenId token = 0;
  std::vector<TokenNeighbor> neighbors;
};

struct TokenMatchReport {
  double translation = 0, same_sentence = 0, same_language = 0, other = 0;  // percent
  std::size_t neighbor_count = 0;
  std::vector<TokenQuery> queries;
};

// Queries are sampled from source sentences; candidates are every non-special token of
// both sides except the query itself.
TokenMatchReport token_nn_analysis(const encoder::EncoderParams<float>& params,
                                   const encoder::EncoderConfig& config,
                                   std::span<const corpus::ParallelPair> pairs,
                                   std::size_t queries_per_sentence, std::size_t neighbors_k,
                                   std::mt19937_64& rng);

// Shannon entropy in nats; zero-probability terms contribute nothing.
double entropy_nats(std::span<const double> p);

// Entropy of one CLS attention row (already averaged over heads) restricted to the
// row's non-pad positions, optionally dropping special-token columns and renormalizing.
double cls_row_entropy(std::span<const double> row, std::span<const TokenId> tokens,
                       const encoder::SpecialTokens& special, bool exclude_specials);

struct AttentionReport {
  double mean_entropy = 0;
  std::vector<double> entropies;
  std::vector<std::size_t> attended;  // positions kept per sentence
  bool exclude_specials = false;
};

// Last layer, CLS query row, heads averaged before the entropy.
AttentionReport attention_entropy(const encoder::EncoderParams<float>& params,
                                  const encoder::EncoderConfig& config,
                                  std::span<const std::vector<TokenId>> sentences,
                                  bool exclude_specials);

struct PoolingReport {
  double cls_error = 0, mean_error = 0;
  double delta = 0;  // (mean - cls) / cls; 0 when both are 0, +inf when only cls is 0
};

double relative_delta(double cls_error, double mean_error);

PoolingReport pooling_ablation(const encoder::EncoderParams<float>& params,
                               const encoder::EncoderConfig& config,
                               std::span<const corpus::ParallelPair> pairs, std::size_t k = 4);

void export_embeddings(const encoder::EncoderParams<float>& params,
                       const encoder::EncoderConfig& config,
                       std::span<const std::vector<TokenId>> rows,
                       std::span<const std::uint64_t> ids, Pooling pooling,
                       const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// CSV

void write_mining_csv(const std::filesystem::path& path, const MiningReport& report);
void write_token_csv(const std::filesystem::path& path, const TokenMatchReport& report);
void write_attention_csv(const std::filesystem::path& path, const AttentionReport& report);

}  // namespace mexma::eval
