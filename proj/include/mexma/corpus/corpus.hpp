#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mexma/encoder/config.hpp"

namespace mexma::corpus {

using encoder::SpecialTokens;
using encoder::TokenId;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Surface form <-> id table. The five specials always hold ids 0..4.
class Vocab {
 public:
  Vocab();

  // Returns the existing id or appends a new one.
  TokenId add(std::string_view form);
  std::optional<TokenId> find(std::string_view form) const;
  TokenId id_or_unk(std::string_view form) const;
  const std::string& form(TokenId id) const;
  std::size_t size() const { return forms_.size(); }
  const SpecialTokens& special() const { return special_; }
  TokenId first_content_id() const { return 5; }

  // One form per line, in id order.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return forms_ == other.forms_; }

 private:
  SpecialTokens special_;
  std::vector<std::string> forms_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct ParallelPair {
  std::uint64_t id = 0;
  std::vector<TokenId> source;  // language A, CLS ... EOS
  std::vector<TokenId> target;  // language B, CLS ... EOS
  // alignment[p] = target position aligned with source position p, -1 for none.
  // Empty when unknown (ingested data).
  std::vector<std::int32_t> alignment;
};

// Row with CLS and EOS around the given content; unknown forms map to unk.
std::vector<TokenId> tokenize(std::string_view sentence, const Vocab& vocab);
// Content forms joined by single spaces; specials are dropped.
std::string detokenize(std::span<const TokenId> row, const Vocab& vocab);

// ---------------------------------------------------------------------------
// synthetic cipher languages

enum class Reorder { None, AdjacentSwap };

Reorder parse_reorder(std::string_view name);
std::string_view to_string(Reorder reorder);

struct SyntheticSpec {
  std::size_t content_vocab = 200;
  double zipf_exponent = 1.0;
  std::size_t min_length = 4;  // content tokens per sentence
  std::size_t max_length = 12;
  std::uint64_t bijection_seed = 1;
  Reorder reorder = Reorder::None;
  double swap_probability = 0.0;
  std::uint64_t corpus_seed = 0;

  bool operator==(const SyntheticSpec&) const = default;
};

void validate(const SyntheticSpec& spec);

struct SyntheticCorpus {
  Vocab vocab;
  std::vector<ParallelPair> pairs;
  // Content index i of language A maps to content index bijection[i] of language B.
  std::vector<std::size_t> bijection;
  TokenId first_a = 0, first_b = 0;
  std::size_t content_vocab = 0;

  bool is_a(TokenId id) const { return id >= first_a && id < first_a + content_vocab; }
  bool is_b(TokenId id) const { return id >= first_b && id < first_b + content_vocab; }
  // A content id -> its B translation, and back.
  TokenId translate(TokenId a) const;
  TokenId untranslate(TokenId b) const;
};

// Language A ids are "a0".."a{V-1}" by frequency rank, language B ids "b0".."b{V-1}".
// Base sentences are distinct; the generator throws if it cannot find n of them.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::size_t n);

// ---------------------------------------------------------------------------
// TSV files

struct IngestReport {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  std::size_t malformed = 0;
  std::size_t over_length = 0;
  std::vector<std::string> messages;  // "line N: ..."
};

struct IngestResult {
  Vocab vocab;
  std::vector<ParallelPair> pairs;  // pair id = 1-based line number
  IngestReport report;
};

// Builds a vocab in order of first appearance, or maps through `fixed` when given.
// Rows longer than max_seq_len (including CLS and EOS) are skipped and counted.
IngestResult ingest_tsv(const std::filesystem::path& path, std::size_t max_seq_len,
                        const Vocab* fixed = nullptr);

void write_tsv(const std::filesystem::path& path, std::span<const ParallelPair> pairs,
               const Vocab& vocab);

std::string spec_to_json(const SyntheticSpec& spec, std::size_t n);
SyntheticSpec spec_from_json(const std::string& text, std::size_t* n = nullptr);

// ---------------------------------------------------------------------------
// splits and hard negatives

struct CorpusSplit {
  std::vector<ParallelPair> train, dev, test;
};

// Consecutive slices after a seeded shuffle; disjoint by pair id.
CorpusSplit split_corpus(std::vector<ParallelPair> pairs, std::size_t dev, std::size_t test,
                         std::uint64_t seed);

// Replaces one content position with a different id drawn uniformly from
// [first_content, first_content + content_count).
std::vector<TokenId> make_hard_negative(std::span<const TokenId> sentence,
                                        const SpecialTokens& special, TokenId first_content,
                                        std::size_t content_count, std::mt19937_64& rng);

}  // namespace mexma::corpus
