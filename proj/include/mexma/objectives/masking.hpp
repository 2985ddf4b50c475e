#pragma once

#include <cstddef>
#include <random>
#include <string_view>
#include <vector>

#include "mexma/encoder/config.hpp"

namespace mexma::objectives {

using encoder::SpecialTokens;
using encoder::TokenId;

enum class MaskScheme { AllMask, BertStyle };

MaskScheme parse_mask_scheme(std::string_view name);
std::string_view to_string(MaskScheme scheme);

struct MaskingPolicy {
  double ratio = 0.4;
  MaskScheme scheme = MaskScheme::AllMask;

  bool operator==(const MaskingPolicy&) const = default;
};

// Throws std::invalid_argument unless 0 <= ratio <= 1.
void validate(const MaskingPolicy& policy);

struct MaskedRow {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> positions;  // ascending
  std::vector<TokenId> targets;        // original ids at `positions`
};

// Masks exactly round(ratio * maskable) non-special positions chosen uniformly without
// replacement. Bert-style replacement draws random ids from [first_content_id, vocab_size).
MaskedRow mask_tokens(const std::vector<TokenId>& row, const MaskingPolicy& policy,
                      const SpecialTokens& special, std::size_t vocab_size,
                      TokenId first_content_id, std::mt19937_64& rng);

}  // namespace mexma::objectives
