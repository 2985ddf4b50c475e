#include "mexma/objectives/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mexma::objectives {

MaskScheme parse_mask_scheme(std::string_view name) {
  if (name == "all-mask") return MaskScheme::AllMask;
  if (name == "bert-style") return MaskScheme::BertStyle;
  throw std::invalid_argument("unknown mask scheme '" + std::string(name) +
                              "' (expected all-mask or bert-style)");
}

std::string_view to_string(MaskScheme scheme) {
  return scheme == MaskScheme::AllMask ? "all-mask" : "bert-style";
}

void validate(const MaskingPolicy& policy) {
  if (!(policy.ratio >= 0.0 && policy.ratio <= 1.0))
    throw std::invalid_argument("mask ratio must lie in [0, 1], got " + std::to_string(policy.ratio));
}

MaskedRow mask_tokens(const std::vector<TokenId>& row, const MaskingPolicy& policy,
                      const SpecialTokens& special, std::size_t vocab_size,
                      TokenId first_content_id, std::mt19937_64& rng) {
  validate(policy);
  MaskedRow out{row, {}, {}};
  std::vector<std::size_t> maskable;
  for (std::size_t p = 0; p < row.size(); ++p)
    if (!special.is_special(row[p])) maskable.push_back(p);
  const auto count = static_cast<std::size_t>(std::lround(policy.ratio * static_cast<double>(maskable.size())));
  if (count == 0) return out;

  // Partial Fisher-Yates: the first `count` entries become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, maskable.size() - 1);
    std::swap(maskable[i], maskable[pick(rng)]);
  }
  out.positions.assign(maskable.begin(), maskable.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(out.positions.begin(), out.positions.end());

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_id(first_content_id,
                                                   static_cast<TokenId>(vocab_size - 1));
  for (auto p : out.positions) {
    out.targets.push_back(row[p]);
    if (policy.scheme == MaskScheme::AllMask) {
      out.tokens[p] = special.mask;
      continue;
    }
    const double u = unit(rng);
    if (u < 0.8)
      out.tokens[p] = special.mask;
    else if (u < 0.9)
      out.tokens[p] = random_id(rng);
  }
  return out;
}

}  // namespace mexma::objectives
