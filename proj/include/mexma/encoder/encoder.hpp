#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mexma/encoder/config.hpp"
#include "mexma/encoder/weights.hpp"

namespace mexma::encoder {

template <typename T>
using EncoderParams = EncoderWeights<Array<T>>;

// Deterministic from config.seed. Throws ConfigError on an invalid config.
template <typename T>
EncoderParams<T> init_params(const EncoderConfig& config);

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Row-major id matrix; each row is CLS, tokens, then a contiguous pad suffix.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> ids;
  std::vector<std::size_t> lengths;  // non-pad count per row

  TokenId at(std::size_t row, std::size_t pos) const { return ids[row * length + pos]; }

  // Pads ragged rows to the longest one.
  static TokenBatch from_rows(std::span<const std::vector<TokenId>> rows, TokenId pad);
};

// Checks ids against the config: range, leading CLS, suffix-only padding, max length.
void validate_tokens(const EncoderConfig& config, const TokenBatch& tokens);

// Key-padding mask broadcast to (batch * heads, length, length); 1 marks a padded key.
std::vector<std::uint8_t> key_padding_mask(std::span<const std::size_t> lengths,
                                           std::size_t length, std::size_t heads);

template <typename T>
struct EncodedBatch {
  Tensor<T> hidden;    // batch x length x dim
  Tensor<T> sentence;  // batch x dim, the last-layer CLS state
  std::vector<Array<T>> attention;  // per layer, batch x heads x length x length (if captured)
  std::vector<std::size_t> lengths;
  std::size_t length = 0;
};

// x + attention(ln(x)), then x + ff(ln(x)); x is (batch, length, dim).
template <typename T>
Tensor<T> transformer_block(const BlockWeights<Tensor<T>>& w, const Tensor<T>& x,
                            std::span<const std::uint8_t> key_mask, std::size_t heads,
                            Array<T>* attention_out);

template <typename T>
Tensor<T> layer_norm_affine(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias);

template <typename T>
EncodedBatch<T> encode(const EncoderWeights<Tensor<T>>& weights, const EncoderConfig& config,
                       const TokenBatch& tokens, bool capture_attention = false);

// Mean of hidden states over non-pad positions after CLS, one row per sentence.
template <typename T>
Tensor<T> pool_mean(const EncodedBatch<T>& encoded);

}  // namespace mexma::encoder
