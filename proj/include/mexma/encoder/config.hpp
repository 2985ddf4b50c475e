#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mexma::encoder {

using TokenId = std::uint32_t;

struct SpecialTokens {
  TokenId pad = 0;
  TokenId cls = 1;  // also the sequence start; its last-layer state is the sentence vector
  TokenId eos = 2;
  TokenId mask = 3;
  TokenId unk = 4;

  bool is_special(TokenId id) const {
    return id == pad || id == cls || id == eos || id == mask || id == unk;
  }
  bool operator==(const SpecialTokens&) const = default;
};

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t model_dim = 64;
  std::size_t ff_dim = 256;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 32;
  SpecialTokens special;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  bool operator==(const EncoderConfig&) const = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Throws ConfigError naming the violated constraint.
void validate(const EncoderConfig& config);

}  // namespace mexma::encoder
