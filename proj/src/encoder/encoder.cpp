#include "mexma/encoder/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mexma/tensor/ops.hpp"

namespace mexma::encoder {

namespace ops = mexma::tensor;

void validate(const EncoderConfig& c) {
  if (c.num_layers == 0) throw ConfigError("num_layers must be positive");
  if (c.num_heads == 0) throw ConfigError("num_heads must be positive");
  if (c.model_dim == 0 || c.model_dim % c.num_heads != 0)
    throw ConfigError("model_dim (" + std::to_string(c.model_dim) +
                      ") must be a positive multiple of num_heads (" +
                      std::to_string(c.num_heads) + ")");
  if (c.ff_dim == 0) throw ConfigError("ff_dim must be positive");
  if (c.max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  const TokenId ids[] = {c.special.pad, c.special.cls, c.special.eos, c.special.mask,
                         c.special.unk};
  for (std::size_t i = 0; i < 5; ++i) {
    if (ids[i] >= c.vocab_size)
      throw ConfigError("special token id " + std::to_string(ids[i]) + " must be below vocab_size " +
                        std::to_string(c.vocab_size));
    for (std::size_t j = 0; j < i; ++j)
      if (ids[i] == ids[j])
        throw ConfigError("special token ids must be distinct (id " + std::to_string(ids[i]) +
                          " repeats)");
  }
  if (!(c.init_std > 0.0)) throw ConfigError("init_std must be positive");
}

template <typename T>
EncoderParams<T> init_params(const EncoderConfig& config) {
  validate(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  auto randn = [&](Shape s) {
    auto a = Array<T>::zeros(std::move(s));
    for (auto& v : a.values) v = static_cast<T>(normal(rng));
    return a;
  };
  EncoderParams<T> p;
  p.token_embedding = randn({config.vocab_size, config.model_dim});
  p.positional = randn({config.max_seq_len, config.model_dim});
  for (std::size_t l = 0; l < config.num_layers; ++l)
    p.layers.push_back(init_block<T>(config.model_dim, config.ff_dim, config.init_std, rng));
  p.final_gain = Array<T>::filled({config.model_dim}, T(1));
  p.final_bias = Array<T>::zeros({config.model_dim});
  return p;
}

TokenBatch TokenBatch::from_rows(std::span<const std::vector<TokenId>> rows, TokenId pad) {
  TokenBatch b;
  b.batch = rows.size();
  for (const auto& r : rows) b.length = std::max(b.length, r.size());
  b.ids.assign(b.batch * b.length, pad);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.length));
    b.lengths.push_back(rows[i].size());
  }
  return b;
}

void validate_tokens(const EncoderConfig& c, const TokenBatch& t) {
  if (t.batch == 0 || t.length == 0) throw InputError("empty token batch");
  if (t.ids.size() != t.batch * t.length || t.lengths.size() != t.batch)
    throw InputError("token batch dimensions are inconsistent");
  if (t.length > c.max_seq_len)
    throw InputError("sequence length " + std::to_string(t.length) + " exceeds max_seq_len " +
                     std::to_string(c.max_seq_len));
  for (std::size_t b = 0; b < t.batch; ++b) {
    if (t.lengths[b] == 0 || t.lengths[b] > t.length)
      throw InputError("row " + std::to_string(b) + " has invalid length");
    if (t.at(b, 0) != c.special.cls)
      throw InputError("row " + std::to_string(b) + " does not start with the CLS id");
    for (std::size_t p = 0; p < t.length; ++p) {
      const TokenId id = t.at(b, p);
      if (id >= c.vocab_size)
        throw InputError("row " + std::to_string(b) + " position " + std::to_string(p) +
                         ": id " + std::to_string(id) + " out of range");
      const bool in_body = p < t.lengths[b];
      if (in_body && id == c.special.pad)
        throw InputError("row " + std::to_string(b) + ": padding is not a contiguous suffix");
      if (!in_body && id != c.special.pad)
        throw InputError("row " + std::to_string(b) + ": non-pad id after the padding suffix");
    }
  }
}

std::vector<std::uint8_t> key_padding_mask(std::span<const std::size_t> lengths,
                                           std::size_t length, std::size_t heads) {
  std::vector<std::uint8_t> mask(lengths.size() * heads * length * length, 0);
  std::size_t o = 0;
  for (auto len : lengths)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t q = 0; q < length; ++q, o += length)
        for (std::size_t k = len; k < length; ++k) mask[o + k] = 1;
  return mask;
}

template <typename T>
Tensor<T> layer_norm_affine(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  return ops::add(ops::mul(ops::layer_norm(x, -1, T(1e-5)), gain), bias);
}

namespace {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return ops::add(ops::matmul(x, w), b);
}

// (batch*length, dim) -> (batch*heads, length, head_dim)
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t batch, std::size_t length,
                      std::size_t heads, std::size_t head_dim) {
  auto y = ops::reshape(x, {batch, length, heads, head_dim});
  y = ops::transpose(y, {0, 2, 1, 3});
  return ops::reshape(y, {batch * heads, length, head_dim});
}

}  // namespace

template <typename T>
Tensor<T> transformer_block(const BlockWeights<Tensor<T>>& w, const Tensor<T>& x,
                            std::span<const std::uint8_t> key_mask, std::size_t heads,
                            Array<T>* attention_out) {
  const std::size_t batch = x.dim(0), length = x.dim(1), dim = x.dim(2);
  const std::size_t head_dim = dim / heads;

  auto h = ops::reshape(layer_norm_affine(x, w.ln1_gain, w.ln1_bias), {batch * length, dim});
  auto q = split_heads(linear(h, w.wq, w.bq), batch, length, heads, head_dim);
  auto k = split_heads(ops::matmul(h, w.wk), batch, length, heads, head_dim);
  auto v = split_heads(linear(h, w.wv, w.bv), batch, length, heads, head_dim);

  auto scores = ops::scale(ops::matmul(q, k, false, true), T(1) / std::sqrt(static_cast<T>(head_dim)));
  scores = ops::masked_fill(scores, key_mask, -std::numeric_limits<T>::infinity());
  auto probs = ops::softmax(scores, -1);
  if (attention_out) {
    *attention_out = probs.to_array();
    attention_out->shape = {batch, heads, length, length};
  }
  auto ctx = ops::reshape(ops::matmul(probs, v), {batch, heads, length, head_dim});
  ctx = ops::reshape(ops::transpose(ctx, {0, 2, 1, 3}), {batch * length, dim});
  auto attended = ops::reshape(linear(ctx, w.wo, w.bo), {batch, length, dim});
  auto x1 = ops::add(x, attended);

  auto h2 = ops::reshape(layer_norm_affine(x1, w.ln2_gain, w.ln2_bias), {batch * length, dim});
  auto ff = linear(ops::gelu(linear(h2, w.ff1_weight, w.ff1_bias)), w.ff2_weight, w.ff2_bias);
  return ops::add(x1, ops::reshape(ff, {batch, length, dim}));
}

template <typename T>
EncodedBatch<T> encode(const EncoderWeights<Tensor<T>>& weights, const EncoderConfig& config,
                       const TokenBatch& tokens, bool capture_attention) {
  validate_tokens(config, tokens);
  const std::size_t batch = tokens.batch, length = tokens.length, dim = config.model_dim;

  std::vector<std::size_t> rows(tokens.ids.begin(), tokens.ids.end());
  auto x = ops::reshape(ops::gather_rows(weights.token_embedding, std::span<const std::size_t>(rows)),
                        {batch, length, dim});
  std::vector<std::size_t> positions(length);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  x = ops::add(x, ops::gather_rows(weights.positional, std::span<const std::size_t>(positions)));

  const auto mask = key_padding_mask(tokens.lengths, length, config.num_heads);
  EncodedBatch<T> out;
  for (const auto& layer : weights.layers) {
    Array<T> probs;
    x = transformer_block(layer, x, mask, config.num_heads, capture_attention ? &probs : nullptr);
    if (capture_attention) out.attention.push_back(std::move(probs));
  }
  out.hidden = layer_norm_affine(x, weights.final_gain, weights.final_bias);
  out.sentence = ops::reshape(ops::slice(out.hidden, 1, 0, 1), {batch, dim});
  out.lengths = tokens.lengths;
  out.length = length;
  return out;
}

template <typename T>
Tensor<T> pool_mean(const EncodedBatch<T>& encoded) {
  const std::size_t batch = encoded.hidden.dim(0), length = encoded.hidden.dim(1),
                    dim = encoded.hidden.dim(2);
  std::vector<Tensor<T>> rows;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = encoded.lengths[b];
    if (len < 2)
      throw InputError("pool_mean: sentence " + std::to_string(b) + " has no tokens after CLS");
    auto states = ops::reshape(ops::slice(encoded.hidden, 0, b, 1), {length, dim});
    auto body = ops::slice(states, 0, 1, len - 1);
    rows.push_back(ops::reshape(ops::mean(body, 0), {1, dim}));
  }
  return ops::concat(std::span<const Tensor<T>>(rows), 0);
}

#define MEXMA_INSTANTIATE_ENCODER(T)                                                        \
  template EncoderParams<T> init_params<T>(const EncoderConfig&);                           \
  template Tensor<T> layer_norm_affine<T>(const Tensor<T>&, const Tensor<T>&,               \
                                          const Tensor<T>&);                                \
  template Tensor<T> transformer_block<T>(const BlockWeights<Tensor<T>>&, const Tensor<T>&, \
                                          std::span<const std::uint8_t>, std::size_t,       \
                                          Array<T>*);                                       \
  template EncodedBatch<T> encode<T>(const EncoderWeights<Tensor<T>>&, const EncoderConfig&, \
                                     const TokenBatch&, bool);                              \
  template Tensor<T> pool_mean<T>(const EncodedBatch<T>&);

MEXMA_INSTANTIATE_ENCODER(float)
MEXMA_INSTANTIATE_ENCODER(double)

#undef MEXMA_INSTANTIATE_ENCODER

}  // namespace mexma::encoder
