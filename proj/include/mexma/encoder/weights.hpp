#pragma once

// Parameter layout of the encoder. The same templates describe stored values
// (Array<T>) and their graph-bound counterparts (Tensor<T>).

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mexma/tensor/graph.hpp"

namespace mexma::encoder {

using tensor::Array;
using tensor::Graph;
using tensor::Shape;
using tensor::Tensor;

// Pre-layer-norm transformer block.
template <typename P>
struct BlockWeights {
  P ln1_gain, ln1_bias;
  P wq, bq, wk, wv, bv, wo, bo;  // no key bias: softmax cancels it
  P ln2_gain, ln2_bias;
  P ff1_weight, ff1_bias, ff2_weight, ff2_bias;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "ln1.gain", self.ln1_gain);
    f(prefix + "ln1.bias", self.ln1_bias);
    f(prefix + "attn.wq", self.wq);
    f(prefix + "attn.bq", self.bq);
    f(prefix + "attn.wk", self.wk);
    f(prefix + "attn.wv", self.wv);
    f(prefix + "attn.bv", self.bv);
    f(prefix + "attn.wo", self.wo);
    f(prefix + "attn.bo", self.bo);
    f(prefix + "ln2.gain", self.ln2_gain);
    f(prefix + "ln2.bias", self.ln2_bias);
    f(prefix + "ff1.weight", self.ff1_weight);
    f(prefix + "ff1.bias", self.ff1_bias);
    f(prefix + "ff2.weight", self.ff2_weight);
    f(prefix + "ff2.bias", self.ff2_bias);
  }
};

template <typename P>
struct EncoderWeights {
  P token_embedding;  // vocab x dim
  P positional;       // max_len x dim
  std::vector<BlockWeights<P>> layers;
  P final_gain, final_bias;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "token_embedding", self.token_embedding);
    f(prefix + "positional", self.positional);
    for (std::size_t i = 0; i < self.layers.size(); ++i)
      BlockWeights<P>::visit(self.layers[i], prefix + "layers." + std::to_string(i) + ".", f);
    f(prefix + "final_ln.gain", self.final_gain);
    f(prefix + "final_ln.bias", self.final_bias);
  }
};

// Fresh block: linear weights ~ N(0, std), biases 0, layer-norm gains 1.
template <typename T>
BlockWeights<Array<T>> init_block(std::size_t dim, std::size_t ff_dim, double std,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  auto randn = [&](Shape s) {
    auto a = Array<T>::zeros(std::move(s));
    for (auto& v : a.values) v = static_cast<T>(normal(rng));
    return a;
  };
  BlockWeights<Array<T>> b;
  b.ln1_gain = Array<T>::filled({dim}, T(1));
  b.ln1_bias = Array<T>::zeros({dim});
  b.wq = randn({dim, dim});
  b.bq = Array<T>::zeros({dim});
  b.wk = randn({dim, dim});
  b.wv = randn({dim, dim});
  b.bv = Array<T>::zeros({dim});
  b.wo = randn({dim, dim});
  b.bo = Array<T>::zeros({dim});
  b.ln2_gain = Array<T>::filled({dim}, T(1));
  b.ln2_bias = Array<T>::zeros({dim});
  b.ff1_weight = randn({dim, ff_dim});
  b.ff1_bias = Array<T>::zeros({ff_dim});
  b.ff2_weight = randn({ff_dim, dim});
  b.ff2_bias = Array<T>::zeros({dim});
  return b;
}

// Flat (name, pointer) view over any weight struct with a static visit().
template <typename W, typename P>
std::vector<std::pair<std::string, P*>> fields(W& w, const std::string& prefix = "") {
  std::vector<std::pair<std::string, P*>> out;
  W::visit(w, prefix, [&](const std::string& name, P& p) { out.emplace_back(name, &p); });
  return out;
}

template <typename W, typename P>
std::vector<std::pair<std::string, const P*>> fields(const W& w, const std::string& prefix = "") {
  std::vector<std::pair<std::string, const P*>> out;
  W::visit(w, prefix, [&](const std::string& name, const P& p) { out.emplace_back(name, &p); });
  return out;
}

// Registers every stored array as a graph leaf. `trainable` selects variable vs constant.
template <template <typename> class W, typename T>
W<Tensor<T>> bind(Graph<T>& g, const W<Array<T>>& stored, bool trainable) {
  W<Tensor<T>> bound;
  bound.layers.resize(stored.layers.size());
  auto dst = fields<W<Tensor<T>>, Tensor<T>>(bound);
  auto src = fields<W<Array<T>>, Array<T>>(stored);
  for (std::size_t i = 0; i < dst.size(); ++i)
    *dst[i].second = trainable ? g.variable(*src[i].second) : g.constant(*src[i].second);
  return bound;
}

}  // namespace mexma::encoder
