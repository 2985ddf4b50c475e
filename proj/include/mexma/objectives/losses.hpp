#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "mexma/encoder/encoder.hpp"

namespace mexma::objectives {

using encoder::Array;
using encoder::BlockWeights;
using encoder::EncodedBatch;
using encoder::EncoderConfig;
using encoder::Graph;
using encoder::Tensor;

class ObjectiveError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// configuration

enum class AlignmentMode { CleanToClean, CleanToDirty, None };
enum class AlignmentFamily { Mse, InfoNce };

AlignmentMode parse_alignment_mode(std::string_view name);
AlignmentFamily parse_alignment_family(std::string_view name);
std::string_view to_string(AlignmentMode mode);
std::string_view to_string(AlignmentFamily family);

// Switches selecting the architectural variants of the ablations.
struct GradFlowConfig {
  bool token_gradients = true;  // unmasking loss reaches the masked encoder through its tokens
  AlignmentMode alignment = AlignmentMode::CleanToClean;
  AlignmentFamily family = AlignmentFamily::Mse;
  bool koleo = true;
  bool symmetric = true;  // four encoder views instead of two
  double temperature = 0.05;

  bool operator==(const GradFlowConfig&) const = default;
};

// Throws ObjectiveError: clean-to-clean needs symmetric views; temperature must be positive.
void validate(const GradFlowConfig& flow);

struct LossWeights {
  double alpha = 1.0;    // alignment
  double beta = 0.5;     // unmasking
  double gamma = 0.005;  // koleo

  bool operator==(const LossWeights&) const = default;
};

void validate(const LossWeights& weights);

// ---------------------------------------------------------------------------
// unmasking head

template <typename P>
struct UnmaskHeadWeights {
  std::vector<BlockWeights<P>> layers;
  P final_gain, final_bias;
  P vocab_weight;  // dim x vocab
  P vocab_bias;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < self.layers.size(); ++i)
      BlockWeights<P>::visit(self.layers[i], prefix + "layers." + std::to_string(i) + ".", f);
    f(prefix + "final_ln.gain", self.final_gain);
    f(prefix + "final_ln.bias", self.final_bias);
    f(prefix + "vocab.weight", self.vocab_weight);
    f(prefix + "vocab.bias", self.vocab_bias);
  }
};

template <typename T>
using UnmaskHeadParams = UnmaskHeadWeights<Array<T>>;

// Shapes follow the encoder config; seeded independently of the encoder stream.
template <typename T>
UnmaskHeadParams<T> init_head(const EncoderConfig& config, std::size_t num_layers);

// Masked positions and their original ids, one entry per sentence.
struct MaskTargets {
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::vector<encoder::TokenId>> targets;

  std::size_t total() const;
};

// ---------------------------------------------------------------------------
// loss terms

// Cross-entropy over masked positions of [S_other, H_masked without CLS] run through the head.
template <typename T>
Tensor<T> cross_unmask_loss(const Tensor<T>& sentence_other, const EncodedBatch<T>& masked,
                            const MaskTargets& mask, const UnmaskHeadWeights<Tensor<T>>& head,
                            std::size_t num_heads, bool token_gradients);

template <typename T>
Tensor<T> alignment_mse(const Tensor<T>& a, const Tensor<T>& b);

// -(1/n) sum_i log(max(min_{j != i} ||x_i - x_j||, 1e-8)) on L2-normalized rows.
template <typename T>
Tensor<T> koleo(const Tensor<T>& sentences);

// Symmetric in-batch contrastive loss on cosine similarities scaled by 1/temperature.
template <typename T>
Tensor<T> infonce(const Tensor<T>& a, const Tensor<T>& b, double temperature);

// ---------------------------------------------------------------------------
// combined objective

// Encoded views for one step; the non-symmetric variant supplies masked_a and clean_b only.
template <typename T>
struct ViewEncodings {
  const EncodedBatch<T>* clean_a = nullptr;
  const EncodedBatch<T>* masked_a = nullptr;
  const EncodedBatch<T>* clean_b = nullptr;
  const EncodedBatch<T>* masked_b = nullptr;
  const MaskTargets* mask_a = nullptr;
  const MaskTargets* mask_b = nullptr;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double mlm = 0.0;  // sum of the directions below
  double mlm_a = 0.0;  // unmasking A with the B sentence vector
  double mlm_b = 0.0;  // unmasking B with the A sentence vector (symmetric only)
  std::size_t mlm_directions = 0;
  double align = 0.0;
  double koleo = 0.0;
};

template <typename T>
LossBreakdown<T> total_loss(const ViewEncodings<T>& views, const LossWeights& weights,
                            const GradFlowConfig& flow, const UnmaskHeadWeights<Tensor<T>>& head,
                            std::size_t num_heads);

}  // namespace mexma::objectives
