#include "mexma/objectives/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mexma/tensor/ops.hpp"

namespace mexma::objectives {

namespace ops = mexma::tensor;

AlignmentMode parse_alignment_mode(std::string_view name) {
  if (name == "clean-to-clean") return AlignmentMode::CleanToClean;
  if (name == "clean-to-dirty") return AlignmentMode::CleanToDirty;
  if (name == "none") return AlignmentMode::None;
  throw ObjectiveError("unknown alignment mode '" + std::string(name) +
                       "' (expected clean-to-clean, clean-to-dirty or none)");
}

AlignmentFamily parse_alignment_family(std::string_view name) {
  if (name == "mse") return AlignmentFamily::Mse;
  if (name == "infonce") return AlignmentFamily::InfoNce;
  throw ObjectiveError("unknown alignment family '" + std::string(name) +
                       "' (expected mse or infonce)");
}

std::string_view to_string(AlignmentMode mode) {
  switch (mode) {
    case AlignmentMode::CleanToClean: return "clean-to-clean";
    case AlignmentMode::CleanToDirty: return "clean-to-dirty";
    case AlignmentMode::None: return "none";
  }
  return "none";
}

std::string_view to_string(AlignmentFamily family) {
  return family == AlignmentFamily::Mse ? "mse" : "infonce";
}

void validate(const GradFlowConfig& flow) {
  if (flow.alignment == AlignmentMode::CleanToClean && !flow.symmetric)
    throw ObjectiveError("clean-to-clean alignment requires symmetric views");
  if (!(flow.temperature > 0.0))
    throw ObjectiveError("infonce temperature must be positive");
}

void validate(const LossWeights& w) {
  if (!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0))
    throw ObjectiveError("loss weights must be nonnegative");
}

std::size_t MaskTargets::total() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

template <typename T>
UnmaskHeadParams<T> init_head(const EncoderConfig& config, std::size_t num_layers) {
  encoder::validate(config);
  // Distinct stream from the encoder's so both can share one seed.
  std::mt19937_64 rng(config.seed ^ 0x5bd1e9955bd1e995ULL);
  UnmaskHeadParams<T> h;
  for (std::size_t l = 0; l < num_layers; ++l)
    h.layers.push_back(encoder::init_block<T>(config.model_dim, config.ff_dim, config.init_std, rng));
  h.final_gain = Array<T>::filled({config.model_dim}, T(1));
  h.final_bias = Array<T>::zeros({config.model_dim});
  std::normal_distribution<double> normal(0.0, config.init_std);
  h.vocab_weight = Array<T>::zeros({config.model_dim, config.vocab_size});
  for (auto& v : h.vocab_weight.values) v = static_cast<T>(normal(rng));
  h.vocab_bias = Array<T>::zeros({config.vocab_size});
  return h;
}

template <typename T>
Tensor<T> cross_unmask_loss(const Tensor<T>& sentence_other, const EncodedBatch<T>& masked,
                            const MaskTargets& mask, const UnmaskHeadWeights<Tensor<T>>& head,
                            std::size_t num_heads, bool token_gradients) {
  const std::size_t batch = masked.hidden.dim(0), length = masked.hidden.dim(1),
                    dim = masked.hidden.dim(2);
  if (sentence_other.shape() != tensor::Shape{batch, dim})
    throw tensor::ShapeError("cross_unmask_loss", tensor::to_string({batch, dim}),
                             sentence_other.shape());
  if (mask.positions.size() != batch || mask.targets.size() != batch)
    throw ObjectiveError("cross_unmask_loss: mask metadata does not cover the batch");
  if (mask.total() == 0) throw ObjectiveError("cross_unmask_loss: no masked position in the batch");
  if (length < 2) throw ObjectiveError("cross_unmask_loss: sequences hold no tokens after CLS");

  auto tokens = token_gradients ? masked.hidden : ops::stop_gradient(masked.hidden);
  auto body = ops::slice(tokens, 1, 1, length - 1);
  auto context = ops::reshape(sentence_other, {batch, 1, dim});
  const Tensor<T> parts[] = {context, body};
  auto seq = ops::concat(std::span<const Tensor<T>>(parts), 1);

  // The sentence vector takes the CLS slot, so encoder position p stays at p.
  const auto key_mask = encoder::key_padding_mask(masked.lengths, length, num_heads);
  for (const auto& layer : head.layers)
    seq = encoder::transformer_block<T>(layer, seq, key_mask, num_heads, nullptr);

  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
  for (std::size_t b = 0; b < batch; ++b) {
    if (mask.positions[b].size() != mask.targets[b].size())
      throw ObjectiveError("cross_unmask_loss: positions and targets differ in count");
    for (std::size_t i = 0; i < mask.positions[b].size(); ++i) {
      const std::size_t p = mask.positions[b][i];
      if (p == 0 || p >= masked.lengths[b])
        throw ObjectiveError("cross_unmask_loss: masked position " + std::to_string(p) +
                             " is outside the sentence body");
      rows.push_back(b * length + p);
      targets.push_back(mask.targets[b][i]);
    }
  }
  auto picked = ops::gather_rows(ops::reshape(seq, {batch * length, dim}),
                                 std::span<const std::size_t>(rows));
  picked = encoder::layer_norm_affine(picked, head.final_gain, head.final_bias);
  auto logits = ops::add(ops::matmul(picked, head.vocab_weight), head.vocab_bias);
  return ops::softmax_cross_entropy(logits, std::span<const std::size_t>(targets));
}

template <typename T>
Tensor<T> alignment_mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw tensor::ShapeError("alignment_mse", tensor::to_string(a.shape()), b.shape());
  return ops::mean_all(ops::square(ops::sub(a, b)));
}

template <typename T>
Tensor<T> koleo(const Tensor<T>& sentences) {
  if (sentences.rank() != 2) throw tensor::ShapeError("koleo", "rank-2 batch", sentences.shape());
  const std::size_t n = sentences.dim(0), dim = sentences.dim(1);
  if (n < 2) throw ObjectiveError("koleo needs at least two vectors, got " + std::to_string(n));
  auto unit = ops::l2_normalize(sentences, -1, T(1e-12));

  // Nearest neighbour by value; the selection itself carries no gradient.
  const auto v = unit.values();
  std::vector<std::size_t> nearest(n);
  for (std::size_t i = 0; i < n; ++i) {
    T best = std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      T d2 = 0;
      for (std::size_t c = 0; c < dim; ++c) {
        const T d = v[i * dim + c] - v[j * dim + c];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        nearest[i] = j;
      }
    }
  }
  auto partner = ops::gather_rows(unit, std::span<const std::size_t>(nearest));
  auto d2 = ops::sum(ops::square(ops::sub(unit, partner)), 1);
  // log(max(d, 1e-8)) == 0.5 * log(max(d^2, 1e-16))
  auto log_d = ops::scale(ops::log(ops::clamp_min(d2, T(1e-16))), T(0.5));
  return ops::scale(ops::mean(log_d, 0), T(-1));
}

template <typename T>
Tensor<T> infonce(const Tensor<T>& a, const Tensor<T>& b, double temperature) {
  if (a.shape() != b.shape()) throw tensor::ShapeError("infonce", tensor::to_string(a.shape()), b.shape());
  if (a.rank() != 2) throw tensor::ShapeError("infonce", "rank-2 batch", a.shape());
  const std::size_t n = a.dim(0);
  if (n < 2) throw ObjectiveError("infonce needs at least two pairs, got " + std::to_string(n));
  if (!(temperature > 0.0)) throw ObjectiveError("infonce temperature must be positive");
  auto sim = ops::matmul(ops::l2_normalize(a, -1, T(1e-12)), ops::l2_normalize(b, -1, T(1e-12)),
                         false, true);
  auto logits = ops::scale(sim, static_cast<T>(1.0 / temperature));
  std::vector<std::size_t> diagonal(n);
  for (std::size_t i = 0; i < n; ++i) diagonal[i] = i;
  auto a_to_b = ops::softmax_cross_entropy(logits, std::span<const std::size_t>(diagonal));
  auto b_to_a = ops::softmax_cross_entropy(ops::transpose(logits), std::span<const std::size_t>(diagonal));
  return ops::scale(ops::add(a_to_b, b_to_a), T(0.5));
}

template <typename T>
LossBreakdown<T> total_loss(const ViewEncodings<T>& views, const LossWeights& weights,
                            const GradFlowConfig& flow, const UnmaskHeadWeights<Tensor<T>>& head,
                            std::size_t num_heads) {
  validate(flow);
  validate(weights);
  if (!views.masked_a || !views.clean_b || !views.mask_a)
    throw ObjectiveError("total_loss: masked A and clean B views are always required");
  const bool four = views.clean_a && views.masked_b && views.mask_b;
  const bool any_extra = views.clean_a || views.masked_b || views.mask_b;
  if (flow.symmetric && !four)
    throw ObjectiveError("total_loss: symmetric flow needs all four views");
  if (!flow.symmetric && any_extra)
    throw ObjectiveError("total_loss: non-symmetric flow takes exactly two views");

  LossBreakdown<T> out;
  auto mlm = cross_unmask_loss(views.clean_b->sentence, *views.masked_a, *views.mask_a, head,
                               num_heads, flow.token_gradients);
  out.mlm_a = static_cast<double>(mlm.item());
  out.mlm_directions = 1;
  if (flow.symmetric) {
    auto other = cross_unmask_loss(views.clean_a->sentence, *views.masked_b, *views.mask_b, head,
                                   num_heads, flow.token_gradients);
    out.mlm_b = static_cast<double>(other.item());
    out.mlm_directions = 2;
    mlm = ops::add(mlm, other);
  }
  out.mlm = static_cast<double>(mlm.item());
  auto total = ops::scale(mlm, static_cast<T>(weights.beta));

  if (flow.alignment != AlignmentMode::None) {
    const Tensor<T>& left = flow.alignment == AlignmentMode::CleanToClean
                                ? views.clean_a->sentence
                                : views.masked_a->sentence;
    const Tensor<T>& right = views.clean_b->sentence;
    auto align = flow.family == AlignmentFamily::Mse ? alignment_mse(left, right)
                                                     : infonce(left, right, flow.temperature);
    out.align = static_cast<double>(align.item());
    total = ops::add(total, ops::scale(align, static_cast<T>(weights.alpha)));
  }

  if (flow.koleo) {
    auto spread = koleo(views.clean_b->sentence);
    if (flow.symmetric) spread = ops::add(koleo(views.clean_a->sentence), spread);
    out.koleo = static_cast<double>(spread.item());
    total = ops::add(total, ops::scale(spread, static_cast<T>(weights.gamma)));
  }
  out.total = total;
  return out;
}

#define MEXMA_INSTANTIATE_LOSSES(T)                                                          \
  template UnmaskHeadParams<T> init_head<T>(const EncoderConfig&, std::size_t);              \
  template Tensor<T> cross_unmask_loss<T>(const Tensor<T>&, const EncodedBatch<T>&,          \
                                          const MaskTargets&,                                \
                                          const UnmaskHeadWeights<Tensor<T>>&, std::size_t,  \
                                          bool);                                             \
  template Tensor<T> alignment_mse<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> koleo<T>(const Tensor<T>&);                                             \
  template Tensor<T> infonce<T>(const Tensor<T>&, const Tensor<T>&, double);                 \
  template LossBreakdown<T> total_loss<T>(const ViewEncodings<T>&, const LossWeights&,       \
                                          const GradFlowConfig&,                             \
                                          const UnmaskHeadWeights<Tensor<T>>&, std::size_t);

MEXMA_INSTANTIATE_LOSSES(float)
MEXMA_INSTANTIATE_LOSSES(double)

#undef MEXMA_INSTANTIATE_LOSSES

}  // namespace mexma::objectives
