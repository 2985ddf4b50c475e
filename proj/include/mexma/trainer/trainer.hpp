#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mexma/corpus/corpus.hpp"
#include "mexma/encoder/encoder.hpp"
#include "mexma/objectives/losses.hpp"
#include "mexma/objectives/masking.hpp"
#include "mexma/tensor/adamw.hpp"

namespace mexma::trainer {

using corpus::ParallelPair;
using encoder::EncoderConfig;
using encoder::TokenId;
using objectives::GradFlowConfig;
using objectives::LossWeights;
using objectives::MaskingPolicy;
using objectives::MaskTargets;

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// configuration

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;    // pairs per optimizer step
  std::size_t accumulation = 1;   // micro-batches per step; must divide batch_size
  double learning_rate = 3e-4;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;
  tensor::AdamWHyper adamw;       // learning_rate field is overwritten by the schedule
  EncoderConfig encoder;          // encoder.seed follows seed
  std::size_t head_layers = 2;
  MaskingPolicy masking;
  LossWeights weights;
  GradFlowConfig flow;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  bool record_wall_time = true;

  bool operator==(const TrainConfig&) const = default;
};

TrainConfig default_toy_config();

// Throws TrainError naming the violated invariant.
void validate(const TrainConfig& cfg);

// Flat key/value view shared by the JSON config file and the checkpoint header.
std::vector<std::pair<std::string, std::string>> to_fields(const TrainConfig& cfg);
void set_field(TrainConfig& cfg, const std::string& key, const std::string& value);

// Flat JSON object; unknown keys are an error. Starts from `base`.
TrainConfig config_from_json(const std::string& text, TrainConfig base = default_toy_config());
std::string config_to_json(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = default_toy_config());

// Linear warmup from 0 to the configured rate, then constant. step is 1-based.
double learning_rate_at(const TrainConfig& cfg, std::size_t step);

// Independent stream for (seed, purpose, index).
std::mt19937_64 derived_stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index);

// ---------------------------------------------------------------------------
// model state

struct Model {
  encoder::EncoderParams<float> encoder;
  objectives::UnmaskHeadParams<float> head;
};

Model init_model(const TrainConfig& cfg);

struct TrainState {
  Model model;
  tensor::AdamWState<float> optimizer;
  std::uint64_t step = 0;  // completed training steps
};

TrainState init_state(const TrainConfig& cfg);

// Parameter pointers in a fixed order: encoder fields, then head fields.
std::vector<std::pair<std::string, tensor::Array<float>*>> parameters(Model& model);
std::vector<std::pair<std::string, const tensor::Array<float>*>> parameters(const Model& model);

// ---------------------------------------------------------------------------
// views

struct FourViewBatch {
  std::vector<std::uint64_t> pair_ids;
  std::vector<std::vector<TokenId>> clean_a, masked_a, clean_b, masked_b;
  MaskTargets mask_a, mask_b;

  std::size_t size() const { return pair_ids.size(); }
  FourViewBatch slice(std::size_t begin, std::size_t count) const;
};

// Independent mask draws for the A and B sides. Throws TrainError on an empty batch
// or a sentence longer than max_seq_len (named by pair id).
FourViewBatch build_views(std::span<const ParallelPair> pairs, const MaskingPolicy& policy,
                          const EncoderConfig& config, std::mt19937_64& rng);

// Swaps the languages of each pair with probability 1/2 (non-symmetric training).
std::vector<ParallelPair> shuffle_roles(std::span<const ParallelPair> pairs, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// steps

struct LossReport {
  double total = 0, mlm = 0, mlm_a = 0, mlm_b = 0, align = 0, koleo = 0;
  double grad_norm = 0;
  double learning_rate = 0;
  bool skipped = false;  // non-finite loss or gradient, no update applied
  std::string skip_reason;
};

// Forward, backward and one AdamW update at the given learning rate. Micro-batch
// gradients are averaged. Does not touch state.step.
LossReport train_step(TrainState& state, std::span<const FourViewBatch> micro_batches,
                      const TrainConfig& cfg, double learning_rate);

// Loss and gradients without an update, in parameter order.
LossReport loss_and_gradients(const Model& model, std::span<const FourViewBatch> micro_batches,
                              const TrainConfig& cfg, std::vector<tensor::Array<float>>* grads);

// ---------------------------------------------------------------------------
// loop

struct MetricsRow {
  std::size_t step = 0;
  double total = 0, mlm = 0, align = 0, koleo = 0, grad_norm = 0, seconds = 0;
  bool operator==(const MetricsRow&) const = default;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct TrainHooks {
  std::optional<std::filesystem::path> checkpoint_dir;  // checkpoint-<step>.mxc and final.mxc
  std::size_t stop_after = 0;                           // stop once this many steps are done
  std::function<void(const MetricsRow&, const LossReport&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
  std::size_t skipped_steps = 0;
};

// Trains from `resume` (or a fresh init) until cfg.steps. Batch order, masks and role
// swaps for step t depend only on (seed, t), so a resumed run matches an uninterrupted one.
TrainResult train(std::span<const ParallelPair> train_pairs, const TrainConfig& cfg,
                  const TrainHooks& hooks = {}, std::optional<TrainState> resume = std::nullopt);

// ---------------------------------------------------------------------------
// checkpoints

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mexma::trainer
