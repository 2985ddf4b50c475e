#pragma once

// Pieces shared by the command-line tool and the acceptance suite: data directories,
// held-out scoring and ablation grids.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mexma/corpus/corpus.hpp"
#include "mexma/eval/eval.hpp"
#include "mexma/trainer/trainer.hpp"

namespace mexma::cli {

// A data directory holds train.tsv, test.tsv and vocab.txt; spec.json and the
// <split>.align sidecars are present when the corpus is synthetic.
struct DataDir {
  corpus::Vocab vocab;
  std::vector<corpus::ParallelPair> train, test;
  std::optional<corpus::SyntheticSpec> spec;
  corpus::IngestReport train_report, test_report;

  // Ids a hard negative may substitute on the target side: the B block of a synthetic
  // corpus, otherwise every content id.
  eval::ContentRange target_content() const;
};

// Renumbers pair ids to 1-based line numbers so that re-reading the TSV gives the same ids.
void write_data_dir(const std::filesystem::path& dir, const corpus::Vocab& vocab,
                    std::vector<corpus::ParallelPair> train, std::vector<corpus::ParallelPair> test,
                    const corpus::SyntheticSpec* spec);
DataDir load_data_dir(const std::filesystem::path& dir, std::size_t max_seq_len);

// Synthetic corpus of train + held_out distinct pairs, split by a seeded shuffle.
DataDir make_synthetic(const corpus::SyntheticSpec& spec, std::size_t train, std::size_t held_out);

// Encoder vocabulary sized to the data.
trainer::TrainConfig fit_to_data(trainer::TrainConfig cfg, const DataDir& data);

struct ScoreOptions {
  std::size_t k = 4;
  std::size_t hard_negatives = 3;  // perturbed copies per target; 0 skips xsim++
  eval::Pooling pooling = eval::Pooling::Cls;
  std::uint64_t seed = 0;
};

struct HeldOutScores {
  eval::MiningReport xsim;
  std::optional<eval::MiningReport> xsimpp;
};

HeldOutScores score_held_out(const encoder::EncoderParams<float>& params,
                             const encoder::EncoderConfig& config, const DataDir& data,
                             const ScoreOptions& options);

// Mean distance from each L2-normalized row to its nearest other row.
double mean_nearest_distance(const eval::EmbeddingSet& set);

struct AblationCell {
  double ratio = 0.4;
  objectives::GradFlowConfig flow;
};

struct AblationRow {
  AblationCell cell;
  std::size_t seeds = 0;
  double xsim = 0, xsimpp = 0;  // error rates in [0, 1], averaged over seeds
  double final_loss = 0;
};

struct AblationGrid {
  std::vector<double> ratios;
  std::vector<objectives::GradFlowConfig> flows;
  std::vector<std::uint64_t> seeds;

  std::vector<AblationCell> cells() const;  // ratio-major
};

// Trains one model per (cell, seed) from `base` and scores it on the held-out split.
std::vector<AblationRow> run_ablation(const DataDir& data, const trainer::TrainConfig& base,
                                      const AblationGrid& grid, const ScoreOptions& score);

std::string ablation_header();
std::string format_ablation_row(const AblationRow& row);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace mexma::cli
