#include "mexma/cli/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>


namespace mexma::cli {

namespace fs = std::filesystem;
using corpus::ParallelPair;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_alignments(const fs::path& path, std::span<const ParallelPair> pairs) {
  std::ofstream out(path);
  for (const auto& p : pairs) {
    for (std::size_t i = 0; i < p.alignment.size(); ++i) out << (i ? " " : "") << p.alignment[i];
    out << '\n';
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Sidecar lines follow the TSV lines; pairs carry their line number as id.
void read_alignments(const fs::path& path, std::vector<ParallelPair>& pairs) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::vector<std::int32_t>> lines;
  for (std::string line; std::getline(in, line);) {
    std::istringstream s(line);
    std::vector<std::int32_t> a;
    for (std::int32_t v; s >> v;) a.push_back(v);
    lines.push_back(std::move(a));
  }
  for (auto& p : pairs) {
    if (p.id == 0 || p.id > lines.size())
      throw std::runtime_error(path.string() + " has no line for pair " + std::to_string(p.id));
    p.alignment = lines[p.id - 1];
    if (p.alignment.size() != p.source.size())
      throw std::runtime_error(path.string() + ": alignment length mismatch on line " +
                               std::to_string(p.id));
  }
}

std::vector<ParallelPair> renumber(std::vector<ParallelPair> pairs) {
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].id = i + 1;
  return pairs;
}

}  // namespace

eval::ContentRange DataDir::target_content() const {
  if (spec) {
    if (auto b0 = vocab.find("b0")) return {*b0, spec->content_vocab};
  }
  return {vocab.first_content_id(), vocab.size() - vocab.first_content_id()};
}

void write_data_dir(const fs::path& dir, const corpus::Vocab& vocab, std::vector<ParallelPair> train,
                    std::vector<ParallelPair> test, const corpus::SyntheticSpec* spec) {
  fs::create_directories(dir);
  train = renumber(std::move(train));
  test = renumber(std::move(test));
  corpus::write_tsv(dir / "train.tsv", train, vocab);
  corpus::write_tsv(dir / "test.tsv", test, vocab);
  vocab.save(dir / "vocab.txt");
  if (spec) {
    std::ofstream(dir / "spec.json") << corpus::spec_to_json(*spec, train.size() + test.size()) << '\n';
    write_alignments(dir / "train.align", train);
    write_alignments(dir / "test.align", test);
  }
}

DataDir load_data_dir(const fs::path& dir, std::size_t max_seq_len) {
  if (!fs::is_directory(dir)) throw std::runtime_error("data directory " + dir.string() + " not found");
  for (auto name : {"train.tsv", "test.tsv", "vocab.txt"})
    if (!fs::exists(dir / name))
      throw std::runtime_error((dir / name).string() + " is missing (run gen-data or supply it)");
  DataDir d;
  d.vocab = corpus::Vocab::load(dir / "vocab.txt");
  auto train = corpus::ingest_tsv(dir / "train.tsv", max_seq_len, &d.vocab);
  auto test = corpus::ingest_tsv(dir / "test.tsv", max_seq_len, &d.vocab);
  d.train = std::move(train.pairs);
  d.test = std::move(test.pairs);
  d.train_report = std::move(train.report);
  d.test_report = std::move(test.report);
  if (fs::exists(dir / "spec.json")) {
    d.spec = corpus::spec_from_json(read_text(dir / "spec.json"));
    read_alignments(dir / "train.align", d.train);
    read_alignments(dir / "test.align", d.test);
  }
  return d;
}

DataDir make_synthetic(const corpus::SyntheticSpec& spec, std::size_t train, std::size_t held_out) {
  auto c = corpus::generate_synthetic(spec, train + held_out);
  auto split = corpus::split_corpus(std::move(c.pairs), 0, held_out, spec.corpus_seed);
  DataDir d;
  d.vocab = std::move(c.vocab);
  d.train = renumber(std::move(split.train));
  d.test = renumber(std::move(split.test));
  d.spec = spec;
  return d;
}

trainer::TrainConfig fit_to_data(trainer::TrainConfig cfg, const DataDir& data) {
  cfg.encoder.vocab_size = data.vocab.size();
  return cfg;
}

HeldOutScores score_held_out(const encoder::EncoderParams<float>& params,
                             const encoder::EncoderConfig& config, const DataDir& data,
                             const ScoreOptions& o) {
  std::mt19937_64 rng(o.seed);
  auto sides = eval::embed_for_mining(params, config, data.test, o.pooling, o.hard_negatives,
                                      data.target_content(), rng);
  HeldOutScores s;
  const auto gold = eval::identity_gold(sides.src);
  s.xsim = eval::xsim_error(sides.src, sides.tgt, gold, o.k);
  if (o.hard_negatives > 0)
    s.xsimpp = eval::xsimpp_error(sides.src, sides.tgt, sides.hard_negatives, gold, o.k);
  return s;
}

double mean_nearest_distance(const eval::EmbeddingSet& set) {
  const std::size_t n = set.size(), d = set.dim;
  if (n < 2) throw std::invalid_argument("nearest-neighbor distance needs two embeddings");
  std::vector<double> unit(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = set.row(i);
    double ss = 0;
    for (float v : r) ss += double(v) * v;
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < d; ++j) unit[i * d + j] = r[j] * inv;
  }
  std::vector<double> nearest(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    double best = INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double ss = 0;
      for (std::size_t q = 0; q < d; ++q) {
        const double diff = unit[i * d + q] - unit[j * d + q];
        ss += diff * diff;
      }
      best = std::min(best, ss);
    }
    nearest[i] = std::sqrt(best);
  }
  double sum = 0;
  for (double v : nearest) sum += v;
  return sum / static_cast<double>(n);
}

std::vector<AblationCell> AblationGrid::cells() const {
  std::vector<AblationCell> out;
  for (double r : ratios)
    for (const auto& f : flows) out.push_back({r, f});
  return out;
}

std::vector<AblationRow> run_ablation(const DataDir& data, const trainer::TrainConfig& base,
                                      const AblationGrid& grid, const ScoreOptions& score) {
  if (grid.ratios.empty() || grid.flows.empty() || grid.seeds.empty())
    throw std::invalid_argument("ablation grid needs at least one ratio, flow and seed");
  // Validate every cell before the first (long) training run.
  for (const auto& cell : grid.cells()) {
    auto cfg = fit_to_data(base, data);
    cfg.masking.ratio = cell.ratio;
    cfg.flow = cell.flow;
    trainer::validate(cfg);
  }
  std::vector<AblationRow> rows;
  for (const auto& cell : grid.cells()) {
    AblationRow row{cell, grid.seeds.size()};
    for (auto seed : grid.seeds) {
      auto cfg = fit_to_data(base, data);
      cfg.masking.ratio = cell.ratio;
      cfg.flow = cell.flow;
      cfg.seed = seed;
      cfg.encoder.seed = seed;
      const auto run = trainer::train(data.train, cfg);
      const auto s = score_held_out(run.state.model.encoder, cfg.encoder, data, score);
      row.xsim += s.xsim.error_rate;
      row.xsimpp += s.xsimpp ? s.xsimpp->error_rate : 0.0;
      row.final_loss += run.metrics.empty() ? 0.0 : run.metrics.back().total;
    }
    const double n = static_cast<double>(grid.seeds.size());
    row.xsim /= n;
    row.xsimpp /= n;
    row.final_loss /= n;
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_header() {
  return "mask_ratio,token_gradients,alignment,family,koleo,symmetric,seeds,xsim_error,xsimpp_error,"
         "final_loss";
}

std::string format_ablation_row(const AblationRow& r) {
  std::ostringstream s;
  s << std::setprecision(17) << r.cell.ratio << ',' << (r.cell.flow.token_gradients ? "true" : "false")
    << ',' << objectives::to_string(r.cell.flow.alignment) << ','
    << objectives::to_string(r.cell.flow.family) << ',' << (r.cell.flow.koleo ? "true" : "false") << ','
    << (r.cell.flow.symmetric ? "true" : "false") << ',' << r.seeds << ',' << r.xsim << ',' << r.xsimpp
    << ',' << r.final_loss;
  return s.str();
}

void write_ablation_csv(const fs::path& path, std::span<const AblationRow> rows) {
  std::ofstream out(path);
  out << ablation_header() << '\n';
  for (const auto& r : rows) out << format_ablation_row(r) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace mexma::cli
