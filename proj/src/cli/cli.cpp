#include "mexma/cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "mexma/cli/experiment.hpp"
#include "mexma/trainer/grad_suite.hpp"

namespace mexma::cli {

namespace fs = std::filesystem;
using trainer::TrainConfig;

namespace {

// Bad flags, inconsistent settings or unreadable inputs; reported before any output is written.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (flat keys)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed override");
  sub->add_option("--set", c.sets, "Config override key=value (repeatable)");
}

TrainConfig base_config() {
  auto cfg = trainer::default_toy_config();
  cfg.record_wall_time = false;  // identical invocations give identical files
  return cfg;
}

// Config file over `base`, then --set, then --seed.
TrainConfig resolve_config(const Common& c, TrainConfig base = base_config()) {
  try {
    auto cfg = c.config.empty() ? base : trainer::load_config(c.config, base);
    for (const auto& kv : c.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw UsageError("--set expects key=value, got '" + kv + "'");
      trainer::set_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) trainer::set_field(cfg, "seed", std::to_string(*c.seed));
    return cfg;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

void validate_or_usage(const TrainConfig& cfg) {
  try {
    trainer::validate(cfg);
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
}

bool parse_switch(const std::string& s) {
  if (s == "on" || s == "true") return true;
  if (s == "off" || s == "false") return false;
  throw UsageError("expected on/off or true/false, got '" + s + "'");
}

DataDir load_data(const std::string& dir, std::size_t max_seq_len) {
  try {
    auto d = load_data_dir(dir, max_seq_len);
    if (d.train.empty() && d.test.empty()) throw UsageError(dir + " contains no usable pairs");
    return d;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

const std::vector<corpus::ParallelPair>& pick_split(const DataDir& d, const std::string& split) {
  const auto& pairs = split == "train" ? d.train : d.test;
  if (pairs.empty()) throw UsageError("the " + split + " split is empty");
  return pairs;
}

struct LoadedModel {
  trainer::Checkpoint ckpt;
  DataDir data;
};

// Checkpoint plus a data directory whose vocabulary matches it.
LoadedModel load_model(const std::string& checkpoint, const std::string& data_dir) {
  LoadedModel m{trainer::load_checkpoint(checkpoint), {}};
  m.data = load_data(data_dir, m.ckpt.config.encoder.max_seq_len);
  if (m.data.vocab.size() != m.ckpt.config.encoder.vocab_size)
    throw UsageError("checkpoint vocabulary has " + std::to_string(m.ckpt.config.encoder.vocab_size) +
                     " ids but " + data_dir + "/vocab.txt has " + std::to_string(m.data.vocab.size()));
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

struct GenData {
  std::string out;
  std::size_t pairs = 2000, held_out = 200;
  corpus::SyntheticSpec spec;
  std::string reorder = "none";
};

int gen_data(const GenData& o, const Common& c, std::ostream& out) {
  auto spec = o.spec;
  try {
    spec.reorder = corpus::parse_reorder(o.reorder);
    if (c.seed) spec.corpus_seed = *c.seed;
    corpus::validate(spec);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (o.pairs == 0 || o.held_out == 0) throw UsageError("--pairs and --held-out must be positive");
  const auto d = make_synthetic(spec, o.pairs, o.held_out);
  write_data_dir(o.out, d.vocab, d.train, d.test, &spec);
  out << "wrote " << d.train.size() << " train and " << d.test.size() << " held-out pairs ("
      << d.vocab.size() << " ids) to " << o.out << '\n';
  return kOk;
}

struct Train {
  std::string data, out, resume;
};

int train(const Train& o, const Common& c, std::ostream& out, std::ostream& err) {
  std::optional<trainer::TrainState> resume;
  TrainConfig cfg;
  if (!o.resume.empty()) {
    auto ck = trainer::load_checkpoint(o.resume);
    cfg = resolve_config(c, ck.config);
    resume = std::move(ck.state);
  } else {
    cfg = resolve_config(c);
  }
  const auto data = load_data(o.data, cfg.encoder.max_seq_len);
  if (resume && cfg.encoder.vocab_size != data.vocab.size())
    throw UsageError("checkpoint vocabulary does not match " + o.data + "/vocab.txt");
  cfg = fit_to_data(cfg, data);
  validate_or_usage(cfg);
  if (resume && resume->step > cfg.steps)
    throw UsageError("checkpoint is at step " + std::to_string(resume->step) + ", past steps=" +
                     std::to_string(cfg.steps));
  if (data.train.size() < cfg.batch_size)
    throw UsageError("train split has " + std::to_string(data.train.size()) +
                     " pairs, fewer than batch_size=" + std::to_string(cfg.batch_size));

  const fs::path dir = o.out;
  std::vector<trainer::MetricsRow> earlier;
  const std::size_t start = resume ? resume->step : 0;
  if (resume && fs::exists(dir / "metrics.csv"))
    for (const auto& r : trainer::read_metrics_csv(dir / "metrics.csv"))
      if (r.step <= start) earlier.push_back(r);
  fs::create_directories(dir);

  trainer::TrainHooks hooks;
  hooks.checkpoint_dir = dir;
  const std::size_t report_every = std::max<std::size_t>(1, cfg.steps / 20);
  hooks.on_step = [&](const trainer::MetricsRow& row, const trainer::LossReport& loss) {
    if (row.step % report_every == 0 || row.step == cfg.steps)
      err << "step " << row.step << '/' << cfg.steps << " loss " << fmt(row.total)
          << (loss.skipped ? " (skipped: " + loss.skip_reason + ")" : "") << '\n';
  };
  auto result = trainer::train(data.train, cfg, hooks, std::move(resume));

  earlier.insert(earlier.end(), result.metrics.begin(), result.metrics.end());
  trainer::write_metrics_csv(dir / "metrics.csv", earlier);
  write_text(dir / "config.json", trainer::config_to_json(cfg) + "\n");
  data.vocab.save(dir / "vocab.txt");
  out << "trained to step " << result.state.step;
  if (!result.metrics.empty()) out << ", final loss " << fmt(result.metrics.back().total);
  out << ", skipped " << result.skipped_steps << "; wrote " << (dir / "final.mxc").string() << '\n';
  return kOk;
}

struct Mining {
  std::string checkpoint, data, split = "test", src, tgt, negatives_emb, out, pooling = "cls";
  std::size_t k = 4, hard_negatives = 0;
};

void report_mining(std::ostream& out, const char* name, const eval::MiningReport& r) {
  out << name << ' ' << fmt(r.error_rate) << " (" << r.errors << '/' << r.queries.size()
      << " errors, pool " << r.pool_size << ", k " << r.k << ", hard-negative wins "
      << r.hard_negative_errors << ")\n";
}

int eval_mining(const Mining& o, const Common& c, std::ostream& out) {
  const bool from_model = !o.checkpoint.empty();
  if (from_model == (!o.src.empty() || !o.tgt.empty()))
    throw UsageError("give either --checkpoint with --data, or --src and --tgt embedding files");
  if (o.k == 0) throw UsageError("--k must be positive");
  eval::MiningReport xsim;
  std::optional<eval::MiningReport> xsimpp;
  if (from_model) {
    if (o.data.empty()) throw UsageError("--checkpoint needs --data");
    auto m = load_model(o.checkpoint, o.data);
    m.data.test = pick_split(m.data, o.split);
    ScoreOptions s{o.k, o.hard_negatives, eval::parse_pooling(o.pooling), c.seed.value_or(0)};
    auto r = score_held_out(m.ckpt.state.model.encoder, m.ckpt.config.encoder, m.data, s);
    xsim = std::move(r.xsim);
    xsimpp = std::move(r.xsimpp);
  } else {
    if (o.src.empty() || o.tgt.empty()) throw UsageError("--src and --tgt are both required");
    const auto src = eval::load_emb1(o.src), tgt = eval::load_emb1(o.tgt);
    const auto gold = eval::identity_gold(src);
    xsim = eval::xsim_error(src, tgt, gold, o.k);
    if (!o.negatives_emb.empty())
      xsimpp = eval::xsimpp_error(src, tgt, eval::load_emb1(o.negatives_emb), gold, o.k);
  }
  report_mining(out, "xsim_error", xsim);
  if (xsimpp) report_mining(out, "xsimpp_error", *xsimpp);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    eval::write_mining_csv(fs::path(o.out) / "xsim.csv", xsim);
    std::string summary = "metric,value\nxsim_error," + fmt(xsim.error_rate, 17) + "\n";
    if (xsimpp) {
      eval::write_mining_csv(fs::path(o.out) / "xsimpp.csv", *xsimpp);
      summary += "xsimpp_error," + fmt(xsimpp->error_rate, 17) + "\n";
    }
    write_text(fs::path(o.out) / "mining_summary.csv", summary);
  }
  return kOk;
}

struct Tokens {
  std::string checkpoint, data, split = "test", out;
  std::size_t queries = 2, k = 5;
};

int analyze_tokens(const Tokens& o, const Common& c, std::ostream& out) {
  if (o.k == 0 || o.queries == 0) throw UsageError("--k and --queries must be positive");
  const auto m = load_model(o.checkpoint, o.data);
  const auto& pairs = pick_split(m.data, o.split);
  for (const auto& p : pairs)
    if (p.alignment.empty())
      throw UsageError("analyze-tokens needs gold alignments (" + o.data + "/" + o.split +
                       ".align, written by gen-data)");
  std::mt19937_64 rng(c.seed.value_or(0));
  const auto r = eval::token_nn_analysis(m.ckpt.state.model.encoder, m.ckpt.config.encoder, pairs,
                                         o.queries, o.k, rng);
  out << "translation " << fmt(r.translation, 4) << "%  same_sentence " << fmt(r.same_sentence, 4)
      << "%  same_language " << fmt(r.same_language, 4) << "%  other " << fmt(r.other, 4) << "%  ("
      << r.neighbor_count << " neighbors)\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    eval::write_token_csv(fs::path(o.out) / "tokens.csv", r);
  }
  return kOk;
}

struct Attention {
  std::string checkpoint, data, split = "test", out;
  bool exclude_specials = false;
  std::size_t k = 4;
};

int analyze_attention(const Attention& o, const Common&, std::ostream& out) {
  if (o.k == 0) throw UsageError("--k must be positive");
  const auto m = load_model(o.checkpoint, o.data);
  const auto& pairs = pick_split(m.data, o.split);
  std::vector<std::vector<encoder::TokenId>> sentences;
  for (const auto& p : pairs) sentences.push_back(p.source);
  const auto& params = m.ckpt.state.model.encoder;
  const auto& config = m.ckpt.config.encoder;
  const auto a = eval::attention_entropy(params, config, sentences, o.exclude_specials);
  const auto pool = eval::pooling_ablation(params, config, pairs, o.k);
  out << "cls attention entropy " << fmt(a.mean_entropy) << " nats over " << a.entropies.size()
      << " sentences" << (o.exclude_specials ? " (specials excluded)" : "") << '\n'
      << "xsim_error cls " << fmt(pool.cls_error) << " mean " << fmt(pool.mean_error)
      << " relative delta " << fmt(pool.delta) << '\n';
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    eval::write_attention_csv(fs::path(o.out) / "attention.csv", a);
    write_text(fs::path(o.out) / "pooling.csv", "cls_error,mean_error,relative_delta\n" +
                                                    fmt(pool.cls_error, 17) + "," +
                                                    fmt(pool.mean_error, 17) + "," +
                                                    fmt(pool.delta, 17) + "\n");
  }
  return kOk;
}

struct Ablate {
  std::string data, out, pooling = "cls";
  std::vector<double> ratios;
  std::vector<std::string> token_gradients, alignment, family, koleo, symmetric;
  std::vector<std::uint64_t> seeds;
  std::size_t k = 4, hard_negatives = 3;
};

int ablate(const Ablate& o, const Common& c, std::ostream& out, std::ostream& err) {
  auto cfg = resolve_config(c);
  const auto data = load_data(o.data, cfg.encoder.max_seq_len);
  cfg = fit_to_data(cfg, data);

  AblationGrid grid;
  grid.ratios = o.ratios.empty() ? std::vector<double>{cfg.masking.ratio} : o.ratios;
  grid.seeds = o.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : o.seeds;
  auto or_default = [](const std::vector<std::string>& v, std::string d) {
    return v.empty() ? std::vector<std::string>{std::move(d)} : v;
  };
  try {
    for (const auto& tg : or_default(o.token_gradients, cfg.flow.token_gradients ? "on" : "off"))
      for (const auto& al : or_default(o.alignment, std::string(objectives::to_string(cfg.flow.alignment))))
        for (const auto& fa : or_default(o.family, std::string(objectives::to_string(cfg.flow.family))))
          for (const auto& ko : or_default(o.koleo, cfg.flow.koleo ? "on" : "off"))
            for (const auto& sy : or_default(o.symmetric, cfg.flow.symmetric ? "on" : "off")) {
              auto f = cfg.flow;
              f.token_gradients = parse_switch(tg);
              f.alignment = objectives::parse_alignment_mode(al);
              f.family = objectives::parse_alignment_family(fa);
              f.koleo = parse_switch(ko);
              f.symmetric = parse_switch(sy);
              grid.flows.push_back(f);
            }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  for (const auto& cell : grid.cells()) {
    auto cell_cfg = cfg;
    cell_cfg.masking.ratio = cell.ratio;
    cell_cfg.flow = cell.flow;
    validate_or_usage(cell_cfg);
  }
  if (data.train.size() < cfg.batch_size) throw UsageError("train split is smaller than batch_size");
  if (data.test.empty()) throw UsageError("the test split is empty");

  ScoreOptions score{o.k, o.hard_negatives, eval::parse_pooling(o.pooling), c.seed.value_or(0)};
  err << "ablation: " << grid.cells().size() << " cells x " << grid.seeds.size() << " seeds, "
      << cfg.steps << " steps each\n";
  std::vector<AblationRow> rows;
  for (const auto& cell : grid.cells()) {
    AblationGrid one{{cell.ratio}, {cell.flow}, grid.seeds};
    rows.push_back(run_ablation(data, cfg, one, score).front());
    err << format_ablation_row(rows.back()) << '\n';
  }
  fs::create_directories(o.out);
  write_ablation_csv(fs::path(o.out) / "ablation.csv", rows);
  out << ablation_header() << '\n';
  for (const auto& r : rows) out << format_ablation_row(r) << '\n';
  return kOk;
}

int grad_check(const std::string& out_dir, const Common& c, std::ostream& out) {
  auto cfg = resolve_config(c);
  {
    auto v = cfg;  // the check narrows the vocabulary itself
    if (v.encoder.vocab_size == 0) v.encoder.vocab_size = 16;
    validate_or_usage(v);
  }
  const double tol = 1e-4, sg_tol = 1e-9;
  const std::uint64_t seed = cfg.seed;
  std::ostringstream csv;
  csv << "group,name,max_relative_error,checked\n";
  double worst = 0;
  auto table = [&](const char* group, const std::vector<trainer::GradCheckRow>& rows) {
    for (const auto& r : rows) {
      out << std::left << std::setw(8) << group << std::setw(40) << r.name << ' '
          << std::scientific << std::setprecision(3) << r.max_relative_error << std::defaultfloat
          << "  (" << r.checked << " elements)\n";
      csv << group << ',' << r.name << ',' << fmt(r.max_relative_error, 17) << ',' << r.checked << '\n';
      worst = std::max(worst, r.max_relative_error);
    }
  };
  table("op", trainer::primitive_grad_checks(seed));
  table("model", trainer::model_grad_check(cfg, seed));
  const auto sg = trainer::stop_gradient_check(cfg, seed);
  out << "stop-gradient oracle: token gradients off differ by " << fmt(sg.max_abs_diff_off)
      << ", on differ by " << fmt(sg.max_abs_diff_on) << '\n';
  csv << "stop_gradient,off_vs_oracle," << fmt(sg.max_abs_diff_off, 17) << ",0\n"
      << "stop_gradient,on_vs_oracle," << fmt(sg.max_abs_diff_on, 17) << ",0\n";
  const bool ok = worst < tol && sg.max_abs_diff_off <= sg_tol && sg.max_abs_diff_on > sg_tol;
  out << "worst relative error " << fmt(worst) << (ok ? " -- pass" : " -- FAIL") << '\n';
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "grad_check.csv", csv.str());
  }
  return ok ? kOk : kFailure;
}

struct Export {
  std::string checkpoint, data, split = "test", side = "source", pooling = "cls", out;
};

int export_emb(const Export& o, const Common&, std::ostream& out) {
  const auto m = load_model(o.checkpoint, o.data);
  const auto& pairs = pick_split(m.data, o.split);
  std::vector<std::vector<encoder::TokenId>> rows;
  std::vector<std::uint64_t> ids;
  for (const auto& p : pairs) {
    rows.push_back(o.side == "source" ? p.source : p.target);
    ids.push_back(p.id);
  }
  const fs::path path = o.out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  eval::export_embeddings(m.ckpt.state.model.encoder, m.ckpt.config.encoder, rows, ids,
                          eval::parse_pooling(o.pooling), path);
  out << "wrote " << rows.size() << " embeddings to " << path.string() << '\n';
  return kOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-lingual sentence encoder training and evaluation", "mexma"};
  app.require_subcommand(1, 1);
  Common common;

  GenData gd;
  auto* s_gen = app.add_subcommand("gen-data", "Write a synthetic cipher corpus (TSV + spec sidecar)");
  s_gen->add_option("--out", gd.out, "Output directory")->required();
  s_gen->add_option("--pairs", gd.pairs, "Training pairs")->capture_default_str();
  s_gen->add_option("--held-out", gd.held_out, "Held-out pairs")->capture_default_str();
  s_gen->add_option("--content-vocab", gd.spec.content_vocab, "Content ids per language")->capture_default_str();
  s_gen->add_option("--zipf", gd.spec.zipf_exponent, "Zipf exponent")->capture_default_str();
  s_gen->add_option("--min-length", gd.spec.min_length)->capture_default_str();
  s_gen->add_option("--max-length", gd.spec.max_length)->capture_default_str();
  s_gen->add_option("--bijection-seed", gd.spec.bijection_seed)->capture_default_str();
  s_gen->add_option("--reorder", gd.reorder, "none or adjacent-swap")->capture_default_str();
  s_gen->add_option("--swap-probability", gd.spec.swap_probability)->capture_default_str();
  add_common(s_gen, common);

  Train tr;
  auto* s_train = app.add_subcommand("train", "Train an encoder; writes final.mxc and metrics.csv");
  s_train->add_option("--data", tr.data, "Data directory")->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--out", tr.out, "Output directory")->required();
  s_train->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  add_common(s_train, common);

  Mining mi;
  auto* s_mine = app.add_subcommand("eval-mining", "xsim and xsim++ mining error");
  s_mine->add_option("--checkpoint", mi.checkpoint)->check(CLI::ExistingFile);
  s_mine->add_option("--data", mi.data)->check(CLI::ExistingDirectory);
  s_mine->add_option("--split", mi.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  s_mine->add_option("--src", mi.src, "Source EMB1 file")->check(CLI::ExistingFile);
  s_mine->add_option("--tgt", mi.tgt, "Target EMB1 file")->check(CLI::ExistingFile);
  s_mine->add_option("--negatives", mi.negatives_emb, "Hard-negative EMB1 file")->check(CLI::ExistingFile);
  s_mine->add_option("--k", mi.k, "Margin neighborhood size")->capture_default_str();
  s_mine->add_option("--pooling", mi.pooling)->check(CLI::IsMember({"cls", "mean"}))->capture_default_str();
  s_mine->add_option("--hard-negatives", mi.hard_negatives, "Perturbed copies per target (0: xsim only)")
      ->capture_default_str();
  s_mine->add_option("--out", mi.out, "Directory for per-query CSVs");
  add_common(s_mine, common);

  Tokens tk;
  auto* s_tok = app.add_subcommand("analyze-tokens", "Token nearest-neighbor categories");
  s_tok->add_option("--checkpoint", tk.checkpoint)->required()->check(CLI::ExistingFile);
  s_tok->add_option("--data", tk.data)->required()->check(CLI::ExistingDirectory);
  s_tok->add_option("--split", tk.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  s_tok->add_option("--queries", tk.queries, "Query tokens per sentence")->capture_default_str();
  s_tok->add_option("--k", tk.k, "Neighbors per query")->capture_default_str();
  s_tok->add_option("--out", tk.out);
  add_common(s_tok, common);

  Attention at;
  auto* s_att = app.add_subcommand("analyze-attention", "CLS attention entropy and pooling ablation");
  s_att->add_option("--checkpoint", at.checkpoint)->required()->check(CLI::ExistingFile);
  s_att->add_option("--data", at.data)->required()->check(CLI::ExistingDirectory);
  s_att->add_option("--split", at.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  s_att->add_flag("--exclude-specials", at.exclude_specials, "Drop special-token columns");
  s_att->add_option("--k", at.k)->capture_default_str();
  s_att->add_option("--out", at.out);
  add_common(s_att, common);

  Ablate ab;
  auto* s_abl = app.add_subcommand("ablate", "Train and score a grid of masking ratios and flow switches");
  s_abl->add_option("--data", ab.data)->required()->check(CLI::ExistingDirectory);
  s_abl->add_option("--out", ab.out)->required();
  s_abl->add_option("--ratio-grid", ab.ratios, "Masking ratios, comma separated")->delimiter(',');
  s_abl->add_option("--token-gradients", ab.token_gradients, "on,off")->delimiter(',');
  s_abl->add_option("--alignment", ab.alignment, "clean-to-clean,clean-to-dirty,none")->delimiter(',');
  s_abl->add_option("--family", ab.family, "mse,infonce")->delimiter(',');
  s_abl->add_option("--koleo", ab.koleo, "on,off")->delimiter(',');
  s_abl->add_option("--symmetric", ab.symmetric, "on,off")->delimiter(',');
  s_abl->add_option("--seeds", ab.seeds, "Training seeds averaged per cell")->delimiter(',');
  s_abl->add_option("--k", ab.k)->capture_default_str();
  s_abl->add_option("--hard-negatives", ab.hard_negatives)->capture_default_str();
  s_abl->add_option("--pooling", ab.pooling)->check(CLI::IsMember({"cls", "mean"}))->capture_default_str();
  add_common(s_abl, common);

  std::string gc_out;
  auto* s_gc = app.add_subcommand("grad-check", "Finite-difference check of every op and the full loss");
  s_gc->add_option("--out", gc_out);
  add_common(s_gc, common);

  Export ex;
  auto* s_exp = app.add_subcommand("export-emb", "Write sentence embeddings as EMB1");
  s_exp->add_option("--checkpoint", ex.checkpoint)->required()->check(CLI::ExistingFile);
  s_exp->add_option("--data", ex.data)->required()->check(CLI::ExistingDirectory);
  s_exp->add_option("--split", ex.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  s_exp->add_option("--side", ex.side)->check(CLI::IsMember({"source", "target"}))->capture_default_str();
  s_exp->add_option("--pooling", ex.pooling)->check(CLI::IsMember({"cls", "mean"}))->capture_default_str();
  s_exp->add_option("--out", ex.out, "EMB1 file")->required();
  add_common(s_exp, common);

  std::vector<std::string> argv_store{"mexma"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s_gen) return gen_data(gd, common, out);
    if (*s_train) return train(tr, common, out, err);
    if (*s_mine) return eval_mining(mi, common, out);
    if (*s_tok) return analyze_tokens(tk, common, out);
    if (*s_att) return analyze_attention(at, common, out);
    if (*s_abl) return ablate(ab, common, out, err);
    if (*s_gc) return grad_check(gc_out, common, out);
    if (*s_exp) return export_emb(ex, common, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace mexma::cli
