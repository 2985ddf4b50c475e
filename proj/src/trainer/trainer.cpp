#include "mexma/trainer/trainer.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mexma/tensor/ops.hpp"

namespace mexma::trainer {

using tensor::Array;
using tensor::Graph;
using tensor::Tensor;

Model init_model(const TrainConfig& cfg) {
  auto enc = cfg.encoder;
  enc.seed = cfg.seed;
  return {encoder::init_params<float>(enc), objectives::init_head<float>(enc, cfg.head_layers)};
}

std::vector<std::pair<std::string, Array<float>*>> parameters(Model& m) {
  auto out = encoder::fields<encoder::EncoderParams<float>, Array<float>>(m.encoder, "encoder.");
  auto head = encoder::fields<objectives::UnmaskHeadParams<float>, Array<float>>(m.head, "head.");
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::vector<std::pair<std::string, const Array<float>*>> parameters(const Model& m) {
  auto out = encoder::fields<encoder::EncoderParams<float>, Array<float>>(m.encoder, "encoder.");
  auto head = encoder::fields<objectives::UnmaskHeadParams<float>, Array<float>>(m.head, "head.");
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

TrainState init_state(const TrainConfig& cfg) {
  validate(cfg);
  TrainState s{init_model(cfg), {}, 0};
  std::vector<tensor::Shape> shapes;
  for (auto& [name, p] : parameters(s.model)) shapes.push_back(p->shape);
  s.optimizer = tensor::AdamWState<float>::for_shapes(shapes, cfg.adamw);
  return s;
}

// ---------------------------------------------------------------------------
// views

FourViewBatch FourViewBatch::slice(std::size_t begin, std::size_t count) const {
  FourViewBatch out;
  auto take = [&](const auto& v) {
    using V = std::decay_t<decltype(v)>;
    return V(v.begin() + static_cast<std::ptrdiff_t>(begin),
             v.begin() + static_cast<std::ptrdiff_t>(begin + count));
  };
  out.pair_ids = take(pair_ids);
  out.clean_a = take(clean_a);
  out.masked_a = take(masked_a);
  out.clean_b = take(clean_b);
  out.masked_b = take(masked_b);
  out.mask_a = {take(mask_a.positions), take(mask_a.targets)};
  out.mask_b = {take(mask_b.positions), take(mask_b.targets)};
  return out;
}

FourViewBatch build_views(std::span<const ParallelPair> pairs, const MaskingPolicy& policy,
                          const EncoderConfig& config, std::mt19937_64& rng) {
  if (pairs.empty()) throw TrainError("cannot build views for an empty batch");
  FourViewBatch v;
  const TokenId first_content = 5;
  for (const auto& p : pairs) {
    if (p.source.size() > config.max_seq_len || p.target.size() > config.max_seq_len)
      throw TrainError("pair " + std::to_string(p.id) + " is longer than max_seq_len " +
                       std::to_string(config.max_seq_len));
    auto ma = objectives::mask_tokens(p.source, policy, config.special, config.vocab_size,
                                      first_content, rng);
    auto mb = objectives::mask_tokens(p.target, policy, config.special, config.vocab_size,
                                      first_content, rng);
    v.pair_ids.push_back(p.id);
    v.clean_a.push_back(p.source);
    v.clean_b.push_back(p.target);
    v.masked_a.push_back(std::move(ma.tokens));
    v.masked_b.push_back(std::move(mb.tokens));
    v.mask_a.positions.push_back(std::move(ma.positions));
    v.mask_a.targets.push_back(std::move(ma.targets));
    v.mask_b.positions.push_back(std::move(mb.positions));
    v.mask_b.targets.push_back(std::move(mb.targets));
  }
  return v;
}

std::vector<ParallelPair> shuffle_roles(std::span<const ParallelPair> pairs, std::mt19937_64& rng) {
  std::vector<ParallelPair> out(pairs.begin(), pairs.end());
  std::bernoulli_distribution flip(0.5);
  for (auto& p : out)
    if (flip(rng)) {
      std::swap(p.source, p.target);
      p.alignment.clear();
    }
  return out;
}

// ---------------------------------------------------------------------------
// steps

LossReport loss_and_gradients(const Model& model, std::span<const FourViewBatch> micro,
                              const TrainConfig& cfg, std::vector<Array<float>>* grads) {
  if (micro.empty()) throw TrainError("train step needs at least one micro-batch");
  const auto params = parameters(model);
  if (grads) {
    grads->clear();
    for (auto& [name, p] : params) grads->push_back(Array<float>::zeros(p->shape));
  }
  const double share = 1.0 / static_cast<double>(micro.size());
  LossReport r;
  for (const auto& batch : micro) {
    Graph<float> g;
    auto enc = encoder::bind<encoder::EncoderWeights, float>(g, model.encoder, true);
    auto head = encoder::bind<objectives::UnmaskHeadWeights, float>(g, model.head, true);
    auto run = [&](const auto& rows) {
      return encoder::encode(enc, cfg.encoder,
                             encoder::TokenBatch::from_rows(rows, cfg.encoder.special.pad));
    };
    // Every view reads the same parameter leaves, so the encoder is shared.
    encoder::EncodedBatch<float> masked_a = run(batch.masked_a), clean_b = run(batch.clean_b);
    encoder::EncodedBatch<float> clean_a, masked_b;
    objectives::ViewEncodings<float> views{nullptr, &masked_a, &clean_b, nullptr, &batch.mask_a,
                                           nullptr};
    if (cfg.flow.symmetric) {
      clean_a = run(batch.clean_a);
      masked_b = run(batch.masked_b);
      views.clean_a = &clean_a;
      views.masked_b = &masked_b;
      views.mask_b = &batch.mask_b;
    }
    auto loss = objectives::total_loss(views, cfg.weights, cfg.flow, head, cfg.encoder.num_heads);
    r.total += share * loss.total.item();
    r.mlm += share * loss.mlm;
    r.mlm_a += share * loss.mlm_a;
    r.mlm_b += share * loss.mlm_b;
    r.align += share * loss.align;
    r.koleo += share * loss.koleo;
    if (!grads) continue;
    g.backward(loss.total);
    std::vector<Tensor<float>> leaves;
    for (auto& [n, t] : encoder::fields<encoder::EncoderWeights<Tensor<float>>, Tensor<float>>(enc))
      leaves.push_back(*t);
    for (auto& [n, t] :
         encoder::fields<objectives::UnmaskHeadWeights<Tensor<float>>, Tensor<float>>(head))
      leaves.push_back(*t);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (!g.has_grad(leaves[i])) continue;
      const auto gi = g.grad_slot(leaves[i].id());
      auto& dst = (*grads)[i].values;
      if (micro.size() == 1)
        std::copy(gi.begin(), gi.end(), dst.begin());
      else
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += static_cast<float>(share * gi[j]);
    }
  }
  if (grads) {
    double sq = 0;
    for (const auto& a : *grads)
      for (float v : a.values) sq += static_cast<double>(v) * v;
    r.grad_norm = std::sqrt(sq);
  }
  return r;
}

LossReport train_step(TrainState& state, std::span<const FourViewBatch> micro,
                      const TrainConfig& cfg, double learning_rate) {
  std::vector<Array<float>> grads;
  auto r = loss_and_gradients(state.model, micro, cfg, &grads);
  r.learning_rate = learning_rate;
  if (!std::isfinite(r.total) || !std::isfinite(r.grad_norm)) {
    r.skipped = true;
    std::ostringstream why;
    why << "non-finite step: total=" << r.total << " mlm=" << r.mlm << " align=" << r.align
        << " koleo=" << r.koleo << " grad_norm=" << r.grad_norm;
    r.skip_reason = why.str();
    return r;
  }
  std::vector<Array<float>*> ptrs;
  for (auto& [n, p] : parameters(state.model)) ptrs.push_back(p);
  state.optimizer.hyper = cfg.adamw;
  state.optimizer.hyper.learning_rate = learning_rate;
  tensor::adamw_step<float>(ptrs, grads, state.optimizer);
  return r;
}

// ---------------------------------------------------------------------------
// metrics

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string metrics_header() { return "step,total,mlm,align,koleo,grad_norm,seconds"; }

std::string format_metrics_row(const MetricsRow& r) {
  return std::to_string(r.step) + "," + num(r.total) + "," + num(r.mlm) + "," + num(r.align) +
         "," + num(r.koleo) + "," + num(r.grad_norm) + "," + num(r.seconds);
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("cannot write metrics " + path.string());
  out << metrics_header() << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
  if (!out) throw TrainError("failed writing metrics " + path.string());
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainError("cannot read metrics " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != metrics_header())
    throw TrainError(path.string() + ": unexpected metrics header");
  std::vector<MetricsRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7)
      throw TrainError(path.string() + ": line " + std::to_string(number) + " has " +
                       std::to_string(cells.size()) + " cells");
    MetricsRow r;
    double* fields[] = {&r.total, &r.mlm, &r.align, &r.koleo, &r.grad_norm, &r.seconds};
    r.step = std::stoull(cells[0]);
    for (int i = 0; i < 6; ++i) {
      const auto& c = cells[static_cast<std::size_t>(i) + 1];
      auto [end, ec] = std::from_chars(c.data(), c.data() + c.size(), *fields[i]);
      if (ec != std::errc())
        throw TrainError(path.string() + ": bad number on line " + std::to_string(number));
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// loop

TrainResult train(std::span<const ParallelPair> pairs, const TrainConfig& cfg,
                  const TrainHooks& hooks, std::optional<TrainState> resume) {
  validate(cfg);
  if (cfg.encoder.vocab_size == 0) throw TrainError("vocab_size is not set");
  if (pairs.size() < cfg.batch_size)
    throw TrainError("training corpus of " + std::to_string(pairs.size()) +
                     " pairs is smaller than one batch of " + std::to_string(cfg.batch_size));
  TrainResult result{resume ? std::move(*resume) : init_state(cfg), {}, 0};
  auto& state = result.state;
  if (state.step > cfg.steps)
    throw TrainError("resume step " + std::to_string(state.step) + " is past steps " +
                     std::to_string(cfg.steps));

  const std::size_t per_epoch = pairs.size() / cfg.batch_size;
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> order(pairs.size());
  const auto start = std::chrono::steady_clock::now();
  const std::size_t micro = cfg.batch_size / cfg.accumulation;

  auto save = [&](const std::string& name) {
    if (!hooks.checkpoint_dir) return;
    std::filesystem::create_directories(*hooks.checkpoint_dir);
    save_checkpoint({cfg, state}, *hooks.checkpoint_dir / name);
  };

  for (std::size_t t = state.step + 1; t <= cfg.steps; ++t) {
    const std::size_t m = t - 1, epoch = m / per_epoch, slot = m % per_epoch;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto rng = derived_stream(cfg.seed, "epoch", epoch);
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    std::vector<ParallelPair> batch;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) batch.push_back(pairs[order[slot * cfg.batch_size + i]]);
    auto rng = derived_stream(cfg.seed, "views", t);
    if (!cfg.flow.symmetric) batch = shuffle_roles(batch, rng);
    const auto views = build_views(batch, cfg.masking, cfg.encoder, rng);
    std::vector<FourViewBatch> parts;
    for (std::size_t k = 0; k < cfg.accumulation; ++k) parts.push_back(views.slice(k * micro, micro));

    auto report = train_step(state, parts, cfg, learning_rate_at(cfg, t));
    state.step = t;
    if (report.skipped) ++result.skipped_steps;

    MetricsRow row{t, report.total, report.mlm, report.align, report.koleo, report.grad_norm, 0.0};
    if (cfg.record_wall_time)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (t % cfg.log_every == 0 || t == cfg.steps) result.metrics.push_back(row);
    if (hooks.on_step) hooks.on_step(row, report);
    if (cfg.checkpoint_every && t % cfg.checkpoint_every == 0 && t != cfg.steps)
      save("checkpoint-" + std::to_string(t) + ".mxc");
    if (hooks.stop_after && t >= hooks.stop_after) break;
  }
  save("final.mxc");
  return result;
}

}  // namespace mexma::trainer
