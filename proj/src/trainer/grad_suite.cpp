#include "mexma/trainer/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mexma/tensor/grad_check.hpp"
#include "mexma/tensor/ops.hpp"

namespace mexma::trainer {

using tensor::Array;
using tensor::Graph;
using tensor::PrimitiveAttrs;
using tensor::Shape;
using tensor::Tensor;

namespace {

Array<double> random_array(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(tensor::numel(shape));
  for (auto& x : v) x = d(rng);
  return Array<double>(shape, std::move(v));
}

// Fixed irregular weights turn any output into a scalar with a non-trivial gradient.
Tensor<double> weighted_total(const Tensor<double>& y) {
  auto& g = *y.graph();
  std::vector<double> w(y.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 7.0 * static_cast<double>(i));
  return tensor::sum_all(tensor::mul(y, g.constant(y.shape(), std::move(w))));
}

struct PrimitiveCase {
  std::vector<std::vector<Shape>> shape_sets;
  std::function<PrimitiveAttrs(const std::vector<Shape>&)> attrs;
  double lo = -1, hi = 1;
};

PrimitiveAttrs none(const std::vector<Shape>&) { return {}; }

PrimitiveAttrs last_axis(const std::vector<Shape>&) {
  PrimitiveAttrs a;
  a.axis = -1;
  return a;
}

PrimitiveCase case_for(std::string_view name) {
  if (name == "matmul")
    return {{{{2, 3}, {3, 4}}, {{5, 2}, {2, 3}}, {{2, 3, 4}, {2, 4, 2}}}, none};
  if (name == "add" || name == "elementwise-mul")
    return {{{{2, 3}, {2, 3}}, {{4, 3}, {3}}, {{2, 3, 4}, {3, 4}}}, none};
  if (name == "sub") return {{{{2, 3}, {2, 3}}, {{5}, {5}}, {{2, 2, 2}, {2, 2, 2}}}, none};
  if (name == "scalar-scale")
    return {{{{3}}, {{2, 4}}, {{2, 2, 3}}}, [](const auto&) {
              PrimitiveAttrs a;
              a.scalar = -1.7;
              return a;
            }};
  if (name == "concat")
    return {{{{2, 3}, {2, 3}}, {{2, 3}, {4, 3}}, {{2, 1, 3}, {2, 4, 3}}}, [](const auto& s) {
              PrimitiveAttrs a;
              a.axis = s[0].size() == 3 ? 1 : (s[0][0] == s[1][0] ? 1 : 0);
              return a;
            }};
  if (name == "slice")
    return {{{{5}}, {{3, 6}}, {{2, 4, 3}}}, [](const auto& s) {
              PrimitiveAttrs a;
              a.axis = -1;
              a.start = 1;
              a.length = s[0].back() - 1;
              return a;
            }};
  if (name == "gather-rows")
    return {{{{4, 3}}, {{6, 2}}, {{3, 5}}}, [](const auto&) {
              PrimitiveAttrs a;
              a.indices = {2, 0, 2, 1};
              return a;
            }};
  if (name == "softmax" || name == "layer-norm" || name == "l2-normalize")
    return {{{{5}}, {{3, 4}}, {{2, 3, 4}}}, [](const auto& s) {
              PrimitiveAttrs a;
              a.axis = s[0].size() == 3 ? 1 : -1;
              return a;
            }, -2, 2};
  if (name == "gelu") return {{{{5}}, {{3, 4}}, {{2, 3, 2}}}, none, -3, 3};
  if (name == "mean" || name == "sum") return {{{{5}}, {{3, 4}}, {{2, 3, 4}}}, last_axis};
  if (name == "log") return {{{{5}}, {{3, 4}}, {{2, 3, 2}}}, none, 0.5, 2.0};
  if (name == "exp" || name == "square") return {{{{5}}, {{3, 4}}, {{2, 3, 2}}}, none};
  if (name == "transpose")
    return {{{{2, 3}}, {{3, 5}}, {{2, 3, 4}}}, [](const auto& s) {
              PrimitiveAttrs a;
              if (s[0].size() == 3) a.perm = {2, 0, 1};
              return a;
            }};
  if (name == "masked-fill")
    return {{{{6}}, {{3, 4}}, {{2, 2, 3}}}, [](const auto& s) {
              PrimitiveAttrs a;
              a.mask.assign(tensor::numel(s[0]), 0);
              for (std::size_t i = 0; i < a.mask.size(); i += 3) a.mask[i] = 1;
              a.scalar = -5;
              return a;
            }};
  if (name == "reshape")
    return {{{{6}}, {{3, 4}}, {{2, 3, 2}}}, [](const auto& s) {
              PrimitiveAttrs a;
              a.shape = {tensor::numel(s[0])};
              return a;
            }};
  if (name == "softmax-cross-entropy")
    return {{{{1, 4}}, {{3, 5}}, {{6, 2}}}, [](const auto& s) {
              PrimitiveAttrs a;
              for (std::size_t i = 0; i < s[0][0]; ++i) a.indices.push_back((i * 3 + 1) % s[0][1]);
              return a;
            }, -2, 2};
  if (name == "clamp-min")
    return {{{{5}}, {{3, 4}}, {{2, 3, 2}}}, [](const auto&) {
              PrimitiveAttrs a;
              a.scalar = 0.05;
              return a;
            }};
  throw TrainError("no gradient check case for primitive '" + std::string(name) + "'");
}

// The stop-gradient primitive has no derivative to difference; it is compared with the
// graph that feeds the same value in as a constant.
GradCheckRow stop_gradient_row(std::mt19937_64& rng) {
  double worst = 0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 3; ++trial) {
    auto x0 = random_array({4}, rng, -1, 1);
    Graph<double> g;
    auto x = g.variable(x0);
    auto u = tensor::stop_gradient(tensor::gelu(tensor::scale(x, 2.0)));
    g.backward(tensor::add(tensor::sum_all(tensor::mul(tensor::exp(u), x)), tensor::sum_all(tensor::square(x))));
    Graph<double> o;
    auto xo = o.variable(x0);
    auto uc = o.constant(tensor::gelu(tensor::scale(o.constant(x0), 2.0)).to_array());
    o.backward(tensor::add(tensor::sum_all(tensor::mul(tensor::exp(uc), xo)), tensor::sum_all(tensor::square(xo))));
    const auto a = g.grad(x), b = o.grad(xo);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
      ++checked;
    }
  }
  return {"stop-gradient", worst, checked};
}

// Random sentences framed by CLS/EOS with independent masks for both sides.
FourViewBatch random_views(const EncoderConfig& c, const MaskingPolicy& policy, std::size_t batch,
                           std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(2, c.max_seq_len - 2);
  std::uniform_int_distribution<TokenId> id(5, static_cast<TokenId>(c.vocab_size - 1));
  std::vector<ParallelPair> pairs;
  for (std::size_t b = 0; b < batch; ++b) {
    ParallelPair p;
    p.id = b + 1;
    p.source = {c.special.cls};
    p.target = {c.special.cls};
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
      p.source.push_back(id(rng));
      p.target.push_back(id(rng));
    }
    p.source.push_back(c.special.eos);
    p.target.push_back(c.special.eos);
    pairs.push_back(std::move(p));
  }
  // at least one masked position per side even at low ratios
  MaskingPolicy p = policy;
  p.ratio = std::max(p.ratio, 0.5);
  return build_views(pairs, p, c, rng);
}

EncoderConfig narrow(const TrainConfig& cfg, double init_std, std::uint64_t seed) {
  EncoderConfig c = cfg.encoder;
  c.model_dim = 2 * c.num_heads;
  c.ff_dim = 2 * c.model_dim;
  c.vocab_size = 11;
  c.max_seq_len = 6;
  c.init_std = init_std;
  c.seed = seed;
  return c;
}

template <typename W>
W assign_leaves(std::span<const Tensor<double>> in, std::size_t& i, W w) {
  for (auto& [n, t] : encoder::fields<W, Tensor<double>>(w)) *t = in[i++];
  return w;
}

}  // namespace

std::vector<GradCheckRow> primitive_grad_checks(std::uint64_t seed) {
  std::vector<GradCheckRow> rows;
  std::mt19937_64 rng(seed);
  for (auto name : tensor::primitive_catalog()) {
    if (name == "stop-gradient") {
      rows.push_back(stop_gradient_row(rng));
      continue;
    }
    const auto c = case_for(name);
    GradCheckRow row{std::string(name), 0, 0};
    for (const auto& shapes : c.shape_sets) {
      std::vector<Array<double>> inputs;
      for (const auto& s : shapes) {
        auto a = random_array(s, rng, c.lo, c.hi);
        if (name == "clamp-min")  // keep inputs off the kink
          for (auto& v : a.values)
            if (std::abs(v - 0.05) < 0.02) v += 0.1;
        inputs.push_back(std::move(a));
      }
      const auto attrs = c.attrs(shapes);
      tensor::LossBuilder f = [&](Graph<double>&, std::span<const Tensor<double>> in) {
        return weighted_total(tensor::apply_primitive<double>(name, in, attrs));
      };
      for (const auto& e : tensor::grad_check(f, inputs, {.eps = 1e-5})) {
        row.max_relative_error = std::max(row.max_relative_error, e.max_relative_error);
        row.checked += e.checked;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<GradCheckRow> model_grad_check(const TrainConfig& cfg, std::uint64_t seed, double init_std) {
  const EncoderConfig c = narrow(cfg, init_std, seed);
  auto params = encoder::init_params<double>(c);
  auto head = objectives::init_head<double>(c, cfg.head_layers);
  std::mt19937_64 rng(seed);
  const auto views = random_views(c, cfg.masking, 2, rng);

  std::vector<Array<double>> inputs;
  std::vector<std::string> names;
  for (auto& [n, a] : encoder::fields<encoder::EncoderParams<double>, Array<double>>(params, "encoder.")) {
    inputs.push_back(*a);
    names.push_back(n);
  }
  for (auto& [n, a] : encoder::fields<objectives::UnmaskHeadParams<double>, Array<double>>(head, "head.")) {
    inputs.push_back(*a);
    names.push_back(n);
  }

  // Token gradients off is not the derivative of the forward value (stop_gradient_check
  // covers it); the check runs the configured flow with them on.
  auto flow = cfg.flow;
  flow.token_gradients = true;
  tensor::LossBuilder f = [&](Graph<double>&, std::span<const Tensor<double>> in) {
    std::size_t i = 0;
    encoder::EncoderWeights<Tensor<double>> w;
    w.layers.resize(c.num_layers);
    w = assign_leaves(in, i, std::move(w));
    objectives::UnmaskHeadWeights<Tensor<double>> h;
    h.layers.resize(cfg.head_layers);
    h = assign_leaves(in, i, std::move(h));
    auto run = [&](const auto& rows) {
      return encoder::encode(w, c, encoder::TokenBatch::from_rows(rows, c.special.pad));
    };
    auto clean_a = run(views.clean_a), masked_a = run(views.masked_a);
    auto clean_b = run(views.clean_b), masked_b = run(views.masked_b);
    objectives::ViewEncodings<double> v{&clean_a, &masked_a, &clean_b, &masked_b, &views.mask_a, &views.mask_b};
    if (!flow.symmetric) v = {nullptr, &masked_a, &clean_b, nullptr, &views.mask_a, nullptr};
    return objectives::total_loss(v, cfg.weights, flow, h, c.num_heads).total;
  };
  const auto report = tensor::grad_check(f, inputs, {.eps = 1e-5});
  std::vector<GradCheckRow> rows;
  for (std::size_t i = 0; i < report.size(); ++i)
    rows.push_back({names[i], report[i].max_relative_error, report[i].checked});
  return rows;
}

StopGradientCheck stop_gradient_check(const TrainConfig& cfg, std::uint64_t seed) {
  const EncoderConfig c = narrow(cfg, 0.3, seed);
  auto params = encoder::init_params<double>(c);
  auto head = objectives::init_head<double>(c, cfg.head_layers);
  std::mt19937_64 rng(seed);
  const auto views = random_views(c, cfg.masking, 4, rng);

  // Unmasking loss only, both directions.
  const objectives::LossWeights mlm_only{0.0, 1.0, 0.0};
  auto grads = [&](bool token_gradients, bool freeze_masked) {
    Graph<double> g;
    auto w = encoder::bind<encoder::EncoderWeights, double>(g, params, true);
    auto h = encoder::bind<objectives::UnmaskHeadWeights, double>(g, head, false);
    auto run = [&](const auto& rows) {
      return encoder::encode(w, c, encoder::TokenBatch::from_rows(rows, c.special.pad));
    };
    auto clean_a = run(views.clean_a), masked_a = run(views.masked_a);
    auto clean_b = run(views.clean_b), masked_b = run(views.masked_b);
    if (freeze_masked) {
      masked_a.hidden = g.constant(masked_a.hidden.to_array());
      masked_b.hidden = g.constant(masked_b.hidden.to_array());
    }
    GradFlowConfig flow = cfg.flow;
    flow.token_gradients = token_gradients;
    flow.koleo = false;
    objectives::ViewEncodings<double> v{&clean_a, &masked_a, &clean_b, &masked_b, &views.mask_a, &views.mask_b};
    g.backward(objectives::total_loss(v, mlm_only, flow, h, c.num_heads).total);
    std::vector<Array<double>> out;
    for (auto& [n, t] : encoder::fields<encoder::EncoderWeights<Tensor<double>>, Tensor<double>>(w))
      out.push_back(g.grad(*t));
    return out;
  };
  const auto off = grads(false, false), oracle = grads(true, true), on = grads(true, false);
  StopGradientCheck r;
  for (std::size_t i = 0; i < off.size(); ++i)
    for (std::size_t j = 0; j < off[i].values.size(); ++j) {
      r.max_abs_diff_off = std::max(r.max_abs_diff_off, std::abs(off[i].values[j] - oracle[i].values[j]));
      r.max_abs_diff_on = std::max(r.max_abs_diff_on, std::abs(on[i].values[j] - oracle[i].values[j]));
    }
  return r;
}

}  // namespace mexma::trainer
