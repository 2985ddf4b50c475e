#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "mexma/tensor/adamw.hpp"
#include "mexma/tensor/grad_check.hpp"
#include "mexma/tensor/kernels.hpp"
#include "mexma/tensor/ops.hpp"

using namespace mexma::tensor;
using mexma::test::random_array;

namespace {

using Builder = std::function<Tensor<double>(Graph<double>&, std::span<const Tensor<double>>)>;

// Weighted sum against fixed random weights so every output element matters.
Tensor<double> weighted_total(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_array(y.shape(), rng);
  return sum_all(mul(y, y.graph()->constant(w)));
}

double worst(const std::vector<GradCheckEntry>& entries) {
  double w = 0;
  for (const auto& e : entries) w = std::max(w, e.max_relative_error);
  return w;
}

struct PrimitiveCase {
  const char* name;
  std::vector<Shape> inputs;
  Builder build;
  double lo = -1.0, hi = 1.0;
};

}  // namespace

TEST_CASE("softmax of uniform logits is uniform") {
  Graph<double> g;
  auto z = g.constant({3}, {1, 1, 1});
  auto s = softmax(z);
  for (auto v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matmul with identity returns the other operand") {
  std::mt19937_64 rng(1);
  Graph<double> g;
  auto m = random_array({3, 3}, rng);
  auto eye = g.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = matmul(eye, g.constant(m));
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.values()[i] == m.values[i]);
}

TEST_CASE("layer-norm of a constant vector is zero") {
  Graph<double> g;
  auto out = layer_norm(g.constant({3}, {2.5, 2.5, 2.5}), -1, 1e-5);
  for (auto v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("backward: product rule on scalars") {
  Graph<double> g;
  auto x = g.variable({1}, {2.0});
  auto y = g.variable({1}, {3.0});
  auto loss = sum_all(mul(x, y));
  g.backward(loss);
  CHECK(g.grad(x).values[0] == 3.0);
  CHECK(g.grad(y).values[0] == 2.0);
}

TEST_CASE("backward: sum of softmax has zero gradient") {
  std::mt19937_64 rng(2);
  Graph<double> g;
  auto z = g.variable(random_array({5}, rng, -3, 3));
  g.backward(sum_all(softmax(z)));
  for (auto v : g.grad(z).values) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("backward: errors") {
  Graph<double> g;
  auto x = g.variable({2}, {1.0, 2.0});
  CHECK_THROWS_AS(g.backward(x), GraphError);
  Graph<double> other;
  auto y = other.variable({1}, {1.0});
  CHECK_THROWS_AS(g.backward(y), GraphError);
  CHECK_THROWS_AS(g.backward(Tensor<double>{}), GraphError);
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Graph<double> g;
  auto a = g.constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = g.constant({2, 3}, std::vector<double>(6, 1.0));
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.primitive() == "matmul");
    CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(sub(a, g.constant({3}, {1, 2, 3})), ShapeError);
  const Tensor<double> in[] = {a};
  CHECK_THROWS_AS(apply_primitive<double>("conv2d", in), UnknownPrimitive);
}

TEST_CASE("3-layer matmul+gelu chain matches central differences") {
  std::mt19937_64 rng(3);
  std::vector<Array<double>> inputs = {random_array({4, 6}, rng), random_array({6, 5}, rng),
                                       random_array({5, 5}, rng), random_array({5, 3}, rng)};
  LossBuilder f = [](Graph<double>&, std::span<const Tensor<double>> in) {
    auto h = gelu(matmul(in[0], in[1]));
    h = gelu(matmul(h, in[2]));
    h = gelu(matmul(h, in[3]));
    return weighted_total(h, 11);
  };
  auto report = grad_check(f, inputs, {.eps = 1e-5});
  CHECK(worst(report) < 1e-4);
}

TEST_CASE("grad_check: sum of squares and a constant function") {
  std::mt19937_64 rng(4);
  std::vector<Array<double>> x = {random_array({5}, rng)};
  LossBuilder squares = [](Graph<double>&, std::span<const Tensor<double>> in) {
    return sum_all(square(in[0]));
  };
  CHECK(worst(grad_check(squares, x)) < 1e-6);

  LossBuilder constant = [](Graph<double>& g, std::span<const Tensor<double>>) {
    return g.constant({1}, {4.2});
  };
  auto r = grad_check(constant, x);
  CHECK(r[0].max_relative_error == 0.0);

  LossBuilder vector_valued = [](Graph<double>&, std::span<const Tensor<double>> in) {
    return in[0];
  };
  CHECK_THROWS_AS(grad_check(vector_valued, x), GradCheckError);
  LossBuilder infinite = [](Graph<double>&, std::span<const Tensor<double>> in) {
    return sum_all(log(scale(in[0], 0.0)));
  };
  CHECK_THROWS_AS(grad_check(infinite, x), GradCheckError);
}

TEST_CASE("every primitive passes grad_check on three shapes") {
  auto unary = [](auto op) {
    return Builder([op](Graph<double>&, std::span<const Tensor<double>> in) {
      return weighted_total(op(in[0]), 7);
    });
  };
  auto binary = [](auto op) {
    return Builder([op](Graph<double>&, std::span<const Tensor<double>> in) {
      return weighted_total(op(in[0], in[1]), 7);
    });
  };
  std::vector<PrimitiveCase> cases;
  auto add_cases = [&](const char* name, std::vector<std::vector<Shape>> shape_sets, Builder b,
                       double lo = -1.0, double hi = 1.0) {
    for (auto& s : shape_sets) cases.push_back({name, s, b, lo, hi});
  };

  add_cases("matmul", {{{2, 3}, {3, 4}}, {{5, 2}, {2, 3}}, {{2, 3, 4}, {2, 4, 2}}},
            binary([](auto a, auto b) { return matmul(a, b); }));
  add_cases("matmul-transposed", {{{3, 2}, {4, 3}}, {{2, 5}, {3, 2}}, {{2, 4, 3}, {2, 2, 4}}},
            binary([](auto a, auto b) { return matmul(a, b, true, true); }));
  add_cases("add", {{{2, 3}, {2, 3}}, {{4, 3}, {3}}, {{2, 3, 4}, {3, 4}}},
            binary([](auto a, auto b) { return add(a, b); }));
  add_cases("sub", {{{2, 3}, {2, 3}}, {{5}, {5}}, {{2, 2, 2}, {2, 2, 2}}},
            binary([](auto a, auto b) { return sub(a, b); }));
  add_cases("elementwise-mul", {{{2, 3}, {2, 3}}, {{4, 3}, {3}}, {{2, 3, 4}, {4}}},
            binary([](auto a, auto b) { return mul(a, b); }));
  add_cases("scalar-scale", {{{3}}, {{2, 4}}, {{2, 2, 3}}},
            unary([](auto a) { return scale(a, -1.7); }));
  add_cases("concat", {{{2, 3}, {2, 3}}, {{2, 3}, {4, 3}}, {{2, 1, 3}, {2, 4, 3}}},
            Builder([](Graph<double>&, std::span<const Tensor<double>> in) {
              const int axis = in[0].shape()[1] == in[1].shape()[1] && in[0].rank() == 2 &&
                                       in[0].shape()[0] == in[1].shape()[0]
                                   ? 1
                                   : (in[0].rank() == 3 ? 1 : 0);
              return weighted_total(concat(in, axis), 7);
            }));
  add_cases("slice", {{{5}}, {{3, 6}}, {{2, 4, 3}}},
            unary([](auto a) { return slice(a, -1, 1, a.shape().back() - 1); }));
  add_cases("gather-rows", {{{4, 3}}, {{6, 2}}, {{3, 5}}},
            unary([](auto a) {
              const std::size_t rows[] = {2, 0, 2, 1};
              return gather_rows(a, std::span<const std::size_t>(rows));
            }));
  add_cases("softmax", {{{5}}, {{3, 4}}, {{2, 3, 4}}},
            unary([](auto a) { return softmax(a, a.rank() == 3 ? 1 : -1); }), -2, 2);
  add_cases("layer-norm", {{{5}}, {{3, 4}}, {{2, 3, 4}}},
            unary([](auto a) { return layer_norm(a, a.rank() == 3 ? 1 : -1, 1e-5); }), -2, 2);
  add_cases("gelu", {{{5}}, {{3, 4}}, {{2, 3, 2}}}, unary([](auto a) { return gelu(a); }), -3, 3);
  add_cases("mean", {{{5}}, {{3, 4}}, {{2, 3, 4}}},
            unary([](auto a) { return mean(a, static_cast<int>(a.rank()) - 1); }));
  add_cases("sum", {{{5}}, {{3, 4}}, {{2, 3, 4}}}, unary([](auto a) { return sum(a, 0); }));
  add_cases("l2-normalize", {{{5}}, {{3, 4}}, {{2, 3, 4}}},
            unary([](auto a) { return l2_normalize(a, a.rank() == 3 ? 1 : -1, 1e-12); }));
  add_cases("log", {{{5}}, {{3, 4}}, {{2, 3, 2}}}, unary([](auto a) { return log(a); }), 0.5, 2.0);
  add_cases("exp", {{{5}}, {{3, 4}}, {{2, 3, 2}}}, unary([](auto a) { return exp(a); }));
  add_cases("square", {{{5}}, {{3, 4}}, {{2, 3, 2}}}, unary([](auto a) { return square(a); }));
  add_cases("transpose", {{{2, 3}}, {{3, 5}}, {{2, 3, 4}}},
            unary([](auto a) {
              return a.rank() == 3 ? transpose(a, {2, 0, 1}) : transpose(a);
            }));
  add_cases("masked-fill", {{{6}}, {{3, 4}}, {{2, 2, 3}}},
            unary([](auto a) {
              std::vector<std::uint8_t> m(a.numel());
              for (std::size_t i = 0; i < m.size(); i += 3) m[i] = 1;
              return masked_fill(a, std::span<const std::uint8_t>(m), -5.0);
            }));
  add_cases("reshape", {{{6}}, {{3, 4}}, {{2, 3, 2}}},
            unary([](auto a) { return reshape(a, {a.numel()}); }));
  add_cases("softmax-cross-entropy", {{{1, 4}}, {{3, 5}}, {{6, 2}}},
            Builder([](Graph<double>&, std::span<const Tensor<double>> in) {
              std::vector<std::size_t> t(in[0].dim(0));
              for (std::size_t i = 0; i < t.size(); ++i) t[i] = (i * 3 + 1) % in[0].dim(1);
              return softmax_cross_entropy(in[0], std::span<const std::size_t>(t));
            }),
            -2, 2);
  add_cases("clamp-min", {{{5}}, {{3, 4}}, {{2, 3, 2}}},
            unary([](auto a) { return clamp_min(a, 0.05); }));

  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    std::mt19937_64 rng(seed++);
    std::vector<Array<double>> inputs;
    for (const auto& s : c.inputs) {
      auto a = random_array(s, rng, c.lo, c.hi);
      // Keep clamp inputs away from the kink.
      if (std::string(c.name) == "clamp-min")
        for (auto& v : a.values)
          if (std::abs(v - 0.05) < 0.02) v += 0.1;
      inputs.push_back(std::move(a));
    }
    auto report = grad_check(c.build, inputs, {.eps = 1e-5});
    INFO(c.name << " on " << to_string(c.inputs[0]));
    CHECK(worst(report) < 1e-4);
  }
}

TEST_CASE("apply_primitive dispatches every catalog name") {
  std::mt19937_64 rng(5);
  Graph<double> g;
  auto a = g.variable(random_array({2, 3}, rng, 0.5, 1.5));
  auto b = g.variable(random_array({2, 3}, rng));
  for (auto name : primitive_catalog()) {
    PrimitiveAttrs at;
    std::vector<Tensor<double>> in = {a};
    if (name == "add" || name == "sub" || name == "elementwise-mul" || name == "concat") in.push_back(b);
    if (name == "matmul") {
      in.push_back(b);
      at.transpose_b = true;
    }
    if (name == "slice") at.length = 2;
    if (name == "gather-rows" || name == "softmax-cross-entropy") at.indices = {1, 0};
    if (name == "reshape") at.shape = {6};
    if (name == "masked-fill") at.mask = {1, 0, 0, 0, 0, 1};
    auto out = apply_primitive<double>(name, in, at);
    CHECK(out.primitive() == name);
  }
}

TEST_CASE("stop-gradient matches the constant-substitution oracle") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    auto x0 = random_array({4}, rng);
    // L(u, x) = sum(exp(u) * x) + sum(x^2) with u = gelu(x * 2)
    Graph<double> g;
    auto x = g.variable(x0);
    auto u = stop_gradient(gelu(scale(x, 2.0)));
    g.backward(add(sum_all(mul(exp(u), x)), sum_all(square(x))));
    auto with_stop = g.grad(x);

    Graph<double> oracle;
    auto xo = oracle.variable(x0);
    auto u_value = gelu(scale(oracle.constant(x0), 2.0)).to_array();
    auto uc = oracle.constant(u_value);
    oracle.backward(add(sum_all(mul(exp(uc), xo)), sum_all(square(xo))));
    auto expected = oracle.grad(xo);
    for (std::size_t i = 0; i < 4; ++i) CHECK(with_stop.values[i] == expected.values[i]);
  }
}

TEST_CASE("property: softmax rows sum to one, l2-normalize gives unit norm") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> extent(1, 9);
  for (int trial = 0; trial < 200; ++trial) {
    Shape s = {extent(rng), extent(rng), extent(rng)};
    const int axis = static_cast<int>(trial % 3);
    Graph<double> g;
    auto x = g.constant(random_array(s, rng, -20, 20));
    auto p = softmax(x, axis);
    auto n = l2_normalize(x, axis, 1e-12);
    const AxisSplit sp = split_at(s, static_cast<std::size_t>(axis));
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double total = 0, sq = 0;
        for (std::size_t j = 0; j < sp.extent; ++j) {
          const auto idx = (o * sp.extent + j) * sp.inner + i;
          CHECK(p.values()[idx] >= 0.0);
          total += p.values()[idx];
          sq += n.values()[idx] * n.values()[idx];
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
      }
  }
}

TEST_CASE("forward and backward are bitwise deterministic") {
  std::mt19937_64 rng(8);
  auto a0 = random_array<float>({8, 16}, rng);
  auto b0 = random_array<float>({16, 8}, rng);
  auto run = [&] {
    Graph<float> g;
    auto a = g.variable(a0);
    auto b = g.variable(b0);
    auto loss = sum_all(softmax(gelu(matmul(a, b))));
    auto loss2 = add(loss, mean_all(layer_norm(matmul(a, b), -1, 1e-5f)));
    g.backward(loss2);
    return std::pair(g.grad(a), loss2.item());
  };
  auto [g1, l1] = run();
  auto [g2, l2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("backward populates every reachable gradient slot") {
  Graph<double> g;
  auto x = g.variable({3}, {1, 2, 3});
  auto unused_branch = g.variable({3}, {1, 1, 1});
  auto loss = sum_all(mul(x, stop_gradient(unused_branch)));
  g.backward(loss);
  CHECK(g.has_grad(x));
  CHECK_FALSE(g.has_grad(unused_branch));
}

TEST_CASE("kernels: parallel matches the serial reference") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> extent(1, 37);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t batch = 1 + trial % 3, m = extent(rng), n = extent(rng), k = extent(rng);
    auto a = random_array({batch * m * k}, rng);
    auto b = random_array({batch * k * n}, rng);
    std::vector<double> c_ref(batch * m * n), c_par(batch * m * n);
    kernels::reference::gemm<double>(batch, m, n, k, a.values, b.values, c_ref);
    kernels::parallel::gemm<double>(batch, m, n, k, a.values, b.values, c_par);
    for (std::size_t i = 0; i < c_ref.size(); ++i)
      CHECK(std::abs(c_ref[i] - c_par[i]) <= 1e-12 * (1.0 + std::abs(c_ref[i])));
    // A stored (k x m): the transposed-operand kernel
    std::vector<double> t_ref(batch * m * n), t_par(batch * m * n);
    kernels::reference::gemm_tn<double>(batch, m, n, k, a.values, b.values, t_ref);
    kernels::parallel::gemm_tn<double>(batch, m, n, k, a.values, b.values, t_par);
    for (std::size_t i = 0; i < t_ref.size(); ++i)
      CHECK(std::abs(t_ref[i] - t_par[i]) <= 1e-12 * (1.0 + std::abs(t_ref[i])));

    std::vector<double> s_ref(m * n), s_par(m * n), y_ref(m * n), y_par(m * n), i_ref(m), i_par(m);
    std::span<const double> x(c_ref.data(), m * n);
    kernels::reference::softmax_rows<double>(m, n, x, s_ref);
    kernels::parallel::softmax_rows<double>(m, n, x, s_par);
    kernels::reference::layer_norm_rows<double>(m, n, 1e-5, x, y_ref, i_ref);
    kernels::parallel::layer_norm_rows<double>(m, n, 1e-5, x, y_par, i_par);
    CHECK(s_ref == s_par);
    CHECK(y_ref == y_par);
  }
}

TEST_CASE("adamw: decay-only update with zero gradient") {
  auto w = Array<double>({3}, {1.0, -2.0, 0.5});
  auto expected = w;
  const Shape shapes[] = {w.shape};
  auto state = AdamWState<double>::for_shapes(shapes, {.learning_rate = 0.1, .weight_decay = 0.01});
  Array<double>* params[] = {&w};
  const Array<double> grads[] = {Array<double>::zeros({3})};
  adamw_step<double>(params, grads, state);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(w.values[i] == doctest::Approx(expected.values[i] * (1 - 0.1 * 0.01)).epsilon(1e-14));
  CHECK(state.step == 1);
}

TEST_CASE("adamw: constant gradient moves each weight by -sign(g) * lr") {
  auto w = Array<double>({4}, {0.0, 0.0, 0.0, 0.0});
  const Shape shapes[] = {w.shape};
  auto state = AdamWState<double>::for_shapes(shapes, {.learning_rate = 1e-3, .weight_decay = 0.0});
  Array<double>* params[] = {&w};
  const Array<double> grads[] = {Array<double>({4}, {0.3, -2.0, 1e-2, -5e-3})};
  std::vector<double> before;
  for (int step = 0; step < 500; ++step) {
    before = w.values;
    adamw_step<double>(params, grads, state);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const double delta = w.values[i] - before[i];
    const double expected = -std::copysign(1e-3, grads[0].values[i]);
    CHECK(delta == doctest::Approx(expected).epsilon(1e-5));
  }
  CHECK(state.step == 500);
}

TEST_CASE("adamw: identical inputs give bitwise-identical updates; mismatches throw") {
  std::mt19937_64 rng(10);
  auto w1 = random_array<float>({5, 3}, rng);
  auto w2 = w1;
  auto g = random_array<float>({5, 3}, rng);
  const Shape shapes[] = {w1.shape};
  auto s1 = AdamWState<float>::for_shapes(shapes);
  auto s2 = AdamWState<float>::for_shapes(shapes);
  Array<float>* p1[] = {&w1};
  Array<float>* p2[] = {&w2};
  const Array<float> grads[] = {g};
  for (int i = 0; i < 3; ++i) {
    adamw_step<float>(p1, grads, s1);
    adamw_step<float>(p2, grads, s2);
  }
  CHECK(w1 == w2);
  const Array<float> bad[] = {Array<float>::zeros({3, 5})};
  CHECK_THROWS_AS(adamw_step<float>(p1, bad, s1), ShapeError);
}

TEST_CASE("adamw: zero learning rate leaves parameters bitwise unchanged") {
  std::mt19937_64 rng(11);
  auto w = random_array<float>({6}, rng);
  const auto original = w;
  const Shape shapes[] = {w.shape};
  auto state = AdamWState<float>::for_shapes(shapes, {.learning_rate = 0.0});
  Array<float>* params[] = {&w};
  const Array<float> grads[] = {random_array<float>({6}, rng)};
  adamw_step<float>(params, grads, state);
  CHECK(w == original);
}
