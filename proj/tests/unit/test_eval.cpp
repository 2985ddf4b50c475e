#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "mexma/eval/eval.hpp"

using namespace mexma;
using namespace mexma::eval;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "mexma_eval_tests";
  fs::create_directories(dir);
  return dir / name;
}

EmbeddingSet gaussian_set(std::size_t n, std::size_t dim, std::mt19937_64& rng, std::uint64_t first_id = 0) {
  std::normal_distribution<float> d;
  EmbeddingSet s;
  s.dim = dim;
  for (std::size_t i = 0; i < n * dim; ++i) s.matrix.push_back(d(rng));
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back(first_id + i);
  return s;
}

// Small integer entries make exact ties between candidates common.
EmbeddingSet lattice_set(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-2, 2);
  EmbeddingSet s;
  s.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    bool nonzero = false;
    for (std::size_t j = 0; j < dim; ++j) {
      float v = static_cast<float>(d(rng));
      if (j + 1 == dim && !nonzero && v == 0) v = 1;
      nonzero = nonzero || v != 0;
      s.matrix.push_back(v);
    }
    s.ids.push_back(i);
  }
  return s;
}

// ---- brute-force oracle --------------------------------------------------
// Written from the definition with nested loops and full sorts. The only shared
// convention is the rounding recipe: a unit vector is v * (1 / sqrt(sum v^2)) in
// double, and the k best cosines are summed from the largest down.

std::vector<double> oracle_unit(const EmbeddingSet& s, std::size_t i) {
  double sq = 0;
  for (std::size_t d = 0; d < s.dim; ++d) sq += static_cast<double>(s.matrix[i * s.dim + d]) * s.matrix[i * s.dim + d];
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<double> u(s.dim);
  for (std::size_t d = 0; d < s.dim; ++d) u[d] = s.matrix[i * s.dim + d] * inv;
  return u;
}

double oracle_cos(const EmbeddingSet& a, std::size_t i, const EmbeddingSet& b, std::size_t j) {
  auto u = oracle_unit(a, i), v = oracle_unit(b, j);
  double s = 0;
  for (std::size_t d = 0; d < u.size(); ++d) s += u[d] * v[d];
  return s;
}

double oracle_neighborhood(const EmbeddingSet& a, std::size_t i, const EmbeddingSet& pool, std::size_t k) {
  std::vector<double> all;
  for (std::size_t j = 0; j < pool.size(); ++j) all.push_back(oracle_cos(a, i, pool, j));
  std::sort(all.begin(), all.end(), std::greater<>());
  double s = 0;
  for (std::size_t r = 0; r < k; ++r) s += all[r];
  return s / static_cast<double>(k);
}

struct OracleResult {
  std::vector<std::size_t> best;
  std::vector<double> margin;
  std::size_t errors = 0;
};

OracleResult oracle_xsim(const EmbeddingSet& src, const EmbeddingSet& pool, std::size_t n_real,
                         std::size_t k) {
  OracleResult r;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double ni = oracle_neighborhood(src, i, pool, k);
    std::size_t best = 0;
    double best_m = 0;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      const double m = oracle_cos(src, i, pool, j) / ((ni + oracle_neighborhood(pool, j, src, k)) / 2.0);
      if (j == 0 || m > best_m) {
        best_m = m;
        best = j;
      }
    }
    r.best.push_back(best);
    r.margin.push_back(best_m);
    if (best >= n_real || pool.ids[best] != src.ids[i]) ++r.errors;
  }
  return r;
}

EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b) {
  EmbeddingSet s = a;
  s.matrix.insert(s.matrix.end(), b.matrix.begin(), b.matrix.end());
  s.ids.insert(s.ids.end(), b.ids.begin(), b.ids.end());
  return s;
}

EmbeddingSet scaled(EmbeddingSet s, float c) {
  for (auto& v : s.matrix) v *= c;
  return s;
}

struct SmallModel {
  corpus::SyntheticCorpus corpus;
  encoder::EncoderConfig config;
  encoder::EncoderParams<float> params;
};

SmallModel small_model(std::size_t n = 24) {
  corpus::SyntheticSpec spec;
  spec.content_vocab = 20;
  spec.min_length = 3;
  spec.max_length = 7;
  SmallModel m{corpus::generate_synthetic(spec, n), {}, {}};
  m.config.num_layers = 1;
  m.config.num_heads = 2;
  m.config.model_dim = 16;
  m.config.ff_dim = 32;
  m.config.vocab_size = m.corpus.vocab.size();
  m.config.seed = 3;
  m.params = encoder::init_params<float>(m.config);
  return m;
}

}  // namespace

TEST_CASE("margin: self match with orthogonal distractors scores 1") {
  EmbeddingSet cx, cy;
  cx.dim = cy.dim = 4;
  cx.matrix = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  cx.ids = {0, 1, 2};
  cy = cx;
  const std::vector<float> x = {1, 0, 0, 0};
  CHECK(margin_score(x, x, cx, cy, 1) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<float> zero = {0, 0, 0, 0};
  CHECK_THROWS_AS(margin_score(zero, x, cx, cy, 1), EvalError);
  CHECK_THROWS_AS(margin_score(x, x, cx, cy, 4), EvalError);  // k above the pool size
}

TEST_CASE("margin: positive scaling of x leaves the score unchanged") {
  std::mt19937_64 rng(1);
  auto cx = gaussian_set(10, 6, rng), cy = gaussian_set(10, 6, rng);
  std::vector<float> x(cx.row(2).begin(), cx.row(2).end()), y(cy.row(5).begin(), cy.row(5).end());
  const double base = margin_score(x, y, cx, cy, 4);
  for (float c : {0.001f, 0.5f, 3.0f, 1000.0f}) {
    auto xs = x;
    for (auto& v : xs) v *= c;
    CHECK(margin_score(xs, y, cx, cy, 4) == doctest::Approx(base).epsilon(1e-6));
  }
}

TEST_CASE("margin: 8x8 sets match the double-loop oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto cx = gaussian_set(8, 5, rng), cy = gaussian_set(8, 5, rng);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        const double expect = oracle_cos(cx, i, cy, j) /
                              ((oracle_neighborhood(cx, i, cy, 4) + oracle_neighborhood(cy, j, cx, 4)) / 2.0);
        const double got = margin_score(cx.row(i), cy.row(j), cx, cy, 4);
        CHECK(std::abs(got - expect) <= 1e-9);
        CHECK(got == expect);
      }
  }
}

TEST_CASE("xsim: identical sets with distinct rows give zero error") {
  std::mt19937_64 rng(3);
  auto s = gaussian_set(50, 8, rng);
  auto r = xsim_error(s, s, identity_gold(s));
  CHECK(r.error_rate == 0.0);
  CHECK(r.queries.size() == 50);
  CHECK(r.k == 4);
}

TEST_CASE("xsim: unrelated gaussian sets sit at chance level") {
  std::mt19937_64 rng(4);
  auto s = gaussian_set(200, 32, rng), t = gaussian_set(200, 32, rng);
  auto r = xsim_error(s, t, identity_gold(s));
  INFO("error " << r.error_rate);
  CHECK(r.error_rate > 0.95);
  CHECK(r.errors == static_cast<std::size_t>(std::lround(r.error_rate * 200)));
}

TEST_CASE("xsim: random sets up to 32 rows match the exhaustive oracle exactly") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> size(4, 32), dim(2, 6);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = size(rng), d = dim(rng);
    const bool ties = trial % 2 == 1;
    auto s = ties ? lattice_set(n, d, rng) : gaussian_set(n, d, rng);
    auto t = ties ? lattice_set(n, d, rng) : gaussian_set(n, d, rng);
    if (ties)  // duplicated candidates force exact ties
      for (std::size_t j = 1; j < n; j += 3)
        std::copy_n(t.matrix.begin() + static_cast<std::ptrdiff_t>((j - 1) * d), d,
                    t.matrix.begin() + static_cast<std::ptrdiff_t>(j * d));
    const std::size_t k = 1 + trial % 4;
    auto r = xsim_error(s, t, identity_gold(s), k);
    auto o = oracle_xsim(s, t, n, k);
    INFO("trial " << trial << " n " << n << " d " << d);
    CHECK(r.errors == o.errors);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(r.queries[i].predicted_id == t.ids[o.best[i]]);
      CHECK(r.queries[i].margin == o.margin[i]);
    }
  }
}

TEST_CASE("xsim: predictions are invariant under global positive scaling") {
  std::mt19937_64 rng(6);
  auto s = gaussian_set(40, 8, rng), t = gaussian_set(40, 8, rng);
  for (std::size_t i = 0; i < s.matrix.size(); ++i) t.matrix[i] = 0.7f * s.matrix[i] + t.matrix[i];
  auto base = xsim_error(s, t, identity_gold(s));
  for (float c : {1e-3f, 2.0f, 1e3f}) {
    auto r = xsim_error(scaled(s, c), scaled(t, c), identity_gold(s));
    CHECK(r.error_rate == base.error_rate);
    for (std::size_t i = 0; i < 40; ++i) CHECK(r.queries[i].predicted_id == base.queries[i].predicted_id);
  }
}

TEST_CASE("xsim: gold must be a bijection onto the target ids") {
  std::mt19937_64 rng(7);
  auto s = gaussian_set(6, 4, rng), t = gaussian_set(6, 4, rng);
  auto gold = identity_gold(s);
  gold[1] = 2;
  CHECK_THROWS_AS(xsim_error(s, t, gold), EvalError);
  gold = identity_gold(s);
  gold[5] = 99;
  CHECK_THROWS_AS(xsim_error(s, t, gold), EvalError);
  gold = identity_gold(s);
  gold.erase(3);
  CHECK_THROWS_AS(xsim_error(s, t, gold), EvalError);
  // a permuted gold map is fine
  GoldMap shifted;
  for (std::uint64_t i = 0; i < 6; ++i) shifted[i] = (i + 1) % 6;
  CHECK_NOTHROW(xsim_error(s, t, shifted));
  auto zero = s;
  std::fill_n(zero.matrix.begin(), 4, 0.0f);
  CHECK_THROWS_AS(xsim_error(zero, t, identity_gold(s)), EvalError);
}

TEST_CASE("xsim++: no hard negatives reduces to xsim exactly") {
  std::mt19937_64 rng(8);
  auto s = gaussian_set(30, 6, rng), t = gaussian_set(30, 6, rng);
  EmbeddingSet none;
  none.dim = 6;
  auto a = xsim_error(s, t, identity_gold(s));
  auto b = xsimpp_error(s, t, none, identity_gold(s));
  CHECK(a.errors == b.errors);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(a.queries[i].predicted_id == b.queries[i].predicted_id);
    CHECK(a.queries[i].margin == b.queries[i].margin);
  }
}

TEST_CASE("xsim++: exact copies of the targets never win (lower index on ties)") {
  std::mt19937_64 rng(9);
  auto s = gaussian_set(25, 6, rng);
  auto t = s;
  for (auto& v : t.matrix) v += 0.05f;
  auto copies = t;
  auto base = xsim_error(s, t, identity_gold(s));
  auto r = xsimpp_error(s, t, copies, identity_gold(s));
  CHECK(r.hard_negative_errors == 0);
  CHECK(r.pool_size == 50);
  for (const auto& q : r.queries) CHECK_FALSE(q.hard_negative);
  CHECK(r.errors >= base.errors);
}

TEST_CASE("xsim++: a hard negative closer than the gold is counted as such") {
  std::mt19937_64 rng(10);
  auto s = gaussian_set(20, 8, rng);
  auto t = scaled(s, 1.0f);
  for (auto& v : t.matrix) v += 0.3f;
  EmbeddingSet neg;
  neg.dim = 8;
  neg.matrix.assign(s.matrix.begin(), s.matrix.begin() + 8);  // exact copy of source 0
  neg.ids = {0};
  auto r = xsimpp_error(s, t, neg, identity_gold(s));
  CHECK(r.queries[0].hard_negative);
  CHECK_FALSE(r.queries[0].correct());
  CHECK(r.hard_negative_errors >= 1);
  auto o = oracle_xsim(s, concat(t, neg), 20, 4);
  CHECK(o.errors == r.errors);
}

TEST_CASE("EMB1: round trip is bitwise, header matches, sidecar optional") {
  std::mt19937_64 rng(11);
  auto s = gaussian_set(7, 5, rng, 100);
  const auto path = scratch("set.emb");
  save_emb1(s, path);
  auto back = load_emb1(path);
  CHECK(back.matrix == s.matrix);
  CHECK(back.ids == s.ids);
  CHECK(back.dim == 5);

  std::ifstream in(path, std::ios::binary);
  char magic[4];
  std::uint32_t rows = 0, dim = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&dim), 4);
  CHECK(std::string(magic, 4) == "EMB1");
  CHECK(rows == 7);
  CHECK(dim == 5);
  CHECK(fs::file_size(path) == 12 + 7 * 5 * 4);

  fs::remove(ids_sidecar(path));
  auto bare = load_emb1(path);
  CHECK(bare.ids == std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5, 6});

  const auto bad = scratch("bad.emb");
  std::ofstream(bad, std::ios::binary) << "EMB2xxxxxxxx";
  CHECK_THROWS_WITH_AS(load_emb1(bad), doctest::Contains("magic"), EvalError);
  std::ofstream(bad, std::ios::binary) << std::string("EMB1\x02\0\0\0\x02\0\0\0abc", 15);
  CHECK_THROWS_WITH_AS(load_emb1(bad), doctest::Contains("truncated"), EvalError);
  CHECK_THROWS_AS(load_emb1(scratch("none.emb")), EvalError);

  auto nan = s;
  nan.matrix[3] = std::nanf("");
  CHECK_THROWS_AS(save_emb1(nan, scratch("nan.emb")), EvalError);
}

TEST_CASE("entropy: uniform rows give ln L, one-hot rows give 0") {
  for (std::size_t len : {1, 2, 5, 17, 32}) {
    std::vector<double> p(len, 1.0 / static_cast<double>(len));
    CHECK(std::abs(entropy_nats(p) - std::log(static_cast<double>(len))) <= 1e-9);
    std::vector<double> hot(len, 0.0);
    hot[len / 2] = 1.0;
    CHECK(entropy_nats(hot) == 0.0);
  }
}

TEST_CASE("entropy: special columns are dropped and the rest renormalized") {
  const encoder::SpecialTokens sp;
  const std::vector<TokenId> toks = {1, 9, 10, 11, 2, 0, 0};
  const std::vector<double> row = {0.4, 0.1, 0.1, 0.1, 0.3, 0.0, 0.0};
  CHECK(cls_row_entropy(row, toks, sp, true) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  const std::vector<double> full = {0.4, 0.1, 0.1, 0.1, 0.3};
  CHECK(cls_row_entropy(row, toks, sp, false) == doctest::Approx(entropy_nats(full)).epsilon(1e-12));
  const std::vector<TokenId> only_specials = {1, 2};
  CHECK_THROWS_AS(cls_row_entropy(row, only_specials, sp, true), EvalError);
}

TEST_CASE("attention entropy on a model stays within [0, ln attended]") {
  auto m = small_model();
  std::vector<std::vector<TokenId>> rows;
  for (const auto& p : m.corpus.pairs) rows.push_back(p.source);
  for (bool exclude : {false, true}) {
    auto r = attention_entropy(m.params, m.config, rows, exclude);
    REQUIRE(r.entropies.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(r.attended[i] == rows[i].size() - (exclude ? 2 : 0));
      CHECK(r.entropies[i] >= 0);
      CHECK(r.entropies[i] <= std::log(static_cast<double>(r.attended[i])) + 1e-9);
    }
    double mean = std::accumulate(r.entropies.begin(), r.entropies.end(), 0.0) / rows.size();
    CHECK(r.mean_entropy == doctest::Approx(mean));
  }
  CHECK_THROWS_AS(attention_entropy(m.params, m.config, {}, false), EvalError);
}

TEST_CASE("token NN: categories partition the neighbors and follow their definitions") {
  auto m = small_model(30);
  std::mt19937_64 rng(12);
  auto r = token_nn_analysis(m.params, m.config, m.corpus.pairs, 3, 5, rng);
  CHECK(r.translation + r.same_sentence + r.same_language + r.other == doctest::Approx(100.0).epsilon(1e-4));
  CHECK(r.queries.size() == 30 * 3);
  CHECK(r.neighbor_count == r.queries.size() * 5);
  std::map<std::uint64_t, const corpus::ParallelPair*> by_id;
  for (const auto& p : m.corpus.pairs) by_id[p.id] = &p;
  std::size_t counted[4] = {};
  for (const auto& q : r.queries) {
    REQUIRE(q.neighbors.size() == 5);
    for (std::size_t k = 0; k + 1 < 5; ++k) CHECK(q.neighbors[k].cosine >= q.neighbors[k + 1].cosine);
    const auto& qp = *by_id[q.pair_id];
    CHECK(qp.source[q.position] == q.token);
    for (const auto& nb : q.neighbors) {
      CHECK_FALSE((nb.pair_id == q.pair_id && !nb.target_side && nb.position == q.position));
      const auto& np = *by_id[nb.pair_id];
      CHECK(nb.token == (nb.target_side ? np.target : np.source)[nb.position]);
      CHECK_FALSE(m.config.special.is_special(nb.token));
      TokenCategory expect = TokenCategory::Other;
      if (nb.pair_id == q.pair_id && nb.target_side &&
          static_cast<std::int32_t>(nb.position) == qp.alignment[q.position])
        expect = TokenCategory::Translation;
      else if (nb.pair_id == q.pair_id && !nb.target_side)
        expect = TokenCategory::SameSentence;
      else if (!nb.target_side && nb.token == q.token)
        expect = TokenCategory::SameLanguage;
      CHECK(nb.category == expect);
      ++counted[static_cast<int>(expect)];
    }
  }
  CHECK(100.0 * counted[0] / r.neighbor_count == doctest::Approx(r.translation));
  CHECK(100.0 * counted[3] / r.neighbor_count == doctest::Approx(r.other));

  auto tiny = std::span(m.corpus.pairs).first(1);
  CHECK_THROWS_AS(token_nn_analysis(m.params, m.config, tiny, 3, 40, rng), EvalError);
}

TEST_CASE("pooling ablation: delta follows from the two error rates") {
  auto m = small_model(30);
  auto r = pooling_ablation(m.params, m.config, m.corpus.pairs);
  CHECK(r.cls_error >= 0);
  CHECK(r.mean_error <= 1);
  if (r.cls_error > 0) CHECK(std::abs(r.delta - (r.mean_error - r.cls_error) / r.cls_error) <= 1e-9);
  CHECK(relative_delta(0.25, 0.25) == 0.0);
  CHECK(relative_delta(0.0, 0.0) == 0.0);
  CHECK(std::isinf(relative_delta(0.0, 0.1)));
  CHECK(relative_delta(0.2, 0.3) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("export: EMB1 files give the same mining report as the in-memory path") {
  auto m = small_model(30);
  std::vector<std::vector<TokenId>> src, tgt;
  std::vector<std::uint64_t> ids;
  for (const auto& p : m.corpus.pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
    ids.push_back(p.id);
  }
  for (auto pooling : {Pooling::Cls, Pooling::Mean}) {
    const auto ps = scratch("src.emb"), pt = scratch("tgt.emb");
    export_embeddings(m.params, m.config, src, ids, pooling, ps);
    export_embeddings(m.params, m.config, tgt, ids, pooling, pt);
    auto s = encode_sentences(m.params, m.config, src, ids, pooling);
    auto t = encode_sentences(m.params, m.config, tgt, ids, pooling);
    auto mem = xsim_error(s, t, identity_gold(s));
    auto ls = load_emb1(ps), lt = load_emb1(pt);
    CHECK(ls.matrix == s.matrix);
    auto disk = xsim_error(ls, lt, identity_gold(ls));
    CHECK(disk.errors == mem.errors);
    for (std::size_t i = 0; i < mem.queries.size(); ++i) CHECK(disk.queries[i].margin == mem.queries[i].margin);
  }
}

TEST_CASE("encode_sentences: chunking does not change the embeddings") {
  auto m = small_model(30);
  std::vector<std::vector<TokenId>> rows;
  std::vector<std::uint64_t> ids;
  for (const auto& p : m.corpus.pairs) {
    rows.push_back(p.source);
    ids.push_back(p.id);
  }
  auto a = encode_sentences(m.params, m.config, rows, ids, Pooling::Cls, 64);
  auto b = encode_sentences(m.params, m.config, rows, ids, Pooling::Cls, 7);
  REQUIRE(a.matrix.size() == b.matrix.size());
  for (std::size_t i = 0; i < a.matrix.size(); ++i) CHECK(std::abs(a.matrix[i] - b.matrix[i]) <= 1e-5f);
  rows[2].resize(40, 7);
  CHECK_THROWS_AS(encode_sentences(m.params, m.config, rows, ids, Pooling::Cls), EvalError);
  CHECK_THROWS_AS(parse_pooling("max"), EvalError);
  CHECK(parse_pooling("mean") == Pooling::Mean);
}

TEST_CASE("embed_for_mining: hard negatives differ from their target in one position") {
  auto m = small_model(12);
  std::mt19937_64 rng(13);
  ContentRange b_range{m.corpus.first_b, m.corpus.content_vocab};
  auto sides = embed_for_mining(m.params, m.config, m.corpus.pairs, Pooling::Cls, 2, b_range, rng);
  CHECK(sides.src.size() == 12);
  CHECK(sides.hard_negatives.size() == 24);
  CHECK(sides.hard_negatives.ids[0] == m.corpus.pairs[0].id);
  CHECK(sides.hard_negatives.ids[1] == m.corpus.pairs[0].id);
  auto r = xsimpp_error(sides.src, sides.tgt, sides.hard_negatives, identity_gold(sides.src));
  CHECK(r.pool_size == 36);
}
