#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "mexma/corpus/corpus.hpp"

using namespace mexma::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "mexma_corpus_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_CASE("vocab: specials first, stable ids, save and load") {
  Vocab v;
  CHECK(v.size() == 5);
  CHECK(v.form(v.special().cls) == "<cls>");
  CHECK(v.add("hello") == 5);
  CHECK(v.add("world") == 6);
  CHECK(v.add("hello") == 5);
  CHECK(v.id_or_unk("nope") == v.special().unk);
  CHECK_THROWS_AS(v.form(99), CorpusError);
  auto path = scratch("vocab.txt");
  v.save(path);
  CHECK(Vocab::load(path) == v);
  write_file(path, "<pad>\n<cls>\n");
  CHECK_THROWS_AS(Vocab::load(path), CorpusError);
  write_file(path, "<pad>\n<cls>\n<eos>\n<mask>\n<unk>\nx\nx\n");
  CHECK_THROWS_AS(Vocab::load(path), CorpusError);
}

TEST_CASE("synthetic: rows are framed, the bijection inverts, gold alignment is identity") {
  SyntheticSpec spec;
  spec.content_vocab = 50;
  auto c = generate_synthetic(spec, 300);
  REQUIRE(c.pairs.size() == 300);
  CHECK(c.vocab.size() == 5 + 2 * 50);
  std::set<std::size_t> image(c.bijection.begin(), c.bijection.end());
  CHECK(image.size() == 50);
  std::set<std::vector<TokenId>> distinct;
  for (const auto& p : c.pairs) {
    CHECK(p.source.front() == 1);
    CHECK(p.source.back() == 2);
    CHECK(p.target.front() == 1);
    CHECK(p.target.back() == 2);
    CHECK(p.source.size() >= spec.min_length + 2);
    CHECK(p.source.size() <= spec.max_length + 2);
    CHECK(distinct.insert(p.source).second);
    REQUIRE(p.source.size() == p.target.size());
    for (std::size_t i = 1; i + 1 < p.source.size(); ++i) {
      CHECK(c.is_a(p.source[i]));
      CHECK(c.untranslate(p.target[i]) == p.source[i]);
      CHECK(c.translate(p.source[i]) == p.target[i]);
      CHECK(p.alignment[i] == static_cast<std::int32_t>(i));
    }
  }
  CHECK_THROWS_AS(c.translate(c.first_b), CorpusError);
}

TEST_CASE("synthetic: adjacent swaps keep a consistent alignment") {
  SyntheticSpec spec;
  spec.reorder = Reorder::AdjacentSwap;
  spec.swap_probability = 0.5;
  auto c = generate_synthetic(spec, 200);
  std::size_t moved = 0;
  for (const auto& p : c.pairs) {
    std::set<std::int32_t> targets;
    for (std::size_t i = 0; i < p.source.size(); ++i) {
      const auto q = static_cast<std::size_t>(p.alignment[i]);
      CHECK(targets.insert(p.alignment[i]).second);
      if (i == 0 || i + 1 == p.source.size()) {
        CHECK(q == i);
        continue;
      }
      CHECK(c.translate(p.source[i]) == p.target[q]);
      CHECK((q == i || q + 1 == i || q == i + 1));
      if (q != i) ++moved;
    }
  }
  CHECK(moved > 0);
}

TEST_CASE("synthetic: determinism and seed sensitivity") {
  SyntheticSpec spec;
  auto a = generate_synthetic(spec, 100);
  auto b = generate_synthetic(spec, 100);
  CHECK(a.bijection == b.bijection);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(a.pairs[i].source == b.pairs[i].source);
    CHECK(a.pairs[i].target == b.pairs[i].target);
  }
  spec.corpus_seed = 9;
  auto c = generate_synthetic(spec, 100);
  CHECK(c.bijection == a.bijection);
  CHECK(c.pairs[0].source != a.pairs[0].source);
  spec.bijection_seed = 9;
  CHECK(generate_synthetic(spec, 1).bijection != a.bijection);
}

TEST_CASE("synthetic: rank-frequency follows the Zipf law within a factor 2") {
  SyntheticSpec spec;
  spec.content_vocab = 200;
  spec.zipf_exponent = 1.0;
  auto c = generate_synthetic(spec, 10000);
  std::vector<double> count(200);
  double total = 0;
  for (const auto& p : c.pairs)
    for (std::size_t i = 1; i + 1 < p.source.size(); ++i) {
      count[p.source[i] - c.first_a] += 1;
      total += 1;
    }
  double harmonic = 0;
  for (int r = 1; r <= 200; ++r) harmonic += 1.0 / r;
  std::sort(count.rbegin(), count.rend());
  for (int r = 1; r <= 20; ++r) {
    const double expected = total / (r * harmonic);
    INFO("rank " << r);
    CHECK(count[r - 1] <= 2 * expected);
    CHECK(count[r - 1] >= expected / 2);
  }
}

TEST_CASE("synthetic: spec validation and JSON round trip") {
  SyntheticSpec bad;
  bad.content_vocab = 5;
  CHECK_THROWS_AS(validate(bad), CorpusError);
  bad = {};
  bad.min_length = 1;
  CHECK_THROWS_AS(validate(bad), CorpusError);
  bad = {};
  bad.swap_probability = 2;
  CHECK_THROWS_AS(validate(bad), CorpusError);
  CHECK_THROWS_AS(generate_synthetic({}, 0), CorpusError);

  SyntheticSpec s;
  s.reorder = Reorder::AdjacentSwap;
  s.swap_probability = 0.25;
  s.corpus_seed = 77;
  std::size_t n = 0;
  CHECK(spec_from_json(spec_to_json(s, 1234), &n) == s);
  CHECK(n == 1234);
  CHECK_THROWS_AS(spec_from_json("{\"colour\": 1}"), CorpusError);
  CHECK_THROWS_AS(spec_from_json("[1,2]"), CorpusError);
  CHECK_THROWS_AS(spec_from_json("{"), CorpusError);
}

TEST_CASE("synthetic: impossible distinctness request fails cleanly") {
  SyntheticSpec s;
  s.content_vocab = 10;
  s.min_length = s.max_length = 2;
  CHECK_THROWS_AS(generate_synthetic(s, 101), CorpusError);
  CHECK_NOTHROW(generate_synthetic(s, 60));
}

TEST_CASE("tsv: well-formed, malformed and over-length lines") {
  auto path = scratch("two.tsv");
  write_file(path, "the cat\tle chat\nthe dog\tle chien\n");
  auto r = ingest_tsv(path, 32);
  CHECK(r.pairs.size() == 2);
  CHECK(r.report.malformed == 0);
  CHECK(r.report.over_length == 0);
  CHECK(r.pairs[0].id == 1);
  CHECK(r.vocab.find("the") == 5u);
  CHECK(r.vocab.find("cat") == 6u);
  CHECK(r.vocab.find("le") == 7u);

  write_file(path, "a b\tc d\none\ttwo\tthree\nx\r\n\n   \nq r s t u v\tw\n");
  r = ingest_tsv(path, 6);
  CHECK(r.pairs.size() == 1);
  CHECK(r.report.malformed == 2);
  CHECK(r.report.over_length == 1);
  REQUIRE(r.report.messages.size() == 3);
  CHECK(r.report.messages[0].rfind("line 2:", 0) == 0);
  CHECK(r.report.messages[1].rfind("line 3:", 0) == 0);
  CHECK(r.report.messages[2].rfind("line 6:", 0) == 0);

  CHECK_THROWS_AS(ingest_tsv(scratch("missing.tsv"), 32), CorpusError);
}

TEST_CASE("tsv: re-ingest gives the same ids; fixed vocab maps unknowns to unk") {
  auto path = scratch("stable.tsv");
  write_file(path, "x y z\tu v\ny x\tv w\n");
  auto a = ingest_tsv(path, 32);
  auto b = ingest_tsv(path, 32);
  CHECK(a.vocab == b.vocab);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) CHECK(a.pairs[i].source == b.pairs[i].source);

  auto other = scratch("other.tsv");
  write_file(other, "x new\tu\n");
  auto c = ingest_tsv(other, 32, &a.vocab);
  CHECK(c.vocab == a.vocab);
  CHECK(c.pairs[0].source[2] == a.vocab.special().unk);
}

TEST_CASE("tsv: tokenize and detokenize round trip, including the file writer") {
  Vocab v;
  for (auto w : {"alpha", "beta", "gamma"}) v.add(w);
  CHECK(detokenize(tokenize("  alpha\tbeta   gamma ", v), v) == "alpha beta gamma");
  SyntheticSpec spec;
  auto c = generate_synthetic(spec, 50);
  auto path = scratch("synthetic.tsv");
  write_tsv(path, c.pairs, c.vocab);
  auto back = ingest_tsv(path, 32, &c.vocab);
  REQUIRE(back.pairs.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(back.pairs[i].source == c.pairs[i].source);
    CHECK(back.pairs[i].target == c.pairs[i].target);
  }
}

TEST_CASE("splits are disjoint by pair id and cover the corpus") {
  auto c = generate_synthetic({}, 500);
  auto s = split_corpus(c.pairs, 50, 100, 3);
  CHECK(s.train.size() == 350);
  CHECK(s.dev.size() == 50);
  CHECK(s.test.size() == 100);
  std::set<std::uint64_t> ids;
  for (auto* part : {&s.train, &s.dev, &s.test})
    for (const auto& p : *part) CHECK(ids.insert(p.id).second);
  CHECK(ids.size() == 500);
  CHECK_THROWS_AS(split_corpus(c.pairs, 400, 101, 3), CorpusError);
  auto dup = c.pairs;
  dup[1].id = dup[0].id;
  CHECK_THROWS_AS(split_corpus(dup, 1, 1, 3), CorpusError);
}

TEST_CASE("hard negatives: one position changes, to a different id, with full coverage") {
  const mexma::encoder::SpecialTokens sp;
  const std::vector<TokenId> row = {1, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 2};
  std::mt19937_64 rng(8);
  std::vector<int> hits(row.size());
  for (int trial = 0; trial < 1000; ++trial) {
    auto neg = make_hard_negative(row, sp, 10, 20, rng);
    REQUIRE(neg.size() == row.size());
    int changed = 0;
    for (std::size_t p = 0; p < row.size(); ++p)
      if (neg[p] != row[p]) {
        ++changed;
        ++hits[p];
        CHECK(neg[p] >= 10);
        CHECK(neg[p] < 30);
      }
    CHECK(changed == 1);
  }
  CHECK(hits.front() == 0);
  CHECK(hits.back() == 0);
  for (std::size_t p = 1; p + 1 < row.size(); ++p) CHECK(hits[p] > 0);

  // Two-id range: the replacement is forced to the other id.
  const std::vector<TokenId> tiny = {1, 5, 2};
  CHECK(make_hard_negative(tiny, sp, 5, 2, rng)[1] == 6);
  const std::vector<TokenId> empty = {1, 2};
  CHECK_THROWS_AS(make_hard_negative(empty, sp, 5, 10, rng), CorpusError);
}
