#include "mexma/eval/eval.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "mexma/tensor/ops.hpp"

namespace mexma::eval {

static_assert(std::endian::native == std::endian::little, "EMB1 I/O assumes little-endian");

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

// Unit vector in double; the same rounding everywhere a cosine is taken.
std::vector<double> unit(std::span<const float> x) {
  double sq = 0;
  for (float v : x) sq += static_cast<double>(v) * v;
  if (!(sq > 0)) throw EvalError("zero vector has no direction");
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<double> u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) u[i] = x[i] * inv;
  return u;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<std::vector<double>> units(const EmbeddingSet& set) {
  std::vector<std::vector<double>> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(unit(set.row(i)));
  return out;
}

double top_k_mean(std::vector<double> sims, std::size_t k) {
  if (sims.size() < k)
    throw EvalError("neighborhood of " + std::to_string(k) + " needs at least " + std::to_string(k) +
                    " candidates, got " + std::to_string(sims.size()));
  std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                    std::greater<>());
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += sims[i];
  return s / static_cast<double>(k);
}

void check_dims(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.size() && b.size() && a.dim != b.dim)
    throw EvalError("embedding dims differ: " + std::to_string(a.dim) + " vs " + std::to_string(b.dim));
}

}  // namespace

void EmbeddingSet::validate() const {
  if (matrix.size() != ids.size() * dim)
    throw EvalError("embedding matrix holds " + std::to_string(matrix.size()) + " values, expected " +
                    std::to_string(ids.size()) + " x " + std::to_string(dim));
  for (std::size_t i = 0; i < matrix.size(); ++i)
    if (!std::isfinite(matrix[i]))
      throw EvalError("non-finite embedding entry in row " + std::to_string(i / std::max<std::size_t>(dim, 1)));
}

// ---------------------------------------------------------------------------
// EMB1

std::filesystem::path ids_sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".ids";
  return p;
}

void save_emb1(const EmbeddingSet& set, const std::filesystem::path& path) {
  set.validate();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw EvalError("cannot write embeddings " + path.string());
    out.write("EMB1", 4);
    const std::uint32_t rows = static_cast<std::uint32_t>(set.size());
    const std::uint32_t dim = static_cast<std::uint32_t>(set.dim);
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(reinterpret_cast<const char*>(set.matrix.data()),
              static_cast<std::streamsize>(set.matrix.size() * sizeof(float)));
    if (!out) throw EvalError("failed writing embeddings " + path.string());
  }
  std::ofstream ids(ids_sidecar(path));
  if (!ids) throw EvalError("cannot write " + ids_sidecar(path).string());
  for (auto id : set.ids) ids << id << '\n';
}

EmbeddingSet load_emb1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvalError("cannot read embeddings " + path.string());
  char magic[4] = {};
  std::uint32_t rows = 0, dim = 0;
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "EMB1", 4) != 0)
    throw EvalError(path.string() + ": bad magic (not an EMB1 file)");
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&dim), 4);
  if (!in) throw EvalError(path.string() + ": truncated header");
  EmbeddingSet s;
  s.dim = dim;
  s.matrix.resize(static_cast<std::size_t>(rows) * dim);
  in.read(reinterpret_cast<char*>(s.matrix.data()),
          static_cast<std::streamsize>(s.matrix.size() * sizeof(float)));
  if (!in) throw EvalError(path.string() + ": truncated matrix");
  if (in.peek() != std::char_traits<char>::eof()) throw EvalError(path.string() + ": trailing bytes");

  const auto side = ids_sidecar(path);
  if (std::filesystem::exists(side)) {
    std::ifstream ids(side);
    std::string line;
    while (std::getline(ids, line)) {
      if (line.empty()) continue;
      std::uint64_t id = 0;
      auto [end, ec] = std::from_chars(line.data(), line.data() + line.size(), id);
      if (ec != std::errc() || end != line.data() + line.size())
        throw EvalError(side.string() + ": bad id '" + line + "'");
      s.ids.push_back(id);
    }
    if (s.ids.size() != rows)
      throw EvalError(side.string() + " lists " + std::to_string(s.ids.size()) + " ids for " +
                      std::to_string(rows) + " rows");
  } else {
    s.ids.resize(rows);
    std::iota(s.ids.begin(), s.ids.end(), std::uint64_t{0});
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// mining

double cosine(std::span<const float> x, std::span<const float> y) {
  if (x.size() != y.size()) throw EvalError("cosine of vectors with different dims");
  return dot(unit(x), unit(y));
}

double neighborhood(std::span<const float> x, const EmbeddingSet& cands, std::size_t k) {
  if (k == 0) throw EvalError("neighborhood size k must be at least 1");
  const auto ux = unit(x);
  std::vector<double> sims(cands.size());
  for (std::size_t j = 0; j < cands.size(); ++j) sims[j] = dot(ux, unit(cands.row(j)));
  return top_k_mean(std::move(sims), k);
}

double margin_score(std::span<const float> x, std::span<const float> y, const EmbeddingSet& cands_x,
                    const EmbeddingSet& cands_y, std::size_t k) {
  const double c = cosine(x, y);
  return c / ((neighborhood(x, cands_y, k) + neighborhood(y, cands_x, k)) / 2.0);
}

GoldMap identity_gold(const EmbeddingSet& src) {
  GoldMap g;
  for (auto id : src.ids) g[id] = id;
  return g;
}

namespace {

MiningReport mine(const EmbeddingSet& src, const EmbeddingSet& tgt, const EmbeddingSet* extra,
                  const GoldMap& gold, std::size_t k) {
  src.validate();
  tgt.validate();
  check_dims(src, tgt);
  if (extra) {
    extra->validate();
    check_dims(tgt, *extra);
  }
  if (k == 0) throw EvalError("neighborhood size k must be at least 1");
  if (src.size() == 0 || tgt.size() == 0) throw EvalError("mining needs non-empty source and target sets");

  // gold must pair every source id with a distinct target id, covering the targets
  std::set<std::uint64_t> src_ids(src.ids.begin(), src.ids.end());
  std::set<std::uint64_t> tgt_ids(tgt.ids.begin(), tgt.ids.end());
  if (src_ids.size() != src.size()) throw EvalError("source ids are not unique");
  if (tgt_ids.size() != tgt.size()) throw EvalError("target ids are not unique");
  std::set<std::uint64_t> image;
  for (auto id : src.ids) {
    auto it = gold.find(id);
    if (it == gold.end()) throw EvalError("gold map has no entry for source id " + std::to_string(id));
    if (!tgt_ids.count(it->second))
      throw EvalError("gold target " + std::to_string(it->second) + " of source " + std::to_string(id) +
                      " is not in the target set");
    if (!image.insert(it->second).second)
      throw EvalError("gold map is not a bijection: target " + std::to_string(it->second) +
                      " is used twice");
  }
  if (image.size() != tgt.size() || gold.size() != src.size())
    throw EvalError("gold map is not a bijection between the source and target ids");

  // pool = targets then hard negatives
  EmbeddingSet pool = tgt;
  if (extra) {
    pool.matrix.insert(pool.matrix.end(), extra->matrix.begin(), extra->matrix.end());
    pool.ids.insert(pool.ids.end(), extra->ids.begin(), extra->ids.end());
  }
  const std::size_t n = src.size(), m = pool.size();
  if (n < k || m < k)
    throw EvalError("k = " + std::to_string(k) + " exceeds the source (" + std::to_string(n) +
                    ") or candidate (" + std::to_string(m) + ") count");
  const auto us = units(src), up = units(pool);
  std::vector<double> sims(n * m);
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < m; ++j) sims[static_cast<std::size_t>(i) * m + j] = dot(us[i], up[j]);
  std::vector<double> near_src(n), near_pool(m);
  for (std::size_t i = 0; i < n; ++i)
    near_src[i] = top_k_mean({sims.begin() + static_cast<std::ptrdiff_t>(i * m),
                              sims.begin() + static_cast<std::ptrdiff_t>((i + 1) * m)}, k);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = sims[i * m + j];
    near_pool[j] = top_k_mean(std::move(col), k);
  }

  MiningReport r;
  r.k = k;
  r.pool_size = m;
  r.queries.resize(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double score = sims[i * m + j] / ((near_src[i] + near_pool[j]) / 2.0);
      if (score > best_score) {  // strict: ties keep the lower index
        best_score = score;
        best = j;
      }
    }
    auto& q = r.queries[i];
    q.query_id = src.ids[i];
    q.predicted_id = pool.ids[best];
    q.gold_id = gold.at(src.ids[i]);
    q.margin = best_score;
    q.hard_negative = best >= tgt.size();
  }
  for (const auto& q : r.queries) {
    if (q.correct()) continue;
    ++r.errors;
    if (q.hard_negative) ++r.hard_negative_errors;
  }
  r.error_rate = static_cast<double>(r.errors) / static_cast<double>(n);
  return r;
}

}  // namespace

MiningReport xsim_error(const EmbeddingSet& src, const EmbeddingSet& tgt, const GoldMap& gold,
                        std::size_t k) {
  return mine(src, tgt, nullptr, gold, k);
}

MiningReport xsimpp_error(const EmbeddingSet& src, const EmbeddingSet& tgt,
                          const EmbeddingSet& hard_negatives, const GoldMap& gold, std::size_t k) {
  return mine(src, tgt, &hard_negatives, gold, k);
}

// ---------------------------------------------------------------------------
// model-facing

Pooling parse_pooling(std::string_view name) {
  if (name == "cls") return Pooling::Cls;
  if (name == "mean") return Pooling::Mean;
  throw EvalError("unknown pooling '" + std::string(name) + "' (expected cls or mean)");
}

std::string_view to_string(Pooling p) { return p == Pooling::Cls ? "cls" : "mean"; }

std::string_view to_string(TokenCategory c) {
  switch (c) {
    case TokenCategory::Translation: return "translation";
    case TokenCategory::SameSentence: return "same-sentence";
    case TokenCategory::SameLanguage: return "same-language";
    case TokenCategory::Other: return "other";
  }
  return "other";
}

namespace {

void check_rows(const encoder::EncoderConfig& config, std::span<const std::vector<TokenId>> rows,
                std::span<const std::uint64_t> ids) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].size() > config.max_seq_len)
      throw EvalError("sentence " + std::to_string(ids.empty() ? i : ids[i]) + " has " +
                      std::to_string(rows[i].size()) + " tokens, more than max_seq_len " +
                      std::to_string(config.max_seq_len));
}

// Runs `fn(encoded, first_row)` over chunks of `batch` rows with a gradient-free graph.
template <typename Fn>
void for_chunks(const encoder::EncoderParams<float>& params, const encoder::EncoderConfig& config,
                std::span<const std::vector<TokenId>> rows, std::size_t batch, bool capture, Fn fn) {
  if (batch == 0) throw EvalError("encoding batch must be positive");
  for (std::size_t b0 = 0; b0 < rows.size(); b0 += batch) {
    const auto chunk = rows.subspan(b0, std::min(batch, rows.size() - b0));
    tensor::Graph<float> g;
    auto w = encoder::bind<encoder::EncoderWeights, float>(g, params, false);
    auto enc = encoder::encode(w, config, encoder::TokenBatch::from_rows(chunk, config.special.pad),
                               capture);
    fn(enc, b0);
  }
}

}  // namespace

EmbeddingSet encode_sentences(const encoder::EncoderParams<float>& params,
                              const encoder::EncoderConfig& config,
                              std::span<const std::vector<TokenId>> rows,
                              std::span<const std::uint64_t> ids, Pooling pooling,
                              std::size_t batch) {
  if (ids.size() != rows.size())
    throw EvalError("got " + std::to_string(ids.size()) + " ids for " + std::to_string(rows.size()) +
                    " sentences");
  check_rows(config, rows, ids);
  EmbeddingSet out;
  out.dim = config.model_dim;
  out.ids.assign(ids.begin(), ids.end());
  out.matrix.reserve(rows.size() * config.model_dim);
  for_chunks(params, config, rows, batch, false, [&](const encoder::EncodedBatch<float>& enc, std::size_t) {
    const auto pooled = pooling == Pooling::Cls ? enc.sentence : encoder::pool_mean(enc);
    const auto v = pooled.values();
    out.matrix.insert(out.matrix.end(), v.begin(), v.end());
  });
  out.validate();
  return out;
}

MiningSides embed_for_mining(const encoder::EncoderParams<float>& params,
                             const encoder::EncoderConfig& config,
                             std::span<const corpus::ParallelPair> pairs, Pooling pooling,
                             std::size_t per_target, ContentRange target_content,
                             std::mt19937_64& rng) {
  std::vector<std::vector<TokenId>> src, tgt, negs;
  std::vector<std::uint64_t> ids, neg_ids;
  for (const auto& p : pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
    ids.push_back(p.id);
  }
  // all perturbations of target 0, then target 1, ...
  for (const auto& p : pairs)
    for (std::size_t h = 0; h < per_target; ++h) {
      negs.push_back(corpus::make_hard_negative(p.target, config.special, target_content.first,
                                                target_content.count, rng));
      neg_ids.push_back(p.id);
    }
  MiningSides s;
  s.src = encode_sentences(params, config, src, ids, pooling);
  s.src.language = "a";
  s.tgt = encode_sentences(params, config, tgt, ids, pooling);
  s.tgt.language = "b";
  s.hard_negatives = encode_sentences(params, config, negs, neg_ids, pooling);
  s.hard_negatives.language = "b";
  return s;
}

TokenMatchReport token_nn_analysis(const encoder::EncoderParams<float>& params,
                                   const encoder::EncoderConfig& config,
                                   std::span<const corpus::ParallelPair> pairs,
                                   std::size_t queries_per_sentence, std::size_t neighbors_k,
                                   std::mt19937_64& rng) {
  if (neighbors_k == 0) throw EvalError("neighbors_k must be at least 1");
  struct Token {
    std::size_t pair;
    bool target_side;
    std::size_t position;
    TokenId id;
  };
  std::vector<std::vector<TokenId>> rows;
  std::vector<std::uint64_t> ids;
  for (const auto& p : pairs) {
    rows.push_back(p.source);
    ids.push_back(p.id);
  }
  for (const auto& p : pairs) {
    rows.push_back(p.target);
    ids.push_back(p.id);
  }
  check_rows(config, rows, ids);

  // Row r of `rows` is pair r % n, side r / n.
  const std::size_t n = pairs.size();
  std::vector<Token> tokens;
  std::vector<std::vector<double>> states;
  std::vector<std::vector<std::size_t>> index_of(rows.size());  // row -> position -> token index
  for_chunks(params, config, rows, 64, false, [&](const encoder::EncodedBatch<float>& enc, std::size_t r0) {
    const auto h = enc.hidden.values();
    const std::size_t len = enc.length, dim = config.model_dim;
    for (std::size_t b = 0; b < enc.lengths.size(); ++b) {
      const std::size_t r = r0 + b;
      index_of[r].assign(rows[r].size(), SIZE_MAX);
      for (std::size_t pos = 0; pos < rows[r].size(); ++pos) {
        if (config.special.is_special(rows[r][pos])) continue;
        index_of[r][pos] = tokens.size();
        tokens.push_back({r % n, r >= n, pos, rows[r][pos]});
        states.push_back(unit(h.subspan((b * len + pos) * dim, dim)));
      }
    }
  });
  if (tokens.size() < neighbors_k + 1)
    throw EvalError("only " + std::to_string(tokens.size()) + " content tokens for " +
                    std::to_string(neighbors_k) + " neighbors plus the query");

  TokenMatchReport report;
  std::size_t counts[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> content;
    for (std::size_t pos = 0; pos < pairs[i].source.size(); ++pos)
      if (index_of[i][pos] != SIZE_MAX) content.push_back(pos);
    // partial Fisher-Yates: the first q entries are the sampled positions
    const std::size_t q = std::min(queries_per_sentence, content.size());
    for (std::size_t a = 0; a < q; ++a) {
      std::uniform_int_distribution<std::size_t> pick(a, content.size() - 1);
      std::swap(content[a], content[pick(rng)]);
    }
    for (std::size_t a = 0; a < q; ++a) {
      const std::size_t pos = content[a];
      const std::size_t self = index_of[i][pos];
      std::vector<std::pair<double, std::size_t>> sims;
      sims.reserve(tokens.size() - 1);
      for (std::size_t t = 0; t < tokens.size(); ++t)
        if (t != self) sims.emplace_back(dot(states[self], states[t]), t);
      std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(neighbors_k), sims.end(),
                        [](const auto& x, const auto& y) {
                          return x.first > y.first || (x.first == y.first && x.second < y.second);
                        });
      TokenQuery query{pairs[i].id, pos, pairs[i].source[pos], {}};
      const auto& align = pairs[i].alignment;
      for (std::size_t k = 0; k < neighbors_k; ++k) {
        const auto& t = tokens[sims[k].second];
        TokenCategory cat = TokenCategory::Other;
        if (t.pair == i && t.target_side && pos < align.size() && align[pos] >= 0 &&
            t.position == static_cast<std::size_t>(align[pos]))
          cat = TokenCategory::Translation;
        else if (t.pair == i && !t.target_side)
          cat = TokenCategory::SameSentence;
        else if (!t.target_side && t.id == query.token)
          cat = TokenCategory::SameLanguage;
        ++counts[static_cast<int>(cat)];
        query.neighbors.push_back({pairs[t.pair].id, t.target_side, t.position, t.id, sims[k].first, cat});
      }
      report.queries.push_back(std::move(query));
    }
  }
  const std::size_t total = counts[0] + counts[1] + counts[2] + counts[3];
  report.neighbor_count = total;
  if (total == 0) throw EvalError("no source tokens to query");
  auto pct = [&](std::size_t c) { return 100.0 * static_cast<double>(c) / static_cast<double>(total); };
  report.translation = pct(counts[0]);
  report.same_sentence = pct(counts[1]);
  report.same_language = pct(counts[2]);
  report.other = pct(counts[3]);
  return report;
}

double entropy_nats(std::span<const double> p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

double cls_row_entropy(std::span<const double> row, std::span<const TokenId> tokens,
                       const encoder::SpecialTokens& special, bool exclude_specials) {
  std::vector<double> kept;
  for (std::size_t j = 0; j < tokens.size() && j < row.size(); ++j) {
    if (tokens[j] == special.pad) continue;
    if (exclude_specials && special.is_special(tokens[j])) continue;
    kept.push_back(row[j]);
  }
  if (kept.empty()) throw EvalError("no attended positions left after excluding special tokens");
  const double total = std::accumulate(kept.begin(), kept.end(), 0.0);
  if (!(total > 0)) throw EvalError("attention row has no mass on the kept positions");
  for (auto& v : kept) v /= total;
  return entropy_nats(kept);
}

AttentionReport attention_entropy(const encoder::EncoderParams<float>& params,
                                  const encoder::EncoderConfig& config,
                                  std::span<const std::vector<TokenId>> sentences,
                                  bool exclude_specials) {
  if (sentences.empty()) throw EvalError("attention analysis needs at least one sentence");
  check_rows(config, sentences, {});
  AttentionReport r;
  r.exclude_specials = exclude_specials;
  for_chunks(params, config, sentences, 64, true, [&](const encoder::EncodedBatch<float>& enc, std::size_t r0) {
    const auto& last = enc.attention.back();  // batch x heads x L x L
    const std::size_t heads = config.num_heads, len = enc.length;
    for (std::size_t b = 0; b < enc.lengths.size(); ++b) {
      std::vector<double> row(len, 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        const float* cls_row = last.values.data() + ((b * heads + h) * len + 0) * len;
        for (std::size_t j = 0; j < len; ++j) row[j] += cls_row[j];
      }
      for (auto& v : row) v /= static_cast<double>(heads);
      const auto& toks = sentences[r0 + b];
      std::size_t kept = 0;
      for (auto t : toks)
        if (t != config.special.pad && !(exclude_specials && config.special.is_special(t))) ++kept;
      r.entropies.push_back(cls_row_entropy(row, toks, config.special, exclude_specials));
      r.attended.push_back(kept);
    }
  });
  r.mean_entropy = std::accumulate(r.entropies.begin(), r.entropies.end(), 0.0) /
                   static_cast<double>(r.entropies.size());
  return r;
}

double relative_delta(double cls_error, double mean_error) {
  if (cls_error == 0) return mean_error == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (mean_error - cls_error) / cls_error;
}

PoolingReport pooling_ablation(const encoder::EncoderParams<float>& params,
                               const encoder::EncoderConfig& config,
                               std::span<const corpus::ParallelPair> pairs, std::size_t k) {
  std::vector<std::vector<TokenId>> src, tgt;
  std::vector<std::uint64_t> ids;
  for (const auto& p : pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
    ids.push_back(p.id);
  }
  PoolingReport r;
  for (Pooling pool : {Pooling::Cls, Pooling::Mean}) {
    auto s = encode_sentences(params, config, src, ids, pool);
    auto t = encode_sentences(params, config, tgt, ids, pool);
    const double e = xsim_error(s, t, identity_gold(s), k).error_rate;
    (pool == Pooling::Cls ? r.cls_error : r.mean_error) = e;
  }
  r.delta = relative_delta(r.cls_error, r.mean_error);
  return r;
}

void export_embeddings(const encoder::EncoderParams<float>& params,
                       const encoder::EncoderConfig& config,
                       std::span<const std::vector<TokenId>> rows,
                       std::span<const std::uint64_t> ids, Pooling pooling,
                       const std::filesystem::path& path) {
  save_emb1(encode_sentences(params, config, rows, ids, pooling), path);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvalError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_mining_csv(const std::filesystem::path& path, const MiningReport& r) {
  auto out = open_csv(path);
  out << "query_id,predicted_id,gold_id,margin,hard_negative,correct\n";
  for (const auto& q : r.queries)
    out << q.query_id << ',' << q.predicted_id << ',' << q.gold_id << ',' << num(q.margin) << ','
        << (q.hard_negative ? 1 : 0) << ',' << (q.correct() ? 1 : 0) << '\n';
  if (!out) throw EvalError("failed writing " + path.string());
}

void write_token_csv(const std::filesystem::path& path, const TokenMatchReport& r) {
  auto out = open_csv(path);
  out << "query_pair,query_position,query_token,rank,neighbor_pair,neighbor_side,neighbor_position,"
         "neighbor_token,cosine,category\n";
  for (const auto& q : r.queries)
    for (std::size_t k = 0; k < q.neighbors.size(); ++k) {
      const auto& nb = q.neighbors[k];
      out << q.pair_id << ',' << q.position << ',' << q.token << ',' << k + 1 << ',' << nb.pair_id << ','
          << (nb.target_side ? "b" : "a") << ',' << nb.position << ',' << nb.token << ',' << num(nb.cosine)
          << ',' << to_string(nb.category) << '\n';
    }
  if (!out) throw EvalError("failed writing " + path.string());
}

void write_attention_csv(const std::filesystem::path& path, const AttentionReport& r) {
  auto out = open_csv(path);
  out << "sentence,attended,entropy\n";
  for (std::size_t i = 0; i < r.entropies.size(); ++i)
    out << i << ',' << r.attended[i] << ',' << num(r.entropies[i]) << '\n';
  if (!out) throw EvalError("failed writing " + path.string());
}

}  // namespace mexma::eval
