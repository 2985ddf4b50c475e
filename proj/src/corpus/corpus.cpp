#include "mexma/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mexma::corpus {

namespace {

constexpr const char* kSpecialForms[] = {"<pad>", "<cls>", "<eos>", "<mask>", "<unk>"};

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

}  // namespace

Vocab::Vocab() {
  for (auto f : kSpecialForms) add(f);
}

TokenId Vocab::add(std::string_view form) {
  std::string key(form);
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(forms_.size());
  forms_.push_back(key);
  ids_.emplace(std::move(key), id);
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view form) const {
  auto it = ids_.find(std::string(form));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id_or_unk(std::string_view form) const {
  return find(form).value_or(special_.unk);
}

const std::string& Vocab::form(TokenId id) const {
  if (id >= forms_.size())
    throw CorpusError("token id " + std::to_string(id) + " outside vocab of " +
                      std::to_string(forms_.size()));
  return forms_[id];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write vocab " + path.string());
  for (const auto& f : forms_) out << f << '\n';
  if (!out) throw CorpusError("failed writing vocab " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read vocab " + path.string());
  Vocab v;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (n < 5) {
      if (line != kSpecialForms[n])
        throw CorpusError(path.string() + ": line " + std::to_string(n + 1) + " should be " +
                          kSpecialForms[n]);
    } else if (v.add(line) != n) {
      throw CorpusError(path.string() + ": duplicate form '" + line + "' on line " +
                        std::to_string(n + 1));
    }
    ++n;
  }
  if (n < 5) throw CorpusError(path.string() + ": missing special tokens");
  return v;
}

std::vector<TokenId> tokenize(std::string_view sentence, const Vocab& vocab) {
  std::vector<TokenId> row{vocab.special().cls};
  for (auto w : split_ws(sentence)) row.push_back(vocab.id_or_unk(w));
  row.push_back(vocab.special().eos);
  return row;
}

std::string detokenize(std::span<const TokenId> row, const Vocab& vocab) {
  std::string out;
  for (auto id : row) {
    if (vocab.special().is_special(id) && id != vocab.special().unk) continue;
    if (!out.empty()) out += ' ';
    out += vocab.form(id);
  }
  return out;
}

// ---------------------------------------------------------------------------

Reorder parse_reorder(std::string_view name) {
  if (name == "none") return Reorder::None;
  if (name == "adjacent-swap") return Reorder::AdjacentSwap;
  throw CorpusError("unknown reorder rule '" + std::string(name) +
                    "' (expected none or adjacent-swap)");
}

std::string_view to_string(Reorder reorder) {
  return reorder == Reorder::None ? "none" : "adjacent-swap";
}

void validate(const SyntheticSpec& s) {
  if (s.content_vocab < 10) throw CorpusError("content_vocab must be at least 10");
  if (s.min_length < 2) throw CorpusError("min_length must be at least 2");
  if (s.max_length < s.min_length) throw CorpusError("max_length must be >= min_length");
  if (!(s.zipf_exponent >= 0.0)) throw CorpusError("zipf_exponent must be nonnegative");
  if (!(s.swap_probability >= 0.0 && s.swap_probability <= 1.0))
    throw CorpusError("swap_probability must lie in [0, 1]");
}

TokenId SyntheticCorpus::translate(TokenId a) const {
  if (!is_a(a)) throw CorpusError("id " + std::to_string(a) + " is not a language-A token");
  return static_cast<TokenId>(first_b + bijection[a - first_a]);
}

TokenId SyntheticCorpus::untranslate(TokenId b) const {
  if (!is_b(b)) throw CorpusError("id " + std::to_string(b) + " is not a language-B token");
  const auto it = std::find(bijection.begin(), bijection.end(), b - first_b);
  return static_cast<TokenId>(first_a + (it - bijection.begin()));
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::size_t n) {
  validate(spec);
  if (n == 0) throw CorpusError("synthetic corpus size must be positive");
  const std::size_t V = spec.content_vocab;
  SyntheticCorpus c;
  c.content_vocab = V;
  c.first_a = static_cast<TokenId>(c.vocab.size());
  for (std::size_t i = 0; i < V; ++i) c.vocab.add("a" + std::to_string(i));
  c.first_b = static_cast<TokenId>(c.vocab.size());
  for (std::size_t i = 0; i < V; ++i) c.vocab.add("b" + std::to_string(i));

  c.bijection.resize(V);
  std::iota(c.bijection.begin(), c.bijection.end(), std::size_t{0});
  std::mt19937_64 perm_rng(spec.bijection_seed);
  std::shuffle(c.bijection.begin(), c.bijection.end(), perm_rng);

  std::vector<double> weights(V);
  for (std::size_t r = 0; r < V; ++r)
    weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
  std::discrete_distribution<std::size_t> token(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::mt19937_64 rng(spec.corpus_seed);

  const auto& sp = c.vocab.special();
  std::set<std::vector<std::size_t>> seen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 100 * n + 1000;
  while (c.pairs.size() < n) {
    if (++attempts > max_attempts)
      throw CorpusError("could not draw " + std::to_string(n) +
                        " distinct sentences; enlarge the vocab or length range");
    std::vector<std::size_t> base(length(rng));
    for (auto& t : base) t = token(rng);
    if (!seen.insert(base).second) continue;

    // order[q] = base position shown at target content position q
    std::vector<std::size_t> order(base.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (spec.reorder == Reorder::AdjacentSwap) {
      for (std::size_t q = 0; q + 1 < order.size(); ++q)
        if (unit(rng) < spec.swap_probability) {
          std::swap(order[q], order[q + 1]);
          ++q;
        }
    }

    ParallelPair p;
    p.id = c.pairs.size();
    p.source.push_back(sp.cls);
    p.target.push_back(sp.cls);
    p.alignment.assign(base.size() + 2, -1);
    p.alignment[0] = 0;
    for (std::size_t i = 0; i < base.size(); ++i)
      p.source.push_back(static_cast<TokenId>(c.first_a + base[i]));
    for (std::size_t q = 0; q < order.size(); ++q) {
      p.target.push_back(static_cast<TokenId>(c.first_b + c.bijection[base[order[q]]]));
      p.alignment[order[q] + 1] = static_cast<std::int32_t>(q + 1);
    }
    p.source.push_back(sp.eos);
    p.target.push_back(sp.eos);
    p.alignment.back() = static_cast<std::int32_t>(p.target.size() - 1);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

// ---------------------------------------------------------------------------

IngestResult ingest_tsv(const std::filesystem::path& path, std::size_t max_seq_len,
                        const Vocab* fixed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  IngestResult r;
  if (fixed) r.vocab = *fixed;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++r.report.lines;
    const auto columns = std::count(line.begin(), line.end(), '\t') + 1;
    if (columns != 2) {
      ++r.report.malformed;
      r.report.messages.push_back("line " + std::to_string(number) + ": expected 2 columns, got " +
                                  std::to_string(columns));
      continue;
    }
    const auto tab = line.find('\t');
    const std::string_view a(line.data(), tab), b(line.data() + tab + 1, line.size() - tab - 1);
    const auto wa = split_ws(a), wb = split_ws(b);
    if (wa.empty() || wb.empty()) {
      ++r.report.malformed;
      r.report.messages.push_back("line " + std::to_string(number) + ": empty column");
      continue;
    }
    if (wa.size() + 2 > max_seq_len || wb.size() + 2 > max_seq_len) {
      ++r.report.over_length;
      r.report.messages.push_back("line " + std::to_string(number) + ": longer than " +
                                  std::to_string(max_seq_len) + " tokens, skipped");
      continue;
    }
    if (!fixed) {
      for (auto w : wa) r.vocab.add(w);
      for (auto w : wb) r.vocab.add(w);
    }
    ParallelPair p;
    p.id = number;
    p.source = tokenize(a, r.vocab);
    p.target = tokenize(b, r.vocab);
    r.pairs.push_back(std::move(p));
    ++r.report.accepted;
  }
  return r;
}

void write_tsv(const std::filesystem::path& path, std::span<const ParallelPair> pairs,
               const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& p : pairs)
    out << detokenize(p.source, vocab) << '\t' << detokenize(p.target, vocab) << '\n';
  if (!out) throw CorpusError("failed writing " + path.string());
}

std::string spec_to_json(const SyntheticSpec& s, std::size_t n) {
  nlohmann::ordered_json j;
  j["content_vocab"] = s.content_vocab;
  j["zipf_exponent"] = s.zipf_exponent;
  j["min_length"] = s.min_length;
  j["max_length"] = s.max_length;
  j["bijection_seed"] = s.bijection_seed;
  j["reorder"] = std::string(to_string(s.reorder));
  j["swap_probability"] = s.swap_probability;
  j["corpus_seed"] = s.corpus_seed;
  j["pairs"] = n;
  return j.dump(2) + "\n";
}

SyntheticSpec spec_from_json(const std::string& text, std::size_t* n) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("bad corpus spec: ") + e.what());
  }
  if (!j.is_object()) throw CorpusError("corpus spec must be a JSON object");
  SyntheticSpec s;
  try {
    for (auto& [key, value] : j.items()) {
      if (key == "content_vocab") s.content_vocab = value.get<std::size_t>();
      else if (key == "zipf_exponent") s.zipf_exponent = value.get<double>();
      else if (key == "min_length") s.min_length = value.get<std::size_t>();
      else if (key == "max_length") s.max_length = value.get<std::size_t>();
      else if (key == "bijection_seed") s.bijection_seed = value.get<std::uint64_t>();
      else if (key == "reorder") s.reorder = parse_reorder(value.get<std::string>());
      else if (key == "swap_probability") s.swap_probability = value.get<double>();
      else if (key == "corpus_seed") s.corpus_seed = value.get<std::uint64_t>();
      else if (key == "pairs") { if (n) *n = value.get<std::size_t>(); }
      else throw CorpusError("unknown corpus spec key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("bad corpus spec value: ") + e.what());
  }
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------

CorpusSplit split_corpus(std::vector<ParallelPair> pairs, std::size_t dev, std::size_t test,
                         std::uint64_t seed) {
  if (dev + test > pairs.size())
    throw CorpusError("split sizes " + std::to_string(dev) + " + " + std::to_string(test) +
                      " exceed corpus of " + std::to_string(pairs.size()));
  std::set<std::uint64_t> ids;
  for (const auto& p : pairs)
    if (!ids.insert(p.id).second) throw CorpusError("duplicate pair id " + std::to_string(p.id));
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  CorpusSplit s;
  auto it = std::make_move_iterator(pairs.begin());
  s.test.assign(it, it + static_cast<std::ptrdiff_t>(test));
  s.dev.assign(it + static_cast<std::ptrdiff_t>(test), it + static_cast<std::ptrdiff_t>(test + dev));
  s.train.assign(it + static_cast<std::ptrdiff_t>(test + dev), std::make_move_iterator(pairs.end()));
  return s;
}

std::vector<TokenId> make_hard_negative(std::span<const TokenId> sentence,
                                        const SpecialTokens& special, TokenId first_content,
                                        std::size_t content_count, std::mt19937_64& rng) {
  if (content_count < 2) throw CorpusError("hard negatives need at least two content ids");
  std::vector<std::size_t> positions;
  for (std::size_t p = 0; p < sentence.size(); ++p)
    if (!special.is_special(sentence[p])) positions.push_back(p);
  if (positions.empty()) throw CorpusError("sentence has no content token to perturb");
  std::vector<TokenId> out(sentence.begin(), sentence.end());
  const auto p = positions[std::uniform_int_distribution<std::size_t>(0, positions.size() - 1)(rng)];
  const bool in_range = out[p] >= first_content && out[p] < first_content + content_count;
  // Draw among the ids that differ from the original.
  auto id = static_cast<TokenId>(first_content + std::uniform_int_distribution<std::size_t>(
                                                     0, content_count - (in_range ? 2 : 1))(rng));
  if (in_range && id >= out[p]) ++id;
  out[p] = id;
  return out;
}

}  // namespace mexma::corpus
