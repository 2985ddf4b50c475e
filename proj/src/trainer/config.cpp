#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mexma/trainer/trainer.hpp"

namespace mexma::trainer {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw TrainError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size())
    bad_value(key, value, "a nonnegative integer");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "true or false");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

TrainConfig default_toy_config() {
  TrainConfig c;
  c.encoder.num_layers = 2;
  c.encoder.num_heads = 4;
  c.encoder.model_dim = 64;
  c.encoder.ff_dim = 256;
  c.encoder.max_seq_len = 32;
  return c;
}

void validate(const TrainConfig& c) {
  if (c.steps == 0) throw TrainError("steps must be positive (got 0)");
  if (c.batch_size < 2)
    throw TrainError("batch_size must be at least 2 (koleo and infonce need two sentences)");
  if (c.accumulation == 0 || c.batch_size % c.accumulation != 0)
    throw TrainError("accumulation must divide batch_size");
  if (c.batch_size / c.accumulation < 2)
    throw TrainError("micro-batches need at least 2 pairs (batch_size / accumulation)");
  if (!(c.learning_rate >= 0.0)) throw TrainError("learning_rate must be nonnegative");
  if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction <= 1.0))
    throw TrainError("warmup_fraction must lie in [0, 1]");
  if (!(c.adamw.beta1 >= 0 && c.adamw.beta1 < 1 && c.adamw.beta2 >= 0 && c.adamw.beta2 < 1))
    throw TrainError("adam betas must lie in [0, 1)");
  if (!(c.adamw.eps > 0)) throw TrainError("adam_eps must be positive");
  if (!(c.adamw.weight_decay >= 0)) throw TrainError("weight_decay must be nonnegative");
  if (c.head_layers == 0) throw TrainError("head_layers must be positive");
  if (c.log_every == 0) throw TrainError("log_every must be positive");
  try {
    encoder::validate(c.encoder);
    objectives::validate(c.masking);
    objectives::validate(c.weights);
    objectives::validate(c.flow);
  } catch (const std::invalid_argument& e) {
    throw TrainError(e.what());
  }
}

std::vector<std::pair<std::string, std::string>> to_fields(const TrainConfig& c) {
  return {
      {"steps", std::to_string(c.steps)},
      {"batch_size", std::to_string(c.batch_size)},
      {"accumulation", std::to_string(c.accumulation)},
      {"learning_rate", format_double(c.learning_rate)},
      {"warmup_fraction", format_double(c.warmup_fraction)},
      {"seed", std::to_string(c.seed)},
      {"beta1", format_double(c.adamw.beta1)},
      {"beta2", format_double(c.adamw.beta2)},
      {"adam_eps", format_double(c.adamw.eps)},
      {"weight_decay", format_double(c.adamw.weight_decay)},
      {"num_layers", std::to_string(c.encoder.num_layers)},
      {"num_heads", std::to_string(c.encoder.num_heads)},
      {"model_dim", std::to_string(c.encoder.model_dim)},
      {"ff_dim", std::to_string(c.encoder.ff_dim)},
      {"vocab_size", std::to_string(c.encoder.vocab_size)},
      {"max_seq_len", std::to_string(c.encoder.max_seq_len)},
      {"init_std", format_double(c.encoder.init_std)},
      {"head_layers", std::to_string(c.head_layers)},
      {"mask_ratio", format_double(c.masking.ratio)},
      {"mask_scheme", std::string(objectives::to_string(c.masking.scheme))},
      {"alpha", format_double(c.weights.alpha)},
      {"beta", format_double(c.weights.beta)},
      {"gamma", format_double(c.weights.gamma)},
      {"token_gradients", bool_text(c.flow.token_gradients)},
      {"alignment", std::string(objectives::to_string(c.flow.alignment))},
      {"alignment_family", std::string(objectives::to_string(c.flow.family))},
      {"koleo", bool_text(c.flow.koleo)},
      {"symmetric", bool_text(c.flow.symmetric)},
      {"temperature", format_double(c.flow.temperature)},
      {"log_every", std::to_string(c.log_every)},
      {"checkpoint_every", std::to_string(c.checkpoint_every)},
      {"record_wall_time", bool_text(c.record_wall_time)},
  };
}

void set_field(TrainConfig& c, const std::string& k, const std::string& v) {
  try {
    if (k == "steps") c.steps = parse_size(k, v);
    else if (k == "batch_size") c.batch_size = parse_size(k, v);
    else if (k == "accumulation") c.accumulation = parse_size(k, v);
    else if (k == "learning_rate") c.learning_rate = parse_double(k, v);
    else if (k == "warmup_fraction") c.warmup_fraction = parse_double(k, v);
    else if (k == "seed") c.seed = c.encoder.seed = parse_u64(k, v);
    else if (k == "beta1") c.adamw.beta1 = parse_double(k, v);
    else if (k == "beta2") c.adamw.beta2 = parse_double(k, v);
    else if (k == "adam_eps") c.adamw.eps = parse_double(k, v);
    else if (k == "weight_decay") c.adamw.weight_decay = parse_double(k, v);
    else if (k == "num_layers") c.encoder.num_layers = parse_size(k, v);
    else if (k == "num_heads") c.encoder.num_heads = parse_size(k, v);
    else if (k == "model_dim") c.encoder.model_dim = parse_size(k, v);
    else if (k == "ff_dim") c.encoder.ff_dim = parse_size(k, v);
    else if (k == "vocab_size") c.encoder.vocab_size = parse_size(k, v);
    else if (k == "max_seq_len") c.encoder.max_seq_len = parse_size(k, v);
    else if (k == "init_std") c.encoder.init_std = parse_double(k, v);
    else if (k == "head_layers") c.head_layers = parse_size(k, v);
    else if (k == "mask_ratio") c.masking.ratio = parse_double(k, v);
    else if (k == "mask_scheme") c.masking.scheme = objectives::parse_mask_scheme(v);
    else if (k == "alpha") c.weights.alpha = parse_double(k, v);
    else if (k == "beta") c.weights.beta = parse_double(k, v);
    else if (k == "gamma") c.weights.gamma = parse_double(k, v);
    else if (k == "token_gradients") c.flow.token_gradients = parse_bool(k, v);
    else if (k == "alignment") c.flow.alignment = objectives::parse_alignment_mode(v);
    else if (k == "alignment_family") c.flow.family = objectives::parse_alignment_family(v);
    else if (k == "koleo") c.flow.koleo = parse_bool(k, v);
    else if (k == "symmetric") c.flow.symmetric = parse_bool(k, v);
    else if (k == "temperature") c.flow.temperature = parse_double(k, v);
    else if (k == "log_every") c.log_every = parse_size(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = parse_size(k, v);
    else if (k == "record_wall_time") c.record_wall_time = parse_bool(k, v);
    else throw TrainError("unknown config key '" + k + "'");
  } catch (const std::invalid_argument& e) {
    throw TrainError("config key '" + k + "': " + e.what());
  }
}

TrainConfig config_from_json(const std::string& text, TrainConfig base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw TrainError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw TrainError("config must be a flat JSON object");
  for (auto& [key, value] : j.items()) {
    std::string s;
    if (value.is_string())
      s = value.get<std::string>();
    else if (value.is_boolean() || value.is_number())
      s = value.dump();
    else
      throw TrainError("config key '" + key + "' must be a string, number or boolean");
    set_field(base, key, s);
  }
  return base;
}

std::string config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : to_fields(c)) {
    if (v == "true" || v == "false")
      j[k] = v == "true";
    else if (k == "mask_scheme" || k == "alignment" || k == "alignment_family")
      j[k] = v;
    else
      j[k] = nlohmann::json::parse(v);
  }
  return j.dump(2) + "\n";
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw TrainError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), std::move(base));
}

double learning_rate_at(const TrainConfig& c, std::size_t step) {
  const double warm = c.warmup_fraction * static_cast<double>(c.steps);
  if (warm <= 0.0) return c.learning_rate;
  return c.learning_rate * std::min(1.0, static_cast<double>(step) / warm);
}

std::mt19937_64 derived_stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index) {
  // splitmix64 over the seed, a hash of the purpose and the index
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : purpose) h = (h ^ ch) * 1099511628211ULL;
  std::seed_seq seq{static_cast<std::uint32_t>(mix(seed)), static_cast<std::uint32_t>(mix(seed) >> 32),
                    static_cast<std::uint32_t>(mix(h)), static_cast<std::uint32_t>(mix(index)),
                    static_cast<std::uint32_t>(mix(index) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace mexma::trainer
