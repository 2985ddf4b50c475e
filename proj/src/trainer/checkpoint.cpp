// MXC1 container: magic, u32 version, u32-length "key=value" text block, then
// named f32 tensors until end of file. All integers little-endian.
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mexma/trainer/trainer.hpp"

namespace mexma::trainer {

namespace {

constexpr char kMagic[4] = {'M', 'X', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

void put_tensor(std::ostream& out, const std::string& name, const tensor::Array<float>& a) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
  for (auto e : a.shape) put_u32(out, static_cast<std::uint32_t>(e));
  out.write(reinterpret_cast<const char*>(a.values.data()),
            static_cast<std::streamsize>(a.values.size() * sizeof(float)));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  bool done() const { return pos_ == bytes_.size(); }

  void read(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(path_ + ": truncated " + std::string(what) + " at byte " +
                            std::to_string(pos_));
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    read(&v, 4, what);
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    std::string s(n, '\0');
    read(s.data(), n, what);
    return s;
  }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ostringstream header;
  for (const auto& [k, v] : to_fields(ckpt.config)) header << k << '=' << v << '\n';
  header << "state.step=" << ckpt.state.step << '\n';
  header << "optimizer.step=" << ckpt.state.optimizer.step << '\n';
  // Every random draw is derived from (seed, purpose, step), so the seed and the
  // next step index are the complete stream state.
  header << "rng.seed=" << ckpt.config.seed << '\n';
  header << "rng.next_step=" << ckpt.state.step + 1 << '\n';
  const std::string text = header.str();

  // Write to a sibling file and rename so readers never see a partial checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto params = parameters(ckpt.state.model);
    const auto& opt = ckpt.state.optimizer;
    if (opt.first_moment.size() != params.size() || opt.second_moment.size() != params.size())
      throw CheckpointError("optimizer state does not match the model parameters");
    for (const auto& [name, p] : params) put_tensor(out, name, *p);
    for (std::size_t i = 0; i < params.size(); ++i) put_tensor(out, "adam.m." + params[i].first, opt.first_moment[i]);
    for (std::size_t i = 0; i < params.size(); ++i) put_tensor(out, "adam.v." + params[i].first, opt.second_moment[i]);
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path.string());

  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError(path.string() + ": bad magic (not an MXC1 checkpoint)");
  const auto version = r.u32("version");
  if (version != kVersion)
    throw CheckpointError(path.string() + ": version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kVersion) + ")");
  const std::string text = r.text(r.u32("config length"), "config block");

  Checkpoint ck;
  ck.config = default_toy_config();
  std::map<std::string, std::string> extra;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(path.string() + ": bad config line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.rfind("state.", 0) == 0 || key.rfind("optimizer.", 0) == 0 || key.rfind("rng.", 0) == 0) {
      extra[key] = value;
      continue;
    }
    try {
      set_field(ck.config, key, value);
    } catch (const TrainError& e) {
      throw CheckpointError(path.string() + ": " + e.what());
    }
  }
  for (const char* k : {"state.step", "optimizer.step"})
    if (!extra.count(k)) throw CheckpointError(path.string() + ": missing " + k);

  try {
    ck.state = init_state(ck.config);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": stored config is invalid: " + e.what());
  }
  ck.state.step = std::stoull(extra["state.step"]);
  ck.state.optimizer.step = std::stoull(extra["optimizer.step"]);

  std::map<std::string, tensor::Array<float>*> slots;
  auto params = parameters(ck.state.model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    slots[params[i].first] = params[i].second;
    slots["adam.m." + params[i].first] = &ck.state.optimizer.first_moment[i];
    slots["adam.v." + params[i].first] = &ck.state.optimizer.second_moment[i];
  }
  std::size_t filled = 0;
  while (!r.done()) {
    const auto name = r.text(r.u32("tensor name length"), "tensor name");
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError(path.string() + ": unexpected tensor '" + name + "'");
    const auto rank = r.u32("tensor rank");
    tensor::Shape shape(rank);
    for (auto& e : shape) e = r.u32("tensor extent");
    if (shape != it->second->shape)
      throw CheckpointError(path.string() + ": tensor '" + name + "' has shape " +
                            tensor::to_string(shape) + ", config expects " +
                            tensor::to_string(it->second->shape));
    r.read(it->second->values.data(), it->second->values.size() * sizeof(float), "tensor block");
    slots.erase(it);
    ++filled;
  }
  if (!slots.empty())
    throw CheckpointError(path.string() + ": truncated tensor block, missing '" +
                          slots.begin()->first + "'");
  return ck;
}

}  // namespace mexma::trainer
