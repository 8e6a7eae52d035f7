#include "cgan/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cgan {

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::pretrained: return "pretrained";
    case Phase::finetuned: return "finetuned";
    case Phase::gan: return "gan";
  }
  return "?";
}

Phase parse_phase(const std::string& text) {
  if (text == "pretrained") return Phase::pretrained;
  if (text == "finetuned") return Phase::finetuned;
  if (text == "gan") return Phase::gan;
  throw CheckpointError("unknown checkpoint phase '" + text + "'");
}

namespace {

constexpr const char* kMagic = "cgan-checkpoint";
const std::array<const char*, 6> kSections{"config", "vocab", "generator", "discriminator", "optimizer", "state"};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_ += s;
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string section) : data_(std::move(data)), section_(std::move(section)) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = u64();
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  void done() const {
    if (pos_ != data_.size()) throw CheckpointError("section " + section_ + ": trailing bytes");
  }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw CheckpointError("section " + section_ + ": truncated");
  }
  std::string data_;
  std::string section_;
  std::size_t pos_ = 0;
};

void write_params(Writer& w, const ParamList& params) {
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.u64(p.tensor.shape().size());
    for (auto d : p.tensor.shape()) w.u64(d);
    w.doubles(p.tensor.values());
  }
}

void read_params(Reader& r, const ParamList& params) {
  const auto n = r.u64();
  if (n != params.size()) throw CheckpointError("parameter count mismatch");
  for (const auto& p : params) {
    const auto name = r.str();
    if (name != p.name) throw CheckpointError("expected parameter " + p.name + ", found " + name);
    Shape shape(r.u64());
    for (auto& d : shape) d = r.u64();
    if (shape != p.tensor.shape()) throw CheckpointError("shape mismatch for " + name);
    auto values = r.doubles();
    Tensor t = p.tensor;
    auto dst = t.mutable_values();
    if (values.size() != dst.size()) throw CheckpointError("size mismatch for " + name);
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

void write_adam(Writer& w, const std::optional<AdamState>& a) {
  w.u8(a.has_value());
  if (!a) return;
  w.u64(a->step_count);
  w.f64(a->beta1);
  w.f64(a->beta2);
  w.f64(a->epsilon);
  w.f64(a->learning_rate);
  w.u64(a->first_moment.size());
  for (std::size_t i = 0; i < a->first_moment.size(); ++i) {
    w.doubles(a->first_moment[i]);
    w.doubles(a->second_moment[i]);
  }
}

std::optional<AdamState> read_adam(Reader& r) {
  if (!r.u8()) return std::nullopt;
  AdamState a;
  a.step_count = r.u64();
  a.beta1 = r.f64();
  a.beta2 = r.f64();
  a.epsilon = r.f64();
  a.learning_rate = r.f64();
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    a.first_moment.push_back(r.doubles());
    a.second_moment.push_back(r.doubles());
  }
  return a;
}

std::string header_text(Phase phase, const std::array<std::uint64_t, kSections.size()>& offsets,
                        const std::array<std::uint64_t, kSections.size()>& sizes) {
  std::string h = std::string(kMagic) + "\nformat_version " + std::to_string(Checkpoint::kFormatVersion) +
                  "\nphase " + to_string(phase) + "\nsections " + std::to_string(kSections.size()) + "\n";
  for (std::size_t i = 0; i < kSections.size(); ++i) {
    char line[96];
    std::snprintf(line, sizeof line, "section %-13s %020llu %020llu\n", kSections[i],
                  static_cast<unsigned long long>(offsets[i]), static_cast<unsigned long long>(sizes[i]));
    h += line;
  }
  h += "end\n";
  return h;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, std::ostream& out) {
  std::array<std::string, kSections.size()> body;
  {
    Writer w;
    w.str(echo_config(c.config));
    body[0] = w.take();
  }
  {
    std::ostringstream vs;
    c.vocab.save(vs);
    Writer w;
    w.str(vs.str());
    body[1] = w.take();
  }
  {
    Writer w;
    write_params(w, c.generator.parameters());
    body[2] = w.take();
  }
  {
    Writer w;
    w.u8(c.discriminator.has_value());
    if (c.discriminator) {
      const auto& d = *c.discriminator;
      w.u8(d.config().freeze_encoder);
      w.u8(d.config().encoder_dropout);
      write_params(w, d.parameters());
      w.u64(d.blocks.size());
      for (const auto& b : d.blocks) {
        w.doubles(b.stats.running_mean);
        w.doubles(b.stats.running_var);
        w.f64(b.stats.momentum);
        w.f64(b.stats.eps);
      }
    }
    body[3] = w.take();
  }
  {
    Writer w;
    write_adam(w, c.gen_opt);
    write_adam(w, c.disc_opt);
    body[4] = w.take();
  }
  {
    Writer w;
    w.str(c.rng_state);
    w.u64(c.metrics_cursor);
    w.f64(c.baseline.value);
    w.u8(c.baseline.initialized);
    w.f64(c.baseline.momentum);
    w.u64(c.gan_epoch);
    w.u64(c.gen_steps);
    w.f64(c.start_perplexity);
    w.f64(c.best_perplexity);
    body[5] = w.take();
  }
  std::array<std::uint64_t, kSections.size()> offsets{}, sizes{};
  std::uint64_t at = 0;
  for (std::size_t i = 0; i < body.size(); ++i) {
    offsets[i] = at;
    sizes[i] = body[i].size();
    at += sizes[i];
  }
  out << header_text(c.phase, offsets, sizes);
  for (const auto& b : body) out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw CheckpointError("write failed");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    save_checkpoint(ckpt, out);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(std::istream& in) {
  auto line = [&in]() {
    std::string s;
    if (!std::getline(in, s)) throw CheckpointError("truncated header");
    return s;
  };
  if (line() != kMagic) throw CheckpointError("not a checkpoint (bad magic)");
  std::istringstream vl(line());
  std::string key;
  int version = -1;
  vl >> key >> version;
  if (key != "format_version") throw CheckpointError("missing format_version");
  if (version != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format_version " + std::to_string(version) + " (this build reads " +
                          std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  Checkpoint c;
  {
    std::istringstream pl(line());
    std::string phase;
    pl >> key >> phase;
    if (key != "phase") throw CheckpointError("missing phase");
    c.phase = parse_phase(phase);
  }
  std::size_t count = 0;
  {
    std::istringstream sl(line());
    sl >> key >> count;
    if (key != "sections" || count != kSections.size()) throw CheckpointError("unexpected section table");
  }
  std::array<std::uint64_t, kSections.size()> offsets{}, sizes{};
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream sl(line());
    std::string name;
    sl >> key >> name >> offsets[i] >> sizes[i];
    if (key != "section" || name != kSections[i]) throw CheckpointError("unexpected section " + name);
  }
  if (line() != "end") throw CheckpointError("missing header end");
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto section = [&](std::size_t i) {
    if (offsets[i] > payload.size() || sizes[i] > payload.size() - offsets[i]) {
      throw CheckpointError(std::string("section ") + kSections[i] + " out of bounds");
    }
    return Reader(payload.substr(offsets[i], sizes[i]), kSections[i]);
  };

  {
    auto r = section(0);
    c.config = parse_config(r.str(), "checkpoint config");
    r.done();
  }
  {
    auto r = section(1);
    std::istringstream vs(r.str());
    c.vocab = Vocabulary::load(vs);
    r.done();
  }
  auto model = c.config.model;
  if (model.vocab_size == 0) model.vocab_size = c.vocab.size();
  if (model.vocab_size != c.vocab.size()) throw CheckpointError("config vocab_size does not match vocabulary");
  Rng scratch(0);
  c.generator = Generator(model, scratch);
  {
    auto r = section(2);
    read_params(r, c.generator.parameters());
    r.done();
  }
  {
    auto r = section(3);
    if (r.u8()) {
      DiscriminatorConfig dc;
      dc.freeze_encoder = r.u8();
      dc.encoder_dropout = r.u8();
      auto d = Discriminator::init_from_generator(c.generator, dc, scratch);
      read_params(r, d.parameters());
      if (r.u64() != d.blocks.size()) throw CheckpointError("batch-norm block count mismatch");
      for (auto& b : d.blocks) {
        b.stats.running_mean = r.doubles();
        b.stats.running_var = r.doubles();
        b.stats.momentum = r.f64();
        b.stats.eps = r.f64();
      }
      c.discriminator = std::move(d);
    }
    r.done();
  }
  {
    auto r = section(4);
    c.gen_opt = read_adam(r);
    c.disc_opt = read_adam(r);
    r.done();
  }
  {
    auto r = section(5);
    c.rng_state = r.str();
    c.metrics_cursor = r.u64();
    c.baseline.value = r.f64();
    c.baseline.initialized = r.u8();
    c.baseline.momentum = r.f64();
    c.gan_epoch = r.u64();
    c.gen_steps = r.u64();
    c.start_perplexity = r.f64();
    c.best_perplexity = r.f64();
    r.done();
  }
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    return load_checkpoint(in);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace cgan
