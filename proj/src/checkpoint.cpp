#include "scdmd/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "scdmd/error.hpp"

namespace scdmd {
namespace {

constexpr std::array<char, 8> kMagic{'S', 'C', 'D', 'M', 'D', 'C', 'K', 'P'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(ConstSpan v) {
    for (double x : v) f64(x);
  }
  void bytes(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Parser {
 public:
  Parser(const std::string& data, std::string path) : d_(data), path_(std::move(path)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  Vec f64s(std::uint64_t n) {
    if (n > remaining() / 8) fail("truncated float array");
    Vec v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::string bytes() {
    const std::uint64_t n = u64();
    if (n > remaining()) fail("truncated string");
    return std::string(take(n), n);
  }
  std::size_t remaining() const { return d_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError("checkpoint " + path_ + ": " + msg);
  }

 private:
  const char* take(std::size_t n) {
    if (n > remaining()) fail("truncated");
    const char* p = d_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& d_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_block(Writer& w, const NetworkBlock& b) {
  const MlpSpec& s = b.params.spec();
  w.bytes(b.name);
  w.u64(s.input_dim);
  w.u64(s.hidden_dims.size());
  for (std::size_t h : s.hidden_dims) w.u64(h);
  w.u64(s.output_dim);
  w.u32(static_cast<std::uint32_t>(s.activation));
  w.u64(s.feature_layer_index);
  w.u64(b.params.size());
  w.f64s(b.params.flat());
  w.u8(b.optimizer ? 1 : 0);
  if (b.optimizer) {
    const AdamWState& o = *b.optimizer;
    if (o.m.size() != b.params.size() || o.v.size() != b.params.size()) {
      throw ShapeError("checkpoint: optimizer moments do not match parameter count");
    }
    w.u64(o.step);
    w.f64(o.hyper.learning_rate);
    w.f64(o.hyper.beta1);
    w.f64(o.hyper.beta2);
    w.f64(o.hyper.epsilon);
    w.f64(o.hyper.weight_decay);
    w.f64s(o.m);
    w.f64s(o.v);
  }
}

NetworkBlock read_block(Parser& p) {
  NetworkBlock b;
  b.name = p.bytes();
  MlpSpec s;
  s.input_dim = p.u64();
  const std::uint64_t n_hidden = p.u64();
  if (n_hidden > p.remaining() / 8) p.fail("bad hidden layer count");
  s.hidden_dims.resize(n_hidden);
  for (auto& h : s.hidden_dims) h = p.u64();
  s.output_dim = p.u64();
  const std::uint32_t act = p.u32();
  if (act > static_cast<std::uint32_t>(Activation::kSilu)) p.fail("unknown activation");
  s.activation = static_cast<Activation>(act);
  s.feature_layer_index = p.u64();
  try {
    s.validate();
  } catch (const Error& e) {
    p.fail(std::string("invalid network spec: ") + e.what());
  }
  const std::uint64_t count = p.u64();
  if (count != s.param_count()) p.fail("parameter count does not match spec");
  b.params = MlpParams(s, p.f64s(count));
  const std::uint8_t has_opt = p.u8();
  if (has_opt > 1) p.fail("bad optimizer flag");
  if (has_opt) {
    AdamWState o;
    o.step = p.u64();
    o.hyper.learning_rate = p.f64();
    o.hyper.beta1 = p.f64();
    o.hyper.beta2 = p.f64();
    o.hyper.epsilon = p.f64();
    o.hyper.weight_decay = p.f64();
    o.m = p.f64s(count);
    o.v = p.f64s(count);
    b.optimizer = std::move(o);
  }
  return b;
}

}  // namespace

const NetworkBlock& Checkpoint::network(const std::string& name) const {
  for (const auto& n : networks) {
    if (n.name == name) return n;
  }
  throw IoError("checkpoint has no network \"" + name + "\"");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.networks.size()));
  w.u64(ckpt.step);
  w.bytes(ckpt.meta.is_null() ? std::string("{}") : ckpt.meta.dump());
  for (const auto& b : ckpt.networks) write_block(w, b);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    out.flush();
    if (!out) throw IoError("checkpoint write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename checkpoint to " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Parser p(data, path.string());
  if (data.size() < kMagic.size() || std::memcmp(data.data(), kMagic.data(), kMagic.size()) != 0) {
    p.fail("bad magic");
  }
  for (std::size_t i = 0; i < kMagic.size(); ++i) p.u8();
  const std::uint32_t version = p.u32();
  if (version != kCheckpointVersion) {
    p.fail("unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::uint32_t n_networks = p.u32();
  ckpt.step = p.u64();
  try {
    ckpt.meta = json::parse(p.bytes());
  } catch (const json::parse_error&) {
    p.fail("metadata is not valid JSON");
  }
  for (std::uint32_t i = 0; i < n_networks; ++i) ckpt.networks.push_back(read_block(p));
  if (p.remaining() != 0) p.fail("trailing bytes");
  return ckpt;
}

Checkpoint checkpoint_from_state(const DistillState& state, json meta) {
  Checkpoint c;
  c.step = state.step;
  c.meta = std::move(meta);
  c.networks.push_back({"generator", state.generator, state.generator_opt});
  c.networks.push_back({"critic", state.critic, state.critic_opt});
  return c;
}

DistillState state_from_checkpoint(const Checkpoint& ckpt, const DistillConfig& config) {
  const NetworkBlock& g = ckpt.network("generator");
  const NetworkBlock& c = ckpt.network("critic");
  if (!g.optimizer || !c.optimizer) throw IoError("checkpoint lacks optimizer state");
  DistillState s;
  s.generator = g.params;
  s.generator_opt = *g.optimizer;
  s.critic = c.params;
  s.critic_opt = *c.optimizer;
  s.step = ckpt.step;
  s.config = config;
  return s;
}

}  // namespace scdmd
