#include "tktr/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tktr/error.hpp"
#include "tktr/io/dataset.hpp"

namespace tktr::io {

namespace {

using nn::ChainRole;
using nn::LayerKind;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void floats(const std::vector<float>& v) {
    u64(v.size());
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
  }
  void param(const nn::Param<float>& p) {
    floats(p.value);
    floats(p.velocity);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t expected) {
    const std::uint64_t n = u64();
    require(n == expected, ErrorCode::Format,
            "checkpoint array of " + std::to_string(n) + " floats, expected " + std::to_string(expected));
    need(n * 4);
    std::vector<float> v(n);
    for (auto& f : v) f = std::bit_cast<float>(u32());
    return v;
  }
  void param(nn::Param<float>& p) {
    const std::size_t n = p.size();
    p.value = floats(n);
    p.velocity = floats(n);
    p.grad.assign(n, 0.0f);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    require(n <= b_.size() - pos_, ErrorCode::Format, "checkpoint is truncated");
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_spec(Writer& w, const ConvSpec& s) {
  for (std::size_t v : {s.c_in, s.c_out, s.kh, s.kw, s.stride, s.padding}) w.u32(std::uint32_t(v));
  w.u8(s.has_bias ? 1 : 0);
}

ConvSpec read_spec(Reader& r) {
  ConvSpec s;
  s.c_in = r.u32();
  s.c_out = r.u32();
  s.kh = r.u32();
  s.kw = r.u32();
  s.stride = r.u32();
  s.padding = r.u32();
  const std::uint8_t bias = r.u8();
  require(bias <= 1, ErrorCode::Format, "checkpoint has a bad bias flag");
  s.has_bias = bias == 1;
  return s;
}

void write_layer(Writer& w, const nn::Layer& l) {
  w.str(l.name);
  w.u8(std::uint8_t(l.kind()));
  w.u8(std::uint8_t(l.chain_role));
  w.str(l.chain_origin);
  std::visit(
      [&](const auto& op) {
        using Op = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<Op, nn::Conv2d<float>>) {
          write_spec(w, op.spec());
          w.param(op.weight);
          if (op.spec().has_bias) w.param(op.bias);
        } else if constexpr (std::is_same_v<Op, nn::BatchNorm<float>>) {
          w.u32(std::uint32_t(op.channels()));
          w.param(op.gamma);
          w.param(op.beta);
          w.floats(op.running_mean);
          w.floats(op.running_var);
        } else if constexpr (std::is_same_v<Op, nn::Linear<float>>) {
          w.u32(std::uint32_t(op.in_features()));
          w.u32(std::uint32_t(op.out_features()));
          w.param(op.weight);
          w.param(op.bias);
        }
      },
      l.op);
}

nn::Layer read_layer(Reader& r) {
  std::string name = r.str();
  const std::uint8_t kind = r.u8();
  const std::uint8_t role = r.u8();
  require(role <= std::uint8_t(ChainRole::Last), ErrorCode::Format, "checkpoint has an unknown chain role");
  std::string origin = r.str();

  nn::Layer l;
  switch (LayerKind(kind)) {
    case LayerKind::Conv: {
      const ConvSpec spec = read_spec(r);
      try {
        spec.validate();
      } catch (const Error& e) {
        fail(ErrorCode::Format, std::string("checkpoint conv: ") + e.what());
      }
      l = nn::make_conv(name, spec);
      auto& conv = std::get<nn::Conv2d<float>>(l.op);
      r.param(conv.weight);
      if (spec.has_bias) r.param(conv.bias);
      break;
    }
    case LayerKind::BatchNorm: {
      l = nn::make_batchnorm(name, r.u32());
      auto& bn = std::get<nn::BatchNorm<float>>(l.op);
      r.param(bn.gamma);
      r.param(bn.beta);
      bn.running_mean = r.floats(bn.channels());
      bn.running_var = r.floats(bn.channels());
      break;
    }
    case LayerKind::Relu:
      l = nn::make_relu(name);
      break;
    case LayerKind::MaxPool:
      l = nn::make_pool(name, nn::PoolMode::Max);
      break;
    case LayerKind::AvgPool:
      l = nn::make_pool(name, nn::PoolMode::Average);
      break;
    case LayerKind::Linear: {
      const std::size_t in = r.u32(), out = r.u32();
      l = nn::make_linear(name, in, out);
      auto& fc = std::get<nn::Linear<float>>(l.op);
      r.param(fc.weight);
      r.param(fc.bias);
      break;
    }
    default:
      fail(ErrorCode::Format, "checkpoint has unknown layer kind " + std::to_string(kind));
  }
  l.chain_role = ChainRole(role);
  l.chain_origin = std::move(origin);
  return l;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  for (char ch : kCheckpointMagic) w.u8(std::uint8_t(ch));
  w.u32(kCheckpointVersion);
  w.u32(c.epoch);
  w.str(c.rng_state);
  const auto& in = c.model.input_shape();
  w.u32(std::uint32_t(in.c));
  w.u32(std::uint32_t(in.h));
  w.u32(std::uint32_t(in.w));
  w.u32(std::uint32_t(c.model.layers().size()));
  for (const auto& l : c.model.layers()) write_layer(w, l);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  for (char& ch : magic) ch = char(r.u8());
  require(std::memcmp(magic, kCheckpointMagic, 4) == 0, ErrorCode::Format, "not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::Format,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.epoch = r.u32();
  c.rng_state = r.str();
  nn::FeatureShape in;
  in.c = r.u32();
  in.h = r.u32();
  in.w = r.u32();
  const std::uint32_t count = r.u32();
  std::vector<nn::Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) layers.push_back(read_layer(r));
  require(r.done(), ErrorCode::Format, "checkpoint has trailing bytes");
  try {
    c.model = nn::Model(in, std::move(layers));
  } catch (const Error& e) {
    fail(ErrorCode::Format, std::string("checkpoint describes an invalid model: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorCode::Io, "cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  out.flush();
  require(bool(out), ErrorCode::Io, "error writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace tktr::io
