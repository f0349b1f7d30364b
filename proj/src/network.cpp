#include "pnpreg/network.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "pnpreg/io.hpp"

namespace pnpreg {

namespace {
constexpr std::string_view kCheckpointMagic = "PNPR1";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kTailGain = 0.1;

std::size_t width_at(const Architecture& a, std::size_t scale) { return std::size_t{a.base_channels} << scale; }
}  // namespace

void Architecture::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ArgumentError("network channels must be positive");
  if (scales < 1 || scales > 6) throw ArgumentError("network scales must be in [1, 6]");
  if (base_channels == 0) throw ArgumentError("network base channels must be positive");
  if (noise_map && in_channels != out_channels + 1) {
    throw ArgumentError("noise-map network needs in_channels = out_channels + 1");
  }
  if (global_residual && in_channels < out_channels) {
    throw ArgumentError("global residual needs at least out_channels inputs");
  }
}

ResUNet::ResUNet(Architecture arch, std::uint64_t seed, DType dtype) : arch_(arch), dtype_(dtype) {
  arch_.validate();
  std::uint64_t stream = seed;
  const auto block = [&](const std::string& prefix, std::size_t c) {
    for (std::uint32_t b = 0; b < arch_.blocks; ++b) {
      const std::string name = prefix + ".block" + std::to_string(b);
      add_conv(name + ".conv0", c, c, std::sqrt(2.0), stream);
      add_conv(name + ".conv1", c, c, 1.0, stream);
    }
  };
  add_conv("head", width_at(arch_, 0), arch_.in_channels, 1.0, stream);
  for (std::size_t s = 0; s + 1 < arch_.scales; ++s) {
    block("down" + std::to_string(s), width_at(arch_, s));
    add_conv("down" + std::to_string(s) + ".stride", width_at(arch_, s + 1), width_at(arch_, s), 1.0, stream);
  }
  block("body", width_at(arch_, arch_.scales - 1));
  for (std::size_t s = arch_.scales - 1; s-- > 0;) {
    add_conv("up" + std::to_string(s) + ".transpose", width_at(arch_, s + 1), width_at(arch_, s), 1.0, stream);
    block("up" + std::to_string(s), width_at(arch_, s));
  }
  add_conv("tail", arch_.out_channels, width_at(arch_, 0), kTailGain, stream);
}

void ResUNet::add_conv(const std::string& name, std::size_t co, std::size_t ci, double gain, std::uint64_t& stream) {
  // One generator per layer keeps layers independent of each other's sizes.
  std::mt19937_64 rng(stream++);
  const double std = gain / std::sqrt(static_cast<double>(ci * 9));
  std::normal_distribution<double> normal(0.0, std);
  Tensor w({co, ci, 3, 3}, DType::F64);
  for (double& v : w.data<double>()) v = normal(rng);
  params_.emplace_back(name + ".w", w.to(dtype_));
}

std::vector<Parameter*> ResUNet::parameter_ptrs() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ResUNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ResUNet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

ResUNet ResUNet::to(DType dtype) const {
  ResUNet out = *this;
  out.dtype_ = dtype;
  for (auto& p : out.params_) {
    p.value = p.value.to(dtype);
    p.grad = p.value.zeros_like();
  }
  return out;
}

Var ResUNet::forward(Tape& tape, Var x, bool trainable) {
  std::vector<Var> w;
  w.reserve(params_.size());
  for (auto& p : params_) w.push_back(tape.parameter(p, trainable));
  return run(tape, x, w);
}

Var ResUNet::forward_frozen(Tape& tape, Var x) const {
  std::vector<Var> w;
  w.reserve(params_.size());
  for (const auto& p : params_) w.push_back(tape.alias(p.value));
  return run(tape, x, w);
}

Var ResUNet::run(Tape& tape, Var x, const std::vector<Var>& w) const {
  (void)tape;
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != arch_.in_channels) {
    throw DimensionError("network expects [N," + std::to_string(arch_.in_channels) + ",H,W], got " + shape_str(s));
  }
  if (x.value().dtype() != dtype_) {
    throw ArgumentError(std::string("network input dtype ") + dtype_name(x.value().dtype()) + " != weights " +
                        dtype_name(dtype_));
  }
  using ad::Padding;
  std::size_t idx = 0;
  const auto conv = [&](Var h, std::size_t stride = 1) { return ad::conv2d(h, w[idx++], Padding::Zero, stride); };
  const auto blocks = [&](Var h) {
    for (std::uint32_t b = 0; b < arch_.blocks; ++b) {
      Var r = ad::relu(conv(h));
      h = ad::add(h, conv(r));
    }
    return h;
  };

  const std::size_t multiple = std::size_t{1} << (arch_.scales - 1);
  const std::size_t h0 = s[2], w0 = s[3];
  const std::size_t hp = (h0 + multiple - 1) / multiple * multiple;
  const std::size_t wp = (w0 + multiple - 1) / multiple * multiple;
  Var in = (hp != h0 || wp != w0) ? ad::pad_replicate(x, hp, wp) : x;

  std::vector<Var> skips;
  Var h = conv(in);
  skips.push_back(h);
  for (std::size_t sc = 0; sc + 1 < arch_.scales; ++sc) {
    h = blocks(h);
    h = conv(h, 2);
    skips.push_back(h);
  }
  h = blocks(h);
  for (std::size_t sc = arch_.scales - 1; sc-- > 0;) {
    h = ad::add(h, skips[sc + 1]);
    h = ad::conv_transpose2d(h, w[idx++], Padding::Zero, 2, skips[sc].shape());
    h = blocks(h);
  }
  h = conv(ad::add(h, skips[0]));

  if (hp != h0 || wp != w0) h = ad::crop(h, h0, w0);
  if (arch_.global_residual) {
    Var image = arch_.in_channels == arch_.out_channels ? x : ad::slice_channels(x, 0, arch_.out_channels);
    h = ad::sub(image, h);
  }
  return h;
}

Tensor ResUNet::infer(const Tensor& x) const {
  Tape tape;
  Var out = forward_frozen(tape, tape.constant(x.to(dtype_)));
  return out.value().to(x.dtype());
}

DenoiserNet::DenoiserNet(std::uint32_t channels, std::uint32_t scales, std::uint32_t base, std::uint32_t blocks,
                         std::uint64_t seed, DType dtype, bool global_residual)
    : net_(Architecture{channels + 1, channels, scales, base, blocks, true, global_residual}, seed, dtype) {}

DenoiserNet::DenoiserNet(ResUNet net) : net_(std::move(net)) {
  if (!net_.architecture().noise_map) throw ArgumentError("denoiser network must take a noise-level map");
}

namespace {
double clamp_sigma(double sigma) {
  if (sigma < 0.0 || sigma > DenoiserNet::kSigmaMax || std::isnan(sigma)) {
    const double c = std::isnan(sigma) ? 0.0 : std::clamp(sigma, 0.0, DenoiserNet::kSigmaMax);
    std::cerr << "WARN: denoiser sigma " << sigma << " outside [0, 50/255], clamped to " << c << "\n";
    return c;
  }
  return sigma;
}
}  // namespace

Tensor DenoiserNet::sigma_input(const Tensor& z, double sigma) const {
  if (z.rank() != 4) throw DimensionError("denoiser expects N,C,H,W input, got " + shape_str(z.shape()));
  return Tensor::full({z.dim(0), 1, z.dim(2), z.dim(3)}, clamp_sigma(sigma), net_.dtype());
}

Tensor DenoiserNet::denoise(const Tensor& z, double sigma) const {
  const Tensor input = kernels::concat_channels(z.to(net_.dtype()), sigma_input(z, sigma));
  return net_.infer(input).to(z.dtype());
}

Var DenoiserNet::forward(Tape& tape, Var z, double sigma, bool trainable) {
  Var map = tape.constant(sigma_input(z.value(), sigma));
  return net_.forward(tape, ad::concat_channels(z, map), trainable);
}

Var DenoiserNet::forward_frozen(Tape& tape, Var z, double sigma) const {
  Var map = tape.constant(sigma_input(z.value(), sigma));
  return net_.forward_frozen(tape, ad::concat_channels(z, map));
}

ReGNet::ReGNet(std::uint32_t channels, std::uint32_t scales, std::uint32_t base, std::uint32_t blocks,
               std::uint64_t seed, DType dtype, bool global_residual)
    : net_(Architecture{channels, channels, scales, base, blocks, false, global_residual}, seed, dtype) {}

ReGNet::ReGNet(ResUNet net) : net_(std::move(net)) {
  if (net_.architecture().noise_map) throw ArgumentError("regularizer-gradient network takes no noise-level map");
}

struct CheckpointAccess {
  static std::shared_ptr<ResUNet> make(const Architecture& arch, DType dtype) {
    return std::make_shared<ResUNet>(arch, 0, dtype);
  }
};

std::vector<std::uint8_t> encode_checkpoint(const ResUNet& net, std::uint64_t step) {
  io::ByteWriter w;
  const auto& a = net.architecture();
  w.text(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(a.in_channels);
  w.u32(a.out_channels);
  w.u32(a.scales);
  w.u32(a.base_channels);
  w.u32(a.blocks);
  w.u8(a.noise_map ? 1 : 0);
  w.u8(a.global_residual ? 1 : 0);
  w.u64(step);
  w.u32(static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.text(p.name);
    io::write_tensor(w, p.value);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect(kCheckpointMagic, "PNPR1 checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Architecture a;
  a.in_channels = r.u32();
  a.out_channels = r.u32();
  a.scales = r.u32();
  a.base_channels = r.u32();
  a.blocks = r.u32();
  a.noise_map = r.u8() != 0;
  a.global_residual = r.u8() != 0;
  if (a.base_channels > 4096 || a.blocks > 64 || a.in_channels > 64 || a.out_channels > 64) {
    r.fail("implausible architecture descriptor");
  }
  try {
    a.validate();
  } catch (const ArgumentError& e) {
    r.fail(e.what());
  }
  Checkpoint out;
  out.step = r.u64();
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    if (len > r.remaining()) r.fail("truncated parameter name");
    std::string name = r.text(len);
    loaded.emplace_back(std::move(name), io::read_tensor(r));
  }
  if (!r.at_end()) r.fail("trailing bytes after checkpoint");
  const DType dtype = loaded.empty() ? DType::F32 : loaded.front().second.dtype();
  out.net = CheckpointAccess::make(a, dtype);
  auto& params = out.net->parameters();
  if (loaded.size() != params.size()) {
    r.fail("checkpoint has " + std::to_string(loaded.size()) + " parameters, architecture needs " +
           std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (loaded[i].first != params[i].name || loaded[i].second.shape() != params[i].value.shape() ||
        loaded[i].second.dtype() != dtype) {
      r.fail("parameter " + loaded[i].first + " does not match architecture slot " + params[i].name);
    }
    params[i].value = std::move(loaded[i].second);
    params[i].zero_grad();
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ResUNet& net, std::uint64_t step) {
  io::write_file(path, encode_checkpoint(net, step));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace pnpreg
