#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pnpreg/autodiff.hpp"
#include "pnpreg/tensor.hpp"

namespace pnpreg {

struct Architecture {
  std::uint32_t in_channels = 3;
  std::uint32_t out_channels = 3;
  std::uint32_t scales = 2;
  std::uint32_t base_channels = 8;
  std::uint32_t blocks = 2;
  bool noise_map = false;        // last input channel is a constant noise-level map
  bool global_residual = false;  // output = image input - body(input)

  bool operator==(const Architecture&) const = default;
  void validate() const;
};

// Bias-free residual U-Net: head conv, per scale [residual blocks, stride-2
// conv], body blocks, then per scale [skip add, transposed conv, residual
// blocks], skip add, tail conv. Every layer is a 3x3 bias-free conv; the only
// nonlinearity is ReLU inside residual blocks. Inputs are replicate-padded
// to a multiple of 2^(scales-1) and the output is cropped back.
class ResUNet {
 public:
  ResUNet(Architecture arch, std::uint64_t seed, DType dtype = DType::F32);

  const Architecture& architecture() const noexcept { return arch_; }
  DType dtype() const noexcept { return dtype_; }

  // x: N, in_channels, H, W in the network dtype.
  Var forward(Tape& tape, Var x, bool trainable = true);
  Var forward_frozen(Tape& tape, Var x) const;
  // Untracked forward; converts x to the network dtype and the result back.
  Tensor infer(const Tensor& x) const;

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::vector<Parameter*> parameter_ptrs();
  std::size_t parameter_count() const;
  void zero_grad();
  ResUNet to(DType dtype) const;

 private:
  Var run(Tape& tape, Var x, const std::vector<Var>& w) const;
  void add_conv(const std::string& name, std::size_t co, std::size_t ci, double gain, std::uint64_t& stream);

  Architecture arch_;
  DType dtype_ = DType::F32;
  std::vector<Parameter> params_;
};

// D_sigma: image channels + one constant sigma map in, image channels out.
class DenoiserNet {
 public:
  static constexpr double kSigmaMax = 50.0 / 255.0;

  DenoiserNet(std::uint32_t channels, std::uint32_t scales, std::uint32_t base, std::uint32_t blocks,
              std::uint64_t seed, DType dtype = DType::F32, bool global_residual = true);
  explicit DenoiserNet(ResUNet net);

  std::uint32_t channels() const { return net_.architecture().out_channels; }
  ResUNet& net() noexcept { return net_; }
  const ResUNet& net() const noexcept { return net_; }

  // sigma outside [0, kSigmaMax] is clamped with a warning on stderr.
  Tensor denoise(const Tensor& z, double sigma) const;
  Var forward(Tape& tape, Var z, double sigma, bool trainable = true);
  Var forward_frozen(Tape& tape, Var z, double sigma) const;

 private:
  Tensor sigma_input(const Tensor& z, double sigma) const;
  ResUNet net_;
};

// G: maps an image to a same-shape vector field used in place of grad phi.
class ReGNet {
 public:
  ReGNet(std::uint32_t channels, std::uint32_t scales, std::uint32_t base, std::uint32_t blocks, std::uint64_t seed,
         DType dtype = DType::F32, bool global_residual = false);
  explicit ReGNet(ResUNet net);

  std::uint32_t channels() const { return net_.architecture().out_channels; }
  ResUNet& net() noexcept { return net_; }
  const ResUNet& net() const noexcept { return net_; }

  Tensor reg_grad(const Tensor& x) const { return net_.infer(x); }
  Var forward(Tape& tape, Var x, bool trainable = true) { return net_.forward(tape, x, trainable); }
  Var forward_frozen(Tape& tape, Var x) const { return net_.forward_frozen(tape, x); }

 private:
  ResUNet net_;
};

// PNPR1 checkpoint: "PNPR1", version u32, architecture (in, out, scales,
// base, blocks as u32; noise_map, global_residual as u8), step u64, param
// count u32, then per parameter: name length u32, name bytes, PTNS1 block.
struct Checkpoint {
  std::shared_ptr<ResUNet> net;
  std::uint64_t step = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const ResUNet& net, std::uint64_t step);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const ResUNet& net, std::uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pnpreg
