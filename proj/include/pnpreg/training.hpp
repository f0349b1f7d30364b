#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "pnpreg/adam.hpp"
#include "pnpreg/autodiff.hpp"
#include "pnpreg/network.hpp"
#include "pnpreg/tensor.hpp"

namespace pnpreg {

using Rng = std::mt19937_64;

struct TrainConfig {
  double lambda = 0.004;
  double sigma_max = 50.0 / 255.0;
  double alternation = 0.5;  // share of steps with sigma = sigma0
  std::size_t batch = 8;
  std::size_t patch = 32;
  double lr0 = 1e-4;
  std::size_t lr_period = 5000;
  double lr_floor = 1e-5;
  std::size_t max_steps = 20000;
  std::uint64_t seed = 0;
  bool freeze_denoiser = false;
  // Whether L_G also updates D (in both sampling branches).
  bool denoiser_follows_lg = true;
  std::size_t log_every = 10;
  // Where to write the current weights if training hits a non-finite value.
  std::filesystem::path dump_dir;

  void validate() const;
};

// max(lr0 * 2^-floor(step / period), floor)
double learning_rate(const TrainConfig& cfg, std::size_t step);

struct SigmaDraw {
  double sigma0 = 0;
  double sigma = 0;
  bool delta = false;
};

// With probability `alternation`: sigma = sigma0 ~ U[0, sigma_max], delta = 1.
// Otherwise sigma, sigma0 independent U[0, sigma_max] and delta = 0.
SigmaDraw sample_sigmas(const TrainConfig& cfg, Rng& rng);

// Procedural test image in [0, 1]: a smooth colour ramp, a few flat shapes
// with hard edges, and an oriented sinusoidal texture.
Tensor synthetic_image(std::size_t channels, std::size_t height, std::size_t width, Rng& rng);

class PatchDataset {
 public:
  // images: [1, C, H, W] tensors with H, W >= patch and a common C.
  PatchDataset(std::vector<Tensor> images, std::size_t patch, bool augment = true);
  static PatchDataset synthetic(std::size_t count, std::size_t size, std::size_t channels, std::size_t patch,
                                std::uint64_t seed, bool augment = true);
  // All *.png files in `dir`, in name order.
  static std::vector<Tensor> load_folder(const std::filesystem::path& dir);

  std::size_t size() const noexcept { return images_.size(); }
  std::size_t channels() const noexcept { return images_.front().dim(1); }
  std::size_t patch() const noexcept { return patch_; }
  const std::vector<Tensor>& images() const noexcept { return images_; }

  // [batch, C, patch, patch] fp64: random image, random offset, random
  // dihedral transform when augmenting.
  Tensor sample(std::size_t batch, Rng& rng) const;

 private:
  std::vector<Tensor> images_;
  std::size_t patch_;
  bool augment_;
};

// mean |d - x0|
Var loss_LD(Var denoised, Var x0);
Var loss_LD(Tape& tape, DenoiserNet& d, Var z, Var x0, double sigma0, bool trainable = true);
// mean (sigma^2 g - (z - d))^2 where g = G(d) and d = D_sigma(z).
Var residual_identity_loss(Var g_of_d, Var d, Var z, double sigma);
Var loss_LG(Tape& tape, ReGNet& g, DenoiserNet& d, Var z, double sigma, bool train_g = true, bool train_d = true);
Var loss_total(Var ld, Var lg, bool delta, double lambda);
double loss_total(double ld, double lg, bool delta, double lambda);

struct TrainLogRow {
  std::size_t step = 0;
  double ld = 0;
  double lg = 0;
  double l = 0;
  double lr = 0;
  double delta_rate = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::size_t steps = 0;
};

using LogSink = std::function<void(const TrainLogRow&)>;

// Trains D alone on L_D with sigma = sigma0 ~ U[0, sigma_max].
TrainResult pretrain_denoiser(DenoiserNet& d, const PatchDataset& data, const TrainConfig& cfg,
                              const LogSink& sink = {});
// Joint training of D and G on delta * L_D + lambda * L_G.
TrainResult joint_train(DenoiserNet& d, ReGNet& g, const PatchDataset& data, const TrainConfig& cfg,
                        const LogSink& sink = {});

// Fixed held-out batches with fixed sigma draws and unit noise, so losses are
// comparable across checkpoints.
struct HeldOutItem {
  Tensor x0;
  Tensor unit_noise;
  SigmaDraw draw;

  Tensor noisy() const { return axpy(x0, draw.sigma0, unit_noise); }
};

std::vector<HeldOutItem> make_heldout(const PatchDataset& data, const TrainConfig& cfg, std::size_t batches,
                                      std::uint64_t seed);

struct HeldOutMetrics {
  double ld = 0;  // mean L_D at sigma0 over all items
  double lg = 0;  // mean L_G at sigma (= residual-identity error)
  double l = 0;   // mean delta * L_D + lambda * L_G
};

HeldOutMetrics evaluate_heldout(const DenoiserNet& d, const ReGNet& g, const std::vector<HeldOutItem>& items,
                                double lambda);
// Mean squared denoising error of D at sigma0 and of the noisy input itself.
std::pair<double, double> denoising_mse(const DenoiserNet& d, const std::vector<HeldOutItem>& items);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

}  // namespace pnpreg
