#include "pnpreg/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pnpreg/io.hpp"
#include "pnpreg/kernels.hpp"

namespace pnpreg {

void TrainConfig::validate() const {
  if (!(lambda > 0)) throw ArgumentError("lambda must be positive");
  if (!(sigma_max > 0)) throw ArgumentError("sigma_max must be positive");
  if (!(alternation >= 0 && alternation <= 1)) throw ArgumentError("alternation fraction must be in [0, 1]");
  if (batch == 0 || patch == 0) throw ArgumentError("batch and patch size must be positive");
  if (!(lr0 > 0) || !(lr_floor >= 0)) throw ArgumentError("learning rates must be positive");
  if (lr_period == 0) throw ArgumentError("lr halving period must be positive");
  if (log_every == 0) throw ArgumentError("log_every must be positive");
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  const std::size_t halvings = step / cfg.lr_period;
  const double lr = halvings >= 1000 ? 0.0 : std::ldexp(cfg.lr0, -static_cast<int>(halvings));
  return std::max(lr, cfg.lr_floor);
}

SigmaDraw sample_sigmas(const TrainConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SigmaDraw d;
  if (unit(rng) < cfg.alternation) {
    d.sigma0 = d.sigma = unit(rng) * cfg.sigma_max;
    d.delta = true;
  } else {
    d.sigma0 = unit(rng) * cfg.sigma_max;
    d.sigma = unit(rng) * cfg.sigma_max;
    d.delta = d.sigma0 == d.sigma;
  }
  return d;
}

Tensor synthetic_image(std::size_t channels, std::size_t height, std::size_t width, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor img({1, channels, height, width}, DType::F64);
  auto d = img.data<double>();
  const std::size_t plane = height * width;
  const double hh = static_cast<double>(height), ww = static_cast<double>(width);

  // Ramp: per channel base + gradient along a random direction.
  const double angle = u(rng) * 2 * std::numbers::pi;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t c = 0; c < channels; ++c) {
    const double base = 0.2 + 0.6 * u(rng);
    const double slope = (u(rng) - 0.5) * 0.6;
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        const double t = (ca * (j / ww - 0.5) + sa * (i / hh - 0.5));
        d[c * plane + i * width + j] = base + slope * t;
      }
    }
  }

  // Flat shapes: rectangles and discs.
  const int shapes = 2 + static_cast<int>(u(rng) * 4);
  for (int s = 0; s < shapes; ++s) {
    const bool disc = u(rng) < 0.5;
    const double cy = u(rng) * hh, cx = u(rng) * ww;
    const double ry = (0.08 + 0.25 * u(rng)) * hh, rx = (0.08 + 0.25 * u(rng)) * ww;
    std::vector<double> colour(channels);
    for (auto& v : colour) v = u(rng);
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        const double dy = (static_cast<double>(i) - cy) / ry, dx = (static_cast<double>(j) - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < channels; ++c) d[c * plane + i * width + j] = colour[c];
      }
    }
  }

  // Oriented texture on a random sub-region.
  const double freq = 0.15 + 0.6 * u(rng);
  const double theta = u(rng) * std::numbers::pi;
  const double amp = 0.05 + 0.1 * u(rng);
  const double y0 = u(rng) * hh * 0.5, x0 = u(rng) * ww * 0.5;
  const double y1 = y0 + hh * (0.3 + 0.5 * u(rng)), x1 = x0 + ww * (0.3 + 0.5 * u(rng));
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      if (i < y0 || i > y1 || j < x0 || j > x1) continue;
      const double v = amp * std::sin(freq * (std::cos(theta) * j + std::sin(theta) * i));
      for (std::size_t c = 0; c < channels; ++c) d[c * plane + i * width + j] += v;
    }
  }
  for (auto& v : d) v = std::clamp(v, 0.0, 1.0);
  return img;
}

PatchDataset::PatchDataset(std::vector<Tensor> images, std::size_t patch, bool augment)
    : images_(std::move(images)), patch_(patch), augment_(augment) {
  if (images_.empty()) throw ArgumentError("patch dataset is empty");
  if (patch_ == 0) throw ArgumentError("patch size must be positive");
  const std::size_t c = images_.front().rank() == 4 ? images_.front().dim(1) : 0;
  for (auto& img : images_) {
    if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != c) {
      throw DimensionError("dataset images must be [1, C, H, W] with a common C, got " + shape_str(img.shape()));
    }
    if (img.dim(2) < patch_ || img.dim(3) < patch_) {
      throw DimensionError("dataset image " + shape_str(img.shape()) + " smaller than patch " + std::to_string(patch_));
    }
    img = img.to(DType::F64);
  }
}

PatchDataset PatchDataset::synthetic(std::size_t count, std::size_t size, std::size_t channels, std::size_t patch,
                                     std::uint64_t seed, bool augment) {
  Rng rng(seed);
  std::vector<Tensor> images;
  images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) images.push_back(synthetic_image(channels, size, size, rng));
  return PatchDataset(std::move(images), patch, augment);
}

std::vector<Tensor> PatchDataset::load_folder(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ArgumentError("image folder not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor> out;
  for (const auto& f : files) out.push_back(io::load_png(f));
  return out;
}

Tensor PatchDataset::sample(std::size_t batch, Rng& rng) const {
  const std::size_t c = channels();
  const std::size_t p = patch_;
  Tensor out({batch, c, p, p}, DType::F64);
  auto od = out.data<double>();
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor& img = images_[std::uniform_int_distribution<std::size_t>(0, images_.size() - 1)(rng)];
    const std::size_t h = img.dim(2), w = img.dim(3);
    const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, h - p)(rng);
    const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, w - p)(rng);
    Tensor crop({1, c, p, p}, DType::F64);
    auto cd = crop.data<double>();
    const auto id = img.data<double>();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < p; ++i) {
        std::copy_n(id.begin() + static_cast<std::ptrdiff_t>(ch * h * w + (oy + i) * w + ox), p,
                    cd.begin() + static_cast<std::ptrdiff_t>(ch * p * p + i * p));
      }
    }
    if (augment_) crop = kernels::dihedral(crop, std::uniform_int_distribution<int>(0, 7)(rng));
    std::copy(crop.data<double>().begin(), crop.data<double>().end(),
              od.begin() + static_cast<std::ptrdiff_t>(b * c * p * p));
  }
  return out;
}

Var loss_LD(Var denoised, Var x0) { return ad::mean(ad::abs(ad::sub(denoised, x0))); }

Var loss_LD(Tape& tape, DenoiserNet& d, Var z, Var x0, double sigma0, bool trainable) {
  return loss_LD(d.forward(tape, z, sigma0, trainable), x0);
}

Var residual_identity_loss(Var g_of_d, Var d, Var z, double sigma) {
  return ad::mean(ad::square(ad::sub(ad::scale(g_of_d, sigma * sigma), ad::sub(z, d))));
}

Var loss_LG(Tape& tape, ReGNet& g, DenoiserNet& d, Var z, double sigma, bool train_g, bool train_d) {
  Var dz = d.forward(tape, z, sigma, train_d);
  return residual_identity_loss(g.forward(tape, dz, train_g), dz, z, sigma);
}

Var loss_total(Var ld, Var lg, bool delta, double lambda) {
  Var weighted = ad::scale(lg, lambda);
  return delta ? ad::add(ld, weighted) : weighted;
}

double loss_total(double ld, double lg, bool delta, double lambda) { return (delta ? ld : 0.0) + lambda * lg; }

namespace {

struct Draw {
  Tensor x0;
  Tensor z;
  SigmaDraw s;
};

Draw draw_batch(const PatchDataset& data, const TrainConfig& cfg, Rng& rng, bool alternate) {
  Draw out;
  out.x0 = data.sample(cfg.batch, rng);
  if (alternate) {
    out.s = sample_sigmas(cfg, rng);
  } else {
    out.s.sigma0 = out.s.sigma = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * cfg.sigma_max;
    out.s.delta = true;
  }
  out.z = out.x0;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto zd = out.z.data<double>();
  for (auto& v : zd) v += out.s.sigma0 * normal(rng);
  return out;
}

void dump_and_throw(const TrainConfig& cfg, const DenoiserNet* d, const ReGNet* g, std::size_t step,
                    const std::string& what) {
  std::string where;
  if (!cfg.dump_dir.empty()) {
    if (d) save_checkpoint(cfg.dump_dir / "denoiser_nan.pnpr", d->net(), step);
    if (g) save_checkpoint(cfg.dump_dir / "reg_nan.pnpr", g->net(), step);
    where = " (weights saved to " + cfg.dump_dir.string() + ")";
  }
  throw NumericError(what + " at step " + std::to_string(step) + where);
}

}  // namespace

TrainResult pretrain_denoiser(DenoiserNet& d, const PatchDataset& data, const TrainConfig& cfg, const LogSink& sink) {
  cfg.validate();
  if (data.channels() != d.channels()) throw DimensionError("dataset channels do not match the denoiser");
  Rng rng(cfg.seed);
  AdamState adam;
  auto params = d.net().parameter_ptrs();
  TrainResult result;
  const DType dt = d.net().dtype();
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const Draw b = draw_batch(data, cfg, rng, false);
    d.net().zero_grad();
    Tape tape;
    Var ld = loss_LD(tape, d, tape.constant(b.z.to(dt)), tape.constant(b.x0.to(dt)), b.s.sigma0);
    const double ldv = ld.value().item();
    if (!std::isfinite(ldv)) dump_and_throw(cfg, &d, nullptr, step, "non-finite denoising loss");
    tape.backward(ld);
    adam.options.lr = learning_rate(cfg, step);
    try {
      adam_step(params, adam);
    } catch (const NumericError& e) {
      dump_and_throw(cfg, &d, nullptr, step, e.what());
    }
    result.steps = step + 1;
    if (step % cfg.log_every == 0 || step + 1 == cfg.max_steps) {
      TrainLogRow row{step, ldv, 0.0, ldv, adam.options.lr, 1.0};
      result.log.push_back(row);
      if (sink) sink(row);
    }
  }
  return result;
}

TrainResult joint_train(DenoiserNet& d, ReGNet& g, const PatchDataset& data, const TrainConfig& cfg,
                        const LogSink& sink) {
  cfg.validate();
  if (data.channels() != d.channels() || data.channels() != g.channels()) {
    throw DimensionError("dataset channels do not match the networks");
  }
  if (d.net().dtype() != g.net().dtype()) throw ArgumentError("D and G must share a dtype");
  Rng rng(cfg.seed);
  AdamState adam_d, adam_g;
  auto params_d = d.net().parameter_ptrs();
  auto params_g = g.net().parameter_ptrs();
  const bool train_d = !cfg.freeze_denoiser;
  const DType dt = d.net().dtype();
  TrainResult result;
  std::size_t deltas = 0;
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const Draw b = draw_batch(data, cfg, rng, true);
    d.net().zero_grad();
    g.net().zero_grad();
    Tape tape;
    Var z = tape.constant(b.z.to(dt));
    Var x0 = tape.constant(b.x0.to(dt));
    // With delta = 1 both losses share the single D_sigma0(z) pass.
    Var dz = d.forward(tape, z, b.s.sigma, train_d);
    Var dz_g = cfg.denoiser_follows_lg ? dz : ad::detach(dz);
    Var lg = residual_identity_loss(g.forward(tape, dz_g), dz_g, z, b.s.sigma);
    Var ld = b.s.delta ? loss_LD(dz, x0) : loss_LD(d.forward_frozen(tape, z, b.s.sigma0), x0);
    Var l = loss_total(ld, lg, b.s.delta, cfg.lambda);
    const double lv = l.value().item();
    if (!std::isfinite(lv)) dump_and_throw(cfg, &d, &g, step, "non-finite global loss");
    tape.backward(l);
    const double lr = learning_rate(cfg, step);
    adam_d.options.lr = lr;
    adam_g.options.lr = lr;
    try {
      adam_step(params_g, adam_g);
      if (train_d) adam_step(params_d, adam_d);
    } catch (const NumericError& e) {
      dump_and_throw(cfg, &d, &g, step, e.what());
    }
    deltas += b.s.delta ? 1 : 0;
    result.steps = step + 1;
    if (step % cfg.log_every == 0 || step + 1 == cfg.max_steps) {
      TrainLogRow row{step,
                      ld.value().item(),
                      lg.value().item(),
                      lv,
                      lr,
                      static_cast<double>(deltas) / static_cast<double>(step + 1)};
      result.log.push_back(row);
      if (sink) sink(row);
    }
  }
  return result;
}

std::vector<HeldOutItem> make_heldout(const PatchDataset& data, const TrainConfig& cfg, std::size_t batches,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<HeldOutItem> items;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < batches; ++i) {
    HeldOutItem it;
    it.x0 = data.sample(cfg.batch, rng);
    it.draw = sample_sigmas(cfg, rng);
    it.unit_noise = it.x0.zeros_like();
    for (auto& v : it.unit_noise.data<double>()) v = normal(rng);
    items.push_back(std::move(it));
  }
  return items;
}

HeldOutMetrics evaluate_heldout(const DenoiserNet& d, const ReGNet& g, const std::vector<HeldOutItem>& items,
                                double lambda) {
  HeldOutMetrics m;
  if (items.empty()) return m;
  for (const auto& it : items) {
    const Tensor z = it.noisy();
    const Tensor d0 = d.denoise(z, it.draw.sigma0);
    double ld_abs = 0;
    const Tensor diff = sub(d0, it.x0);
    for (std::size_t k = 0; k < diff.numel(); ++k) ld_abs += std::abs(diff.item(k));
    ld_abs /= static_cast<double>(diff.numel());
    const Tensor ds = it.draw.delta ? d0 : d.denoise(z, it.draw.sigma);
    const double s2 = it.draw.sigma * it.draw.sigma;
    const Tensor r = sub(scale(g.reg_grad(ds), s2), sub(z, ds));
    const double lg = squared_norm(r) / static_cast<double>(r.numel());
    m.ld += ld_abs;
    m.lg += lg;
    m.l += loss_total(ld_abs, lg, it.draw.delta, lambda);
  }
  const auto n = static_cast<double>(items.size());
  m.ld /= n;
  m.lg /= n;
  m.l /= n;
  return m;
}

std::pair<double, double> denoising_mse(const DenoiserNet& d, const std::vector<HeldOutItem>& items) {
  double den = 0, noisy = 0;
  for (const auto& it : items) {
    const Tensor z = it.noisy();
    den += mean_squared_difference(d.denoise(z, it.draw.sigma0), it.x0);
    noisy += mean_squared_difference(z, it.x0);
  }
  const auto n = static_cast<double>(std::max<std::size_t>(items.size(), 1));
  return {den / n, noisy / n};
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  std::string out = "step,L_D,L_G,L,lr,delta_rate\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.step, r.ld, r.lg, r.l, r.lr, r.delta_rate);
  }
  io::write_text(path, out);
}

}  // namespace pnpreg
