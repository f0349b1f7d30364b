#include "pnpreg/harness.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "pnpreg/io.hpp"
#include "pnpreg/metrics.hpp"

namespace pnpreg {

namespace {

class ExprParser {
 public:
  explicit ExprParser(const std::string& s) : s_(s) {}

  double parse() {
    const double v = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected character");
    return v;
  }

 private:
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ArgumentError("bad number \"" + s_ + "\": " + what + " at position " + std::to_string(pos_));
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  double expr() {
    double v = term();
    for (;;) {
      if (eat('+')) {
        v += term();
      } else if (eat('-')) {
        v -= term();
      } else {
        return v;
      }
    }
  }
  double term() {
    double v = factor();
    for (;;) {
      if (eat('*')) {
        v *= factor();
      } else if (eat('/')) {
        const double d = factor();
        if (d == 0) fail("division by zero");
        v /= d;
      } else {
        return v;
      }
    }
  }
  double factor() {
    skip();
    if (eat('-')) return -factor();
    if (eat('+')) return factor();
    if (eat('(')) {
      const double v = expr();
      if (!eat(')')) fail("missing ')'");
      return v;
    }
    if (s_.compare(pos_, 4, "sqrt") == 0) {
      pos_ += 4;
      if (!eat('(')) fail("expected '(' after sqrt");
      const double v = expr();
      if (!eat(')')) fail("missing ')'");
      if (v < 0) fail("sqrt of a negative value");
      return std::sqrt(v);
    }
    const char* begin = s_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) fail("expected a number");
    pos_ += static_cast<std::size_t>(end - begin);
    return v;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "task.kind", "task.kernel", "task.sigma_b", "task.kernel_size", "task.kernel_file", "task.factor",
      "task.keep_rate", "task.sigma_n",
      "algorithm.name", "algorithm.mu", "algorithm.sigma", "algorithm.iterations", "algorithm.update",
      "algorithm.self_ensemble", "algorithm.early_stop", "algorithm.w", "algorithm.sigma_f", "algorithm.s0",
      "algorithm.sN", "algorithm.trace",
      "prior.kind", "prior.checkpoint",
      "data.images", "data.synthetic_count", "data.synthetic_size", "data.channels", "data.crop",
      "run.seed", "run.out", "run.jobs", "run.fp64",
      "net.channels", "net.scales", "net.base", "net.blocks", "net.denoiser", "net.reg",
      "train.steps", "train.lr", "train.lr_period", "train.lr_floor", "train.batch", "train.patch", "train.lambda",
      "train.alternation", "train.sigma_max", "train.freeze_denoiser", "train.denoiser_follows_lg",
      "train.log_every", "train.images", "train.dataset_count", "train.dataset_size", "train.skip_pretrained",
      "eval.batches", "eval.seed",
      "study.kind", "study.joint_denoiser", "study.joint_reg", "study.frozen_denoiser", "study.frozen_reg",
      "study.original_denoiser", "study.updated_denoiser",
      "unrolled.steps", "unrolled.unroll", "unrolled.lr", "unrolled.batch", "unrolled.patch"};
  return keys;
}

}  // namespace

double parse_number(const std::string& text) { return ExprParser(text).parse(); }

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ArgumentError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ArgumentError("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string Config::require(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("missing config key " + key);
  return it->second;
}

double Config::number(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_number(it->second);
  } catch (const ArgumentError& e) {
    throw ArgumentError(key + ": " + e.what());
  }
}

std::size_t Config::count(const std::string& key, std::size_t fallback) const {
  const double v = number(key, static_cast<double>(fallback));
  if (v < 0 || v != std::floor(v)) throw ArgumentError(key + " must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

bool Config::flag(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ArgumentError(key + " must be a boolean, got \"" + v + "\"");
}

void Config::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ArgumentError("override must be key=value, got \"" + assignment + "\"");
  const std::string key = trim(assignment.substr(0, eq));
  if (!known_keys().count(key)) throw ArgumentError("unknown config key " + key);
  values_[key] = trim(assignment.substr(eq + 1));
}

void Config::validate_keys() const {
  for (const auto& [k, v] : values_) {
    if (!known_keys().count(k)) throw ArgumentError("unknown config key " + k);
  }
}

std::string Config::echo() const {
  std::string out, section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string s = dot == std::string::npos ? "" : k.substr(0, dot);
    if (s != section || out.empty()) {
      if (!out.empty()) out += "\n";
      if (!s.empty()) out += "[" + s + "]\n";
      section = s;
    }
    out += (dot == std::string::npos ? k : k.substr(dot + 1)) + " = " + v + "\n";
  }
  return out;
}

ExperimentConfig ExperimentConfig::from(const Config& c) {
  c.validate_keys();
  ExperimentConfig e;
  e.task.kind = c.get("task.kind", "deblur");
  e.task.kernel = c.get("task.kernel", e.task.kind == "sr" ? "bicubic" : "gaussian");
  e.task.sigma_b = c.number("task.sigma_b", 1.6);
  e.task.kernel_size = static_cast<int>(c.count("task.kernel_size", 25));
  e.task.kernel_file = c.get("task.kernel_file", "");
  e.task.factor = static_cast<int>(c.count("task.factor", 2));
  e.task.keep_rate = c.number("task.keep_rate", 0.2);
  e.task.sigma_n = c.number("task.sigma_n", 0.0);

  const std::string alg = c.get("algorithm.name", "pnp-gd");
  if (alg == "pnp-gd") {
    e.algorithm = Algorithm::PnPGD;
  } else if (alg == "red-gd") {
    e.algorithm = Algorithm::RED;
  } else if (alg == "admm") {
    e.algorithm = Algorithm::ADMM;
  } else if (alg == "closed-form") {
    e.algorithm = Algorithm::ClosedForm;
  } else {
    throw ArgumentError("unknown algorithm " + alg);
  }
  const std::string update = c.get("algorithm.update", "adam");
  if (update != "adam" && update != "plain") throw ArgumentError("algorithm.update must be adam or plain");
  const UpdateRule rule = update == "adam" ? UpdateRule::Adam : UpdateRule::Plain;
  const bool ensemble = c.flag("algorithm.self_ensemble", false);
  const bool trace = c.flag("algorithm.trace", true);
  const double early = c.number("algorithm.early_stop", 0.0);

  e.gd.mu = c.number("algorithm.mu", 0.008);
  e.gd.sigma = c.number("algorithm.sigma", 1.2 / 255.0);
  e.gd.iterations = c.count("algorithm.iterations", 1500);
  e.gd.rule = rule;
  e.gd.self_ensemble = ensemble;
  e.gd.trace = trace;
  e.gd.early_stop_mse = early;

  e.red.w = c.number("algorithm.w", 0.005);
  e.red.sigma_f = c.number("algorithm.sigma_f", 7.0 / 255.0);
  e.red.mu = c.number("algorithm.mu", 0.08);
  e.red.iterations = c.count("algorithm.iterations", 1500);
  e.red.rule = rule;
  e.red.self_ensemble = ensemble;
  e.red.trace = trace;
  e.red.early_stop_mse = early;

  e.admm_sigma_explicit = c.has("algorithm.sigma") && e.algorithm == Algorithm::ADMM;
  e.admm.sigma = e.admm_sigma_explicit ? c.number("algorithm.sigma", 0) : ADMMConfig::effective_sigma(e.task.sigma_n);
  e.admm.s0 = c.number("algorithm.s0", 50.0 / 255.0);
  e.admm.sN = c.number("algorithm.sN", 0.1 / 255.0);
  e.admm.iterations = c.count("algorithm.iterations", 25);
  e.admm.self_ensemble = ensemble;
  e.admm.trace = trace;
  e.admm.early_stop_mse = early;

  const std::string prior = c.get("prior.kind", e.algorithm == Algorithm::PnPGD ? "reg" : "denoiser");
  if (prior == "reg") {
    e.prior = PriorKind::ReG;
  } else if (prior == "denoiser") {
    e.prior = PriorKind::Denoiser;
  } else if (prior == "tikhonov") {
    e.prior = PriorKind::Tikhonov;
  } else if (prior == "laplacian") {
    e.prior = PriorKind::Laplacian;
  } else {
    throw ArgumentError("unknown prior " + prior);
  }
  e.checkpoint = c.get("prior.checkpoint", "");
  e.images = c.get("data.images", "");
  e.synthetic_count = c.count("data.synthetic_count", 4);
  e.synthetic_size = c.count("data.synthetic_size", 48);
  e.channels = c.count("data.channels", 3);
  e.crop = c.count("data.crop", 0);
  e.seed = static_cast<std::uint64_t>(c.number("run.seed", 0));
  e.out = c.get("run.out", "");
  e.jobs = c.count("run.jobs", 1);
  e.fp64 = c.flag("run.fp64", false);
  e.echo = c.echo();
  return e;
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> kinds = {"deblur", "sr", "inpaint", "identity"};
  if (!kinds.count(task.kind)) throw ArgumentError("unknown task " + task.kind);
  if (task.sigma_n < 0) throw ArgumentError("task.sigma_n must be non-negative");
  if (task.kind == "deblur" || task.kind == "sr") {
    if (task.kernel != "gaussian" && task.kernel != "bicubic" && task.kernel != "file") {
      throw ArgumentError("unknown kernel " + task.kernel);
    }
    if (task.kind == "deblur" && task.kernel == "bicubic") throw ArgumentError("deblurring takes a gaussian or file kernel");
    if (task.kernel == "file" && !std::filesystem::exists(task.kernel_file)) {
      throw ArgumentError("kernel file not found: " + task.kernel_file.string());
    }
  }
  if (task.kind == "sr" && task.factor != 2 && task.factor != 3) throw ArgumentError("task.factor must be 2 or 3");
  if (task.kind == "inpaint" && !(task.keep_rate > 0 && task.keep_rate <= 1)) {
    throw ArgumentError("task.keep_rate must be in (0, 1]");
  }
  const bool needs_grad = algorithm == Algorithm::PnPGD;
  const bool needs_prox = algorithm == Algorithm::RED || algorithm == Algorithm::ADMM;
  if (needs_grad && prior == PriorKind::Denoiser) throw ArgumentError("pnp-gd needs a gradient prior (reg, tikhonov, laplacian)");
  if (needs_prox && prior == PriorKind::ReG) throw ArgumentError("red-gd/admm need a denoising prior (denoiser, tikhonov, laplacian)");
  if (algorithm == Algorithm::ClosedForm && (prior == PriorKind::ReG || prior == PriorKind::Denoiser)) {
    throw ArgumentError("closed-form needs a quadratic prior (tikhonov, laplacian)");
  }
  if (prior == PriorKind::ReG || prior == PriorKind::Denoiser) {
    if (checkpoint.empty()) throw ArgumentError("prior.checkpoint is required for learned priors");
    if (!std::filesystem::exists(checkpoint)) throw ArgumentError("checkpoint not found: " + checkpoint.string());
  }
  if (!images.empty() && !std::filesystem::is_directory(images)) {
    throw ArgumentError("image folder not found: " + images.string());
  }
  if (channels != 1 && channels != 3) throw ArgumentError("data.channels must be 1 or 3");
  if (jobs == 0) throw ArgumentError("run.jobs must be positive");
  switch (algorithm) {
    case Algorithm::PnPGD:
      gd.validate();
      break;
    case Algorithm::RED:
      red.validate();
      break;
    case Algorithm::ADMM:
      admm.validate();
      break;
    case Algorithm::ClosedForm:
      break;
  }
}

std::string Report::to_csv() const {
  std::string out = "image,psnr_init,psnr_restored,iterations,status\n";
  for (const auto& r : images) {
    out += fmt::format("{},{:.6f},{:.6f},{},{}\n", r.name, r.psnr_input, r.psnr_output, r.iterations,
                       r.error.empty() ? "ok" : "error: " + r.error);
  }
  out += fmt::format("mean,{:.6f},{:.6f},,\n", mean_psnr_input, mean_psnr);
  return out;
}

bool Report::ok() const {
  return std::all_of(images.begin(), images.end(), [](const ImageResult& r) { return r.error.empty(); });
}

std::vector<NamedImage> experiment_images(const ExperimentConfig& cfg) {
  std::vector<NamedImage> out;
  if (!cfg.images.empty()) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg.images)) {
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ArgumentError("no PNG images in " + cfg.images.string());
    for (const auto& f : files) out.push_back({f.stem().string(), io::load_png(f)});
  } else {
    Rng rng(cfg.seed ^ 0x5eedULL);
    for (std::size_t i = 0; i < cfg.synthetic_count; ++i) {
      out.push_back({fmt::format("synthetic_{:02}", i), synthetic_image(3, cfg.synthetic_size, cfg.synthetic_size, rng)});
    }
  }
  for (auto& im : out) {
    Tensor& x = im.image;
    if (cfg.crop > 0 && (x.dim(2) > cfg.crop || x.dim(3) > cfg.crop)) {
      const std::size_t h = std::min(cfg.crop, x.dim(2)), w = std::min(cfg.crop, x.dim(3));
      const std::size_t oy = (x.dim(2) - h) / 2, ox = (x.dim(3) - w) / 2;
      Tensor c({1, x.dim(1), h, w}, DType::F64);
      for (std::size_t ch = 0; ch < x.dim(1); ++ch) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            c.set((ch * h + i) * w + j, x.item((ch * x.dim(2) + oy + i) * x.dim(3) + ox + j));
          }
        }
      }
      x = std::move(c);
    }
    if (cfg.channels == 1 && x.dim(1) == 3) {
      // ITU-R BT.601 luma
      const std::size_t plane = x.dim(2) * x.dim(3);
      Tensor g({1, 1, x.dim(2), x.dim(3)}, DType::F64);
      for (std::size_t i = 0; i < plane; ++i) {
        g.set(i, 0.299 * x.item(i) + 0.587 * x.item(plane + i) + 0.114 * x.item(2 * plane + i));
      }
      x = std::move(g);
    }
  }
  return out;
}

OperatorPtr experiment_operator(const TaskConfig& task, std::size_t channels, std::size_t height, std::size_t width,
                                std::uint64_t seed) {
  if (task.kind == "identity") return build_operator(IdentitySpec{}, channels, height, width);
  if (task.kind == "inpaint") return build_operator(make_mask_spec(height, width, task.keep_rate, seed), channels, height, width);
  Tensor kernel;
  if (task.kernel == "file") {
    kernel = io::load_tensor(task.kernel_file);
    const double s = sum(kernel);
    if (kernel.rank() != 2 || std::abs(s - 1.0) > 1e-6) {
      throw ArgumentError("kernel file must hold a 2-D kernel summing to 1");
    }
  }
  if (task.kind == "deblur") {
    if (task.kernel != "file") kernel = make_gaussian_kernel(task.kernel_size, task.sigma_b).kernel;
    return build_operator(BlurSpec{kernel}, channels, height, width);
  }
  SRSpec spec = make_sr_spec(task.kernel == "gaussian" ? SRKernel::Gaussian : SRKernel::Bicubic, task.factor);
  if (task.kernel == "file") spec.kernel = kernel;
  return build_operator(spec, channels, height, width);
}

namespace {

struct LoadedPrior {
  std::shared_ptr<Prior> prior;
};

LoadedPrior load_prior(const ExperimentConfig& cfg) {
  LoadedPrior p;
  switch (cfg.prior) {
    case PriorKind::Tikhonov:
      p.prior = std::make_shared<TikhonovPrior>();
      break;
    case PriorKind::Laplacian:
      p.prior = std::make_shared<LaplacianPrior>();
      break;
    case PriorKind::ReG: {
      Checkpoint ck = load_checkpoint(cfg.checkpoint);
      ResUNet net = cfg.fp64 ? ck.net->to(DType::F64) : *ck.net;
      p.prior = std::make_shared<LearnedGradientPrior>(std::make_shared<const ReGNet>(std::move(net)));
      break;
    }
    case PriorKind::Denoiser: {
      Checkpoint ck = load_checkpoint(cfg.checkpoint);
      ResUNet net = cfg.fp64 ? ck.net->to(DType::F64) : *ck.net;
      p.prior = std::make_shared<DenoiserPrior>(std::make_shared<const DenoiserNet>(std::move(net)));
      break;
    }
  }
  return p;
}

// SR needs extents divisible by the factor: crop bottom/right.
Tensor fit_to_task(const Tensor& x, const TaskConfig& task) {
  if (task.kind != "sr") return x;
  const auto t = static_cast<std::size_t>(task.factor);
  const std::size_t h = x.dim(2) / t * t, w = x.dim(3) / t * t;
  if (h == x.dim(2) && w == x.dim(3)) return x;
  return kernels::crop(x, h, w);
}

SolveResult run_solver(const ExperimentConfig& cfg, const Prior& prior, const LinearOperator& op, const Tensor& y,
                       const Tensor& x0, const Tensor& gt) {
  switch (cfg.algorithm) {
    case Algorithm::PnPGD:
      return pnp_gd(y, op, prior, cfg.gd, x0, &gt);
    case Algorithm::RED:
      return red_gd(y, op, prior, cfg.red, x0, &gt);
    case Algorithm::ADMM:
      return pnp_admm(y, op, prior, cfg.admm, x0, &gt);
    case Algorithm::ClosedForm: {
      SolveResult r;
      r.x = map_closed_form(op, y, prior, cfg.gd.sigma);
      return r;
    }
  }
  throw ArgumentError("unknown algorithm");
}

void write_chart_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                     const std::vector<std::vector<double>>& cols) {
  std::string out = "iter";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  std::size_t rows = 0;
  for (const auto& c : cols) rows = std::max(rows, c.size());
  for (std::size_t i = 0; i < rows; ++i) {
    out += std::to_string(i + 1);
    for (const auto& c : cols) out += i < c.size() ? fmt::format(",{}", c[i]) : std::string(",");
    out += "\n";
  }
  io::write_text(path, out);
}

}  // namespace

Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const LoadedPrior lp = load_prior(cfg);
  const std::vector<NamedImage> images = experiment_images(cfg);
  Report report;
  report.config_echo = cfg.echo;
  report.images.resize(images.size());

  const auto run_one = [&](std::size_t i) {
    ImageResult& r = report.images[i];
    r.name = images[i].name;
    try {
      const Tensor gt = fit_to_task(images[i].image, cfg.task);
      const std::uint64_t seed = cfg.seed + i;
      const OperatorPtr op = experiment_operator(cfg.task, gt.dim(1), gt.dim(2), gt.dim(3), seed);
      const Tensor y = add_awgn(op->apply(gt), cfg.task.sigma_n, seed);
      const Tensor x0 = initial_estimate(*op, y);
      r.psnr_input = psnr(x0, gt);
      const SolveResult res = run_solver(cfg, *lp.prior, *op, y, x0, gt);
      r.psnr_output = psnr(res.x, gt);
      r.iterations = res.iterations;
      if (!cfg.out.empty()) {
        r.trace_path = cfg.out / ("trace_" + r.name + ".csv");
        io::write_text(r.trace_path, res.trace.to_csv());
        io::save_png(cfg.out / (r.name + "_restored.png"), res.x);
        io::save_png(cfg.out / (r.name + "_init.png"), x0);
      }
    } catch (const SolverDiverged& e) {
      r.error = e.what();
      if (!cfg.out.empty()) {
        r.trace_path = cfg.out / ("trace_" + r.name + ".csv");
        io::write_text(r.trace_path, e.trace().to_csv());
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  };

  if (cfg.jobs <= 1 || images.size() <= 1) {
    for (std::size_t i = 0; i < images.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(cfg.jobs, images.size()); ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < images.size(); i = next++) run_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::size_t ok = 0;
  for (const auto& r : report.images) {
    if (!r.error.empty()) continue;
    report.mean_psnr += r.psnr_output;
    report.mean_psnr_input += r.psnr_input;
    ++ok;
  }
  if (ok > 0) {
    report.mean_psnr /= static_cast<double>(ok);
    report.mean_psnr_input /= static_cast<double>(ok);
  }
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!cfg.out.empty()) {
    io::write_text(cfg.out / "report.csv", report.to_csv());
    io::write_text(cfg.out / "config.txt", report.config_echo);
    io::write_text(cfg.out / "timing.txt", fmt::format("runtime_seconds = {:.3f}\n", report.runtime_seconds));
  }
  return report;
}

AblationReport ablation_fixed_vs_joint(const std::vector<NamedImage>& images, const std::vector<HeldOutItem>& heldout,
                                       const TrainedPair& joint, const TrainedPair& frozen,
                                       const ExperimentConfig& cfg) {
  if (!joint.d || !joint.g || !frozen.d || !frozen.g) throw ArgumentError("ablation needs both trained (D, G) pairs");
  AblationReport r;
  GDConfig gd = cfg.gd;
  gd.trace = true;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor gt = fit_to_task(images[i].image, cfg.task);
    const std::uint64_t seed = cfg.seed + i;
    const OperatorPtr op = experiment_operator(cfg.task, gt.dim(1), gt.dim(2), gt.dim(3), seed);
    const Tensor y = add_awgn(op->apply(gt), cfg.task.sigma_n, seed);
    const Tensor x0 = initial_estimate(*op, y);
    const SolveResult a = pnp_gd(y, *op, *joint.g, gd, x0, &gt);
    const SolveResult b = pnp_gd(y, *op, *frozen.g, gd, x0, &gt);
    r.names.push_back(images[i].name);
    r.psnr_joint.push_back(psnr(a.x, gt));
    r.psnr_frozen.push_back(psnr(b.x, gt));
    std::vector<double> ca, cb;
    for (const auto& row : a.trace.rows) ca.push_back(row.psnr);
    for (const auto& row : b.trace.rows) cb.push_back(row.psnr);
    r.curve_joint.push_back(std::move(ca));
    r.curve_frozen.push_back(std::move(cb));
  }
  constexpr double kLambda = 0.004;
  r.residual_joint = evaluate_heldout(*joint.d, *joint.g, heldout, kLambda).lg;
  r.residual_frozen = evaluate_heldout(*frozen.d, *frozen.g, heldout, kLambda).lg;
  return r;
}

void write_ablation(const std::filesystem::path& dir, const AblationReport& r) {
  std::string out = "image,psnr_joint,psnr_frozen,delta\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", r.names[i], r.psnr_joint[i], r.psnr_frozen[i],
                       r.psnr_joint[i] - r.psnr_frozen[i]);
  }
  out += fmt::format("residual_identity,{},{},{}\n", r.residual_joint, r.residual_frozen,
                     r.residual_joint - r.residual_frozen);
  io::write_text(dir / "ablation.csv", out);
  std::vector<std::string> names;
  std::vector<std::vector<double>> cols;
  std::vector<Series> series;
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    names.push_back(r.names[i] + "_joint");
    names.push_back(r.names[i] + "_frozen");
    cols.push_back(r.curve_joint[i]);
    cols.push_back(r.curve_frozen[i]);
  }
  write_chart_csv(dir / "ablation_curves.csv", names, cols);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    Series s{names[i], {}, cols[i]};
    for (std::size_t k = 0; k < cols[i].size(); ++k) s.x.push_back(static_cast<double>(k + 1));
    series.push_back(std::move(s));
  }
  io::write_text(dir / "ablation_curves.svg", svg_line_chart("PnP-GD PSNR, joint vs fixed D", "iteration", "PSNR [dB]", series));
}

StabilityTraces admm_stability_study(const Prior& d_original, const Prior& d_updated, const NamedImage& image,
                                     const ExperimentConfig& cfg) {
  const Tensor gt = fit_to_task(image.image, cfg.task);
  const OperatorPtr op = experiment_operator(cfg.task, gt.dim(1), gt.dim(2), gt.dim(3), cfg.seed);
  const Tensor y = add_awgn(op->apply(gt), cfg.task.sigma_n, cfg.seed);
  const Tensor x0 = initial_estimate(*op, y);
  ADMMConfig admm = cfg.admm;
  admm.trace = true;
  admm.early_stop_mse = 0;
  StabilityTraces t;
  t.original = pnp_admm(y, *op, d_original, admm, x0, &gt).trace;
  t.updated = pnp_admm(y, *op, d_updated, admm, x0, &gt).trace;
  return t;
}

void write_stability(const std::filesystem::path& dir, const StabilityTraces& t) {
  std::vector<double> po, pu, mo, mu;
  for (const auto& r : t.original.rows) {
    po.push_back(r.psnr);
    mo.push_back(r.iterate_mse);
  }
  for (const auto& r : t.updated.rows) {
    pu.push_back(r.psnr);
    mu.push_back(r.iterate_mse);
  }
  write_chart_csv(dir / "admm_stability.csv", {"psnr_original", "psnr_updated", "iterate_mse_original", "iterate_mse_updated"},
                  {po, pu, mo, mu});
  const auto series = [](const std::string& name, const std::vector<double>& ys) {
    Series s{name, {}, ys};
    for (std::size_t k = 0; k < ys.size(); ++k) s.x.push_back(static_cast<double>(k + 1));
    return s;
  };
  io::write_text(dir / "admm_psnr.svg",
                 svg_line_chart("PnP-ADMM PSNR", "iteration", "PSNR [dB]", {series("original", po), series("updated", pu)}));
  io::write_text(dir / "admm_iterate_mse.svg",
                 svg_line_chart("MSE between consecutive iterates", "iteration", "MSE", {series("original", mo), series("updated", mu)},
                                true));
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                           const std::vector<Series>& series, bool log_y) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
  const auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!log_y || y > 0); };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n"
      "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n"
      "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n"
      "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n"
      "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
      W, H, (W - R + L) / 2, xml_escape(title), L, H - B, W - R, H - B, L, T, L, H - B, (W - R + L) / 2, H - 12,
      xml_escape(xlabel), (H - B + T) / 2, (H - B + T) / 2, xml_escape(log_y ? "log10 " + ylabel : ylabel));
  const auto tick = [](double v) { return fmt::format("{:.4g}", v); };
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", L - 4, H - B, tick(y0));
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", L - 4, T + 4, tick(y1));
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", L, H - B + 16, tick(x0));
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", W - R, H - B + 16, tick(x1));
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = palette[k % std::size(palette)];
    std::string pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      pts += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
    }
    out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", colour, pts);
    out += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", W - R + 8, T + 16 * (k + 1), colour, xml_escape(s.name));
  }
  out += "</svg>\n";
  return out;
}

}  // namespace pnpreg

namespace pnpreg {

OracleInstance make_oracle_instance(const std::string& task, std::size_t size, std::uint64_t seed) {
  TaskConfig t;
  t.kind = task;
  if (task == "sr") t.kernel = "bicubic";
  t.keep_rate = 0.5;
  Rng rng(seed);
  OracleInstance inst;
  inst.x_gt = synthetic_image(1, size, size, rng);
  inst.op = experiment_operator(t, 1, size, size, seed);
  inst.y = add_awgn(inst.op->apply(inst.x_gt), 0.01, seed + 1);
  inst.x0 = initial_estimate(*inst.op, inst.y);
  return inst;
}

SolverAgreement solver_agreement(const OracleInstance& inst) {
  const TikhonovPrior tik;
  const Tensor closed = map_closed_form(*inst.op, inst.y, tik, inst.sigma);
  // ||A|| <= 1 for every task here, so 1 / (1 + sigma^2) is a safe step.
  GDConfig gd;
  gd.rule = UpdateRule::Plain;
  gd.sigma = inst.sigma;
  gd.mu = 1.0 / (1.0 + inst.sigma * inst.sigma);
  gd.iterations = 300;
  gd.trace = false;
  const Tensor x_gd = pnp_gd(inst.y, *inst.op, tik, gd, inst.x0).x;
  // rho = 1: the prox runs at s = sigma throughout
  ADMMConfig admm;
  admm.sigma = inst.sigma;
  admm.s0 = admm.sN = inst.sigma;
  admm.iterations = 300;
  admm.trace = false;
  admm.cg.tolerance = 1e-14;
  const Tensor x_admm = pnp_admm(inst.y, *inst.op, tik, admm, inst.x0).x;
  return {relative_l2(x_gd, closed), relative_l2(x_admm, closed), relative_l2(x_gd, x_admm)};
}

namespace {

Tensor randn(Shape shape, Rng& rng) {
  std::normal_distribution<double> n01;
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, n01(rng));
  return t;
}

// Max relative error between the tape gradient of `f` w.r.t. its leaf and
// central differences, over every coordinate.
double fd_error(const Tensor& x, const std::function<Var(Tape&, Var)>& f, double h = 1e-6) {
  Tape tape;
  const Var leaf = tape.leaf(x);
  tape.backward(f(tape, leaf));
  const Tensor g = tape.grad(leaf);
  const auto eval = [&](const Tensor& p) {
    Tape t;
    return f(t, t.constant(p)).value().item();
  };
  double worst = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor a = x, b = x;
    a.set(i, x.item(i) + h);
    b.set(i, x.item(i) - h);
    const double fd = (eval(a) - eval(b)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g.item(i)) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> run_selfcheck(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);

  std::vector<std::pair<std::string, OperatorPtr>> ops;
  ops.emplace_back("identity", build_operator(IdentitySpec{}, 3, 24, 24));
  ops.emplace_back("blur gaussian 25", build_operator(make_gaussian_kernel(25, 1.6), 3, 32, 32));
  ops.emplace_back("blur anisotropic",
                   build_operator(make_anisotropic_gaussian_kernel(15, 3.0, 1.0, 0.7), 3, 24, 24));
  ops.emplace_back("sr x2 bicubic", build_operator(make_sr_spec(SRKernel::Bicubic, 2), 3, 24, 24));
  ops.emplace_back("sr x3 bicubic", build_operator(make_sr_spec(SRKernel::Bicubic, 3), 3, 24, 24));
  ops.emplace_back("sr x2 gaussian", build_operator(make_sr_spec(SRKernel::Gaussian, 2), 3, 24, 24));
  ops.emplace_back("inpaint", build_operator(make_mask_spec(24, 24, 0.2, seed), 3, 24, 24));
  for (const auto& [name, op] : ops) {
    double worst = 0;
    for (int probe = 0; probe < 10; ++probe) {
      const Tensor x = randn(op->input_shape(), rng);
      const Tensor y = randn(op->output_shape(), rng);
      const double lhs = dot(op->apply(x), y), rhs = dot(x, op->adjoint(y));
      worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300}));
    }
    out.push_back({"adjoint " + name, worst <= 1e-10, worst});
  }

  const TikhonovPrior tik;
  const LaplacianPrior lap(CGOptions{1e-14, 2000});
  for (const Prior* p : {static_cast<const Prior*>(&tik), static_cast<const Prior*>(&lap)}) {
    std::uniform_real_distribution<double> us(0.01, 1.0);
    double worst = 0;
    for (int probe = 0; probe < 20; ++probe) {
      const Tensor z = randn({1, 3, 12, 12}, rng);
      const double s = us(rng);
      const Tensor d = prior_prox(*p, z, s);
      const Tensor r = sub(scale(prior_grad(*p, d), s * s), sub(z, d));
      worst = std::max(worst, max_abs(r));
    }
    out.push_back({"residual identity " + p->name(), worst <= 1e-9, worst});
  }

  for (const char* task : {"deblur", "inpaint", "sr"}) {
    const SolverAgreement a = solver_agreement(make_oracle_instance(task, 32, seed + 7));
    out.push_back({std::string("solver agreement ") + task, a.max() <= 1e-5, a.max()});
  }

  const ADMMSchedule flat = admm_schedule(2.55 / 255, 30.0 / 255, 30.0 / 255, 20);
  out.push_back({"admm schedule alpha", std::abs(flat.alpha - 1) <= 1e-12, std::abs(flat.alpha - 1)});
  const ADMMSchedule sr = admm_schedule(2.55 / 255, 50.0 / 255, 0.1 / 255, 25);
  out.push_back({"admm schedule rho0", std::abs(sr.rho0 - 0.002601) <= 1e-12, std::abs(sr.rho0 - 0.002601)});

  {
    const Tensor w = randn({2, 2, 3, 3}, rng);
    const Tensor r = randn({1, 2, 6, 6}, rng);
    const double e = fd_error(randn({1, 2, 6, 6}, rng), [&](Tape& t, Var x) {
      return ad::sum(ad::mul(ad::relu(ad::conv2d(x, t.constant(w), kernels::Padding::Circular, 1)), t.constant(r)));
    });
    out.push_back({"conv finite difference", e <= 1e-6, e});
  }

  {
    const Tensor t = randn({2, 3, 5}, rng);
    const Tensor back = io::decode_tensor(io::encode_tensor(t));
    out.push_back({"ptns round trip", back.shape() == t.shape() && max_abs(sub(back, t)) == 0, max_abs(sub(back, t))});
    DenoiserNet d(3, 2, 4, 1, seed);
    const Tensor img = synthetic_image(3, 17, 23, rng);
    const Tensor a = d.denoise(img, 0.1);
    const Tensor b = DenoiserNet(*decode_checkpoint(encode_checkpoint(d.net(), 1)).net).denoise(img, 0.1);
    out.push_back({"checkpoint round trip", max_abs(sub(a, b)) == 0, max_abs(sub(a, b))});
  }
  return out;
}

std::string selfcheck_csv(const std::vector<CheckResult>& checks) {
  std::string out = "check,status,value\n";
  for (const auto& c : checks) out += fmt::format("{},{},{:.6e}\n", c.name, c.ok ? "PASS" : "FAIL", c.value);
  return out;
}

}  // namespace pnpreg
