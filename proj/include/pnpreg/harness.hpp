#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pnpreg/degradations.hpp"
#include "pnpreg/network.hpp"
#include "pnpreg/solvers.hpp"
#include "pnpreg/training.hpp"

namespace pnpreg {

// Evaluates a numeric config value: decimal literals combined with + - * /,
// parentheses and sqrt(), e.g. "1.2/255" or "sqrt(2)/255".
double parse_number(const std::string& text);

// Line-oriented "key = value" text with [section] headers and '#' comments.
// Keys are addressed as "section.key".
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  bool flag(const std::string& key, bool fallback) const;

  // "section.key=value"; throws ArgumentError for malformed text.
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Rejects keys outside the known schema.
  void validate_keys() const;
  // Canonical text: sections and keys in sorted order.
  std::string echo() const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

enum class Algorithm { PnPGD, RED, ADMM, ClosedForm };
enum class PriorKind { ReG, Denoiser, Tikhonov, Laplacian };

struct TaskConfig {
  std::string kind = "deblur";  // deblur | sr | inpaint | identity
  std::string kernel = "gaussian";  // gaussian | bicubic | file (blur / sr)
  double sigma_b = 1.6;
  int kernel_size = 25;
  std::filesystem::path kernel_file;
  int factor = 2;
  double keep_rate = 0.2;
  double sigma_n = 0.0;
};

struct ExperimentConfig {
  TaskConfig task;
  Algorithm algorithm = Algorithm::PnPGD;
  PriorKind prior = PriorKind::ReG;
  GDConfig gd;
  REDConfig red;
  ADMMConfig admm;
  bool admm_sigma_explicit = false;
  std::filesystem::path checkpoint;  // G for pnp-gd, D for red/admm
  std::filesystem::path images;      // PNG folder; empty = synthetic images
  std::size_t synthetic_count = 4;
  std::size_t synthetic_size = 48;
  std::size_t channels = 3;
  std::size_t crop = 0;  // centre crop to crop x crop when > 0
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::size_t jobs = 1;
  bool fp64 = false;
  std::string echo;

  static ExperimentConfig from(const Config& cfg);
  void validate() const;
};

struct ImageResult {
  std::string name;
  double psnr_input = 0;   // of the task initialisation
  double psnr_output = 0;
  std::size_t iterations = 0;
  std::string error;       // empty on success
  std::filesystem::path trace_path;
};

struct Report {
  std::vector<ImageResult> images;
  double mean_psnr = 0;       // arithmetic mean of per-image psnr_output over successful images
  double mean_psnr_input = 0;
  double runtime_seconds = 0;
  std::string config_echo;

  std::string to_csv() const;
  bool ok() const;
};

struct NamedImage {
  std::string name;
  Tensor image;
};

// Loaded PNGs (optionally centre-cropped and reduced to the configured
// channel count) or procedural images.
std::vector<NamedImage> experiment_images(const ExperimentConfig& cfg);

OperatorPtr experiment_operator(const TaskConfig& task, std::size_t channels, std::size_t height, std::size_t width,
                                std::uint64_t seed);

// Degrades every image, runs the configured solver and writes report.csv,
// config.txt, per-image traces and PNGs under cfg.out (when set). Runtime
// goes to timing.txt so the other files are reproducible byte for byte.
Report run_experiment(const ExperimentConfig& cfg);

struct AblationReport {
  std::vector<std::string> names;
  std::vector<double> psnr_joint;
  std::vector<double> psnr_frozen;
  double residual_joint = 0;
  double residual_frozen = 0;
  std::vector<std::vector<double>> curve_joint;  // per image, PSNR per iteration
  std::vector<std::vector<double>> curve_frozen;
};

struct TrainedPair {
  std::shared_ptr<DenoiserNet> d;
  std::shared_ptr<ReGNet> g;
};

AblationReport ablation_fixed_vs_joint(const std::vector<NamedImage>& images, const std::vector<HeldOutItem>& heldout,
                                       const TrainedPair& joint, const TrainedPair& frozen,
                                       const ExperimentConfig& cfg);
void write_ablation(const std::filesystem::path& dir, const AblationReport& r);

struct StabilityTraces {
  SolveTrace original;
  SolveTrace updated;
};

StabilityTraces admm_stability_study(const Prior& d_original, const Prior& d_updated, const NamedImage& image,
                                     const ExperimentConfig& cfg);
void write_stability(const std::filesystem::path& dir, const StabilityTraces& t);

// Tikhonov-regularised instance used by the solver agreement checks:
// grey size x size image, operator for `task` (deblur | inpaint | sr).
struct OracleInstance {
  OperatorPtr op;
  Tensor x_gt;
  Tensor y;
  Tensor x0;
  double sigma = 0.5;
};
OracleInstance make_oracle_instance(const std::string& task, std::size_t size, std::uint64_t seed);

struct SolverAgreement {
  double gd_vs_closed = 0;  // relative L2
  double admm_vs_closed = 0;
  double gd_vs_admm = 0;
  double max() const { return std::max({gd_vs_closed, admm_vs_closed, gd_vs_admm}); }
};
// Plain PnP-GD, constant-schedule PnP-ADMM and the dense MAP solve on one instance.
SolverAgreement solver_agreement(const OracleInstance& inst);

struct CheckResult {
  std::string name;
  bool ok = false;
  double value = 0;  // the measured quantity compared against the tolerance
};

// Weight-free oracle suite: operator adjoints, the residual identity for the
// analytic priors, solver agreement, ADMM schedule arithmetic, a conv
// finite-difference check and file-format round trips.
std::vector<CheckResult> run_selfcheck(std::uint64_t seed);
std::string selfcheck_csv(const std::vector<CheckResult>& checks);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal SVG line chart; non-finite points are skipped.
std::string svg_line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                           const std::vector<Series>& series, bool log_y = false);

}  // namespace pnpreg
