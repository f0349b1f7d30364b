#include <doctest.h>

#include <fstream>
#include <sstream>

#include "pnpreg/harness.hpp"
#include "pnpreg/io.hpp"
#include "pnpreg/metrics.hpp"
#include "support.hpp"

using namespace pnpreg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pnpreg_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig from_text(const std::string& text) {
  Config c = Config::parse(text);
  c.validate_keys();
  ExperimentConfig e = ExperimentConfig::from(c);
  e.validate();
  return e;
}

const char* kTikhonovDeblur = R"(
[task]
kind = deblur
sigma_b = 1.6
kernel_size = 9
sigma_n = 0.01
[algorithm]
name = pnp-gd
update = plain
mu = 0.9
sigma = 0.3
iterations = 300
[prior]
kind = tikhonov
[data]
synthetic_count = 3
synthetic_size = 24
channels = 1
[run]
seed = 4
)";

}  // namespace

TEST_CASE("parse_number") {
  CHECK(parse_number("0.008") == 0.008);
  CHECK(parse_number("1.2/255") == 1.2 / 255);
  CHECK(parse_number("sqrt(2)/255") == std::sqrt(2.0) / 255);
  CHECK(parse_number(" (1 + 2) * 3 - -1 ") == 10);
  CHECK(parse_number("1e-3") == 1e-3);
  for (const char* bad : {"", "1/", "abc", "(1", "1 2", "sqrt 2"}) {
    CHECK_THROWS_AS(parse_number(bad), ArgumentError);
  }
}

TEST_CASE("config text") {
  const Config c = Config::parse("# comment\n[task]\nkind = sr  \nfactor=3\n\n[algorithm]\nmu = 1/2\nself_ensemble = yes\n");
  CHECK(c.get("task.kind", "") == "sr");
  CHECK(c.count("task.factor", 0) == 3);
  CHECK(c.number("algorithm.mu", 0) == 0.5);
  CHECK(c.flag("algorithm.self_ensemble", false));
  CHECK(c.number("algorithm.sigma", 7) == 7);
  CHECK_THROWS_AS(c.require("prior.kind"), ArgumentError);
  CHECK_THROWS_AS(Config::parse("[task\nkind = sr\n"), ArgumentError);
  CHECK_THROWS_AS(Config::parse("[task]\njust words\n"), ArgumentError);
  CHECK_THROWS_AS(Config::parse("[task]\nfoo = 1\n").validate_keys(), ArgumentError);
  CHECK_THROWS_AS(Config::parse("[task]\nfactor = 2.5\n").count("task.factor", 0), ArgumentError);
  CHECK_THROWS_AS(Config::parse("[a]\nb = maybe\n").flag("a.b", false), ArgumentError);

  Config o = c;
  o.set_override("algorithm.mu=0.25");
  CHECK(o.number("algorithm.mu", 0) == 0.25);
  CHECK_THROWS_AS(o.set_override("algorithm.nope=1"), ArgumentError);
  CHECK_THROWS_AS(o.set_override("no equals sign"), ArgumentError);
  // echo parses back to the same values
  CHECK(Config::parse(o.echo()).values() == o.values());
}

TEST_CASE("psnr") {
  Rng rng(1);
  const Tensor a = test::randu({1, 3, 9, 7}, rng);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
  const Tensor b = add(a, Tensor::full(a.shape(), 0.1));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  const Tensor c = test::randu(a.shape(), rng);
  double se = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) se += (a.item(i) - c.item(i)) * (a.item(i) - c.item(i));
  CHECK(psnr(a, c) == doctest::Approx(10 * std::log10(a.numel() / se)).epsilon(1e-12));
  CHECK(psnr(a, c) == psnr(c, a));
  CHECK(psnr(a, b, 255.0) == doctest::Approx(20.0 + 20 * std::log10(255.0)).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, Tensor({1, 3, 9, 8})), DimensionError);
}

TEST_CASE("experiment config mapping") {
  const ExperimentConfig e = from_text(kTikhonovDeblur);
  CHECK(e.algorithm == Algorithm::PnPGD);
  CHECK(e.prior == PriorKind::Tikhonov);
  CHECK(e.gd.rule == UpdateRule::Plain);
  CHECK(e.gd.iterations == 300);

  const ExperimentConfig d = from_text("[algorithm]\nname = pnp-gd\n[prior]\nkind = laplacian\n");
  CHECK(d.gd.mu == 0.008);
  CHECK(d.gd.sigma == 1.2 / 255);
  CHECK(d.gd.iterations == 1500);

  // the SR x2 ADMM block
  const ExperimentConfig sr = from_text(
      "[task]\nkind = sr\nkernel = bicubic\nfactor = 2\nsigma_n = 0\n[algorithm]\nname = admm\ns0 = 50/255\nsN = "
      "0.1/255\niterations = 25\n[prior]\nkind = tikhonov\n");
  CHECK(sr.admm.sigma == 0.001 / 255);
  CHECK(sr.admm.iterations == 25);
  CHECK(sr.admm.s0 == 50.0 / 255);

  CHECK_THROWS_AS(from_text("[prior]\nkind = denoiser\n"), ArgumentError);              // pnp-gd needs a gradient
  CHECK_THROWS_AS(from_text("[algorithm]\nname = admm\n[prior]\nkind = reg\n"), ArgumentError);
  CHECK_THROWS_AS(from_text("[prior]\nkind = reg\ncheckpoint = /nonexistent.pnpr\n"), ArgumentError);
  CHECK_THROWS_AS(from_text("[task]\nkind = sr\nfactor = 4\n[prior]\nkind = tikhonov\n"), ArgumentError);
  CHECK_THROWS_AS(from_text("[task]\nkind = warp\n[prior]\nkind = tikhonov\n"), ArgumentError);
  CHECK_THROWS_AS(from_text("[task]\nsigma_n = -1\n[prior]\nkind = tikhonov\n"), ArgumentError);
  CHECK_THROWS_AS(from_text("[algorithm]\nname = closed-form\n[prior]\nkind = denoiser\n"), ArgumentError);
}

TEST_CASE("identity task never loses PSNR") {
  ExperimentConfig e = from_text(
      "[task]\nkind = identity\nsigma_n = 0.05\n[algorithm]\nname = pnp-gd\nupdate = plain\nmu = 0.5\nsigma = "
      "0.2\niterations = 50\n[prior]\nkind = laplacian\n[data]\nsynthetic_count = 2\nsynthetic_size = 24\n");
  const Report r = run_experiment(e);
  REQUIRE(r.ok());
  for (const auto& im : r.images) CHECK(im.psnr_output >= im.psnr_input);
}

TEST_CASE("tikhonov pnp-gd matches the closed-form MAP solution") {
  ExperimentConfig gd = from_text(kTikhonovDeblur);
  gd.gd.iterations = 800;
  Config c = Config::parse(kTikhonovDeblur);
  c.set_override("algorithm.name=closed-form");
  const ExperimentConfig cf = ExperimentConfig::from(c);
  const Report a = run_experiment(gd), b = run_experiment(cf);
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(std::abs(a.images[i].psnr_output - b.images[i].psnr_output) <= 0.01);
  }
}

TEST_CASE("reports are reproducible byte for byte") {
  ExperimentConfig e = from_text(kTikhonovDeblur);
  e.gd.iterations = 40;
  const fs::path da = scratch("repro_a"), db = scratch("repro_b");
  e.out = da;
  const Report a = run_experiment(e);
  e.out = db;
  e.jobs = 3;
  const Report b = run_experiment(e);
  CHECK(a.to_csv() == b.to_csv());
  for (const char* f : {"report.csv", "config.txt", "trace_synthetic_00.csv", "synthetic_01_restored.png"}) {
    REQUIRE(fs::exists(da / f));
    CHECK(slurp(da / f) == slurp(db / f));
  }
  CHECK(fs::exists(da / "timing.txt"));
  const std::string csv = slurp(da / "report.csv");
  CHECK(csv.rfind("image,psnr_init,psnr_restored,iterations,status\n", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);
  // mean is the arithmetic mean of per-image PSNR
  double sum = 0;
  for (const auto& im : a.images) sum += im.psnr_output;
  CHECK(a.mean_psnr == doctest::Approx(sum / a.images.size()).epsilon(1e-14));
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("a diverging image is recorded, not fatal") {
  ExperimentConfig e = from_text(kTikhonovDeblur);
  e.prior = PriorKind::Laplacian;
  e.gd.mu = 50;
  e.gd.sigma = 1.0;
  e.gd.iterations = 3000;
  e.out = scratch("diverge");
  const Report r = run_experiment(e);
  CHECK(!r.ok());
  for (const auto& im : r.images) {
    CHECK(!im.error.empty());
    CHECK(fs::exists(im.trace_path));
  }
  fs::remove_all(e.out);
}

TEST_CASE("synthetic images and operators") {
  ExperimentConfig e = from_text(kTikhonovDeblur);
  const auto a = experiment_images(e), b = experiment_images(e);
  REQUIRE(a.size() == 3);
  CHECK(a[0].name == "synthetic_00");
  CHECK(a[0].image.shape() == Shape{1, 1, 24, 24});
  CHECK(max_abs(sub(a[2].image, b[2].image)) == 0);
  e.channels = 3;
  e.crop = 16;
  CHECK(experiment_images(e)[1].image.shape() == Shape{1, 3, 16, 16});

  TaskConfig t;
  t.kind = "deblur";
  t.kernel = "file";
  t.kernel_file = fs::path(PNPREG_SOURCE_DIR) / "data/kernels/aniso_a.ptns";
  const OperatorPtr op = experiment_operator(t, 1, 32, 32, 0);
  CHECK(op->output_shape() == Shape{1, 1, 32, 32});
  t.kind = "sr";
  t.kernel = "bicubic";
  t.factor = 3;
  CHECK(experiment_operator(t, 3, 30, 30, 0)->output_shape() == Shape{1, 3, 10, 10});
}

TEST_CASE("svg chart") {
  const std::vector<Series> s{{"a", {1, 2, 3}, {1, 10, 100}},
                              {"b<&>", {1, 2, 3}, {2, std::numeric_limits<double>::quiet_NaN(), 50}}};
  const std::string svg = svg_line_chart("title", "iteration", "mse", s, true);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("nan") == std::string::npos);
  CHECK(svg.find("b&lt;&amp;&gt;") != std::string::npos);
  CHECK(svg == svg_line_chart("title", "iteration", "mse", s, true));
}

TEST_CASE("ablation and stability studies run end to end") {
  const PatchDataset data = PatchDataset::synthetic(4, 48, 3, 16, 3);
  TrainConfig tc;
  tc.batch = 2;
  tc.patch = 16;
  tc.seed = 2;
  const auto heldout = make_heldout(data, tc, 2, 7);
  TrainedPair joint{std::make_shared<DenoiserNet>(3, 2, 4, 1, 1), std::make_shared<ReGNet>(3, 2, 4, 1, 2)};
  TrainedPair frozen{std::make_shared<DenoiserNet>(3, 2, 4, 1, 1), std::make_shared<ReGNet>(3, 2, 4, 1, 3)};

  ExperimentConfig e = from_text(kTikhonovDeblur);
  e.channels = 3;
  e.synthetic_count = 2;
  e.gd.iterations = 10;
  const auto images = experiment_images(e);
  const AblationReport r = ablation_fixed_vs_joint(images, heldout, joint, frozen, e);
  CHECK(r.names.size() == 2);
  CHECK(r.curve_joint[0].size() == 10);
  CHECK(r.residual_joint > 0);
  const fs::path dir = scratch("ablation");
  write_ablation(dir, r);
  for (const char* f : {"ablation.csv", "ablation_curves.csv", "ablation_curves.svg"}) CHECK(fs::exists(dir / f));

  e.algorithm = Algorithm::ADMM;
  e.admm.iterations = 6;
  const DenoiserPrior d(joint.d);
  const StabilityTraces t = admm_stability_study(d, LaplacianPrior{}, images[0], e);
  CHECK(t.original.rows.size() == 6);
  CHECK(t.updated.rows.size() == 6);
  write_stability(dir, t);
  for (const char* f : {"admm_stability.csv", "admm_psnr.svg", "admm_iterate_mse.svg"}) CHECK(fs::exists(dir / f));
  fs::remove_all(dir);
}

TEST_CASE("selfcheck") {
  const auto checks = run_selfcheck(0);
  CHECK(checks.size() >= 15);
  for (const auto& c : checks) {
    INFO(c.name << " = " << c.value);
    CHECK(c.ok);
  }
  CHECK(selfcheck_csv(checks) == selfcheck_csv(run_selfcheck(0)));
}
