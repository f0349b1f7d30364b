// pnpreg: command line front end for training, restoration and studies.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>

#include "pnpreg/harness.hpp"
#include "pnpreg/io.hpp"
#include "pnpreg/metrics.hpp"

namespace fs = std::filesystem;
using namespace pnpreg;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
  bool fp64 = false;
};

Config load_config(const Common& c) {
  Config cfg = c.config.empty() ? Config{} : Config::load(c.config);
  for (const auto& s : c.sets) cfg.set_override(s);
  if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
  if (c.jobs) cfg.set("run.jobs", std::to_string(*c.jobs));
  if (!c.out.empty()) cfg.set("run.out", c.out);
  if (c.fp64) cfg.set("run.fp64", "true");
  cfg.validate_keys();
  return cfg;
}

fs::path out_dir(const Config& cfg) {
  const fs::path out = cfg.get("run.out", "");
  if (out.empty()) throw ArgumentError("an output directory is required (--out or run.out)");
  fs::create_directories(out);
  return out;
}

struct NetShape {
  std::uint32_t channels, scales, base, blocks;
};

NetShape net_shape(const Config& cfg) {
  const auto u32 = [&](const char* key, std::size_t fallback) { return static_cast<std::uint32_t>(cfg.count(key, fallback)); };
  NetShape n{u32("net.channels", 3), u32("net.scales", 2), u32("net.base", 8), u32("net.blocks", 2)};
  if (n.channels != 1 && n.channels != 3) throw ArgumentError("net.channels must be 1 or 3");
  return n;
}

TrainConfig train_config(const Config& cfg) {
  TrainConfig t;
  t.lambda = cfg.number("train.lambda", t.lambda);
  t.sigma_max = cfg.number("train.sigma_max", t.sigma_max);
  t.alternation = cfg.number("train.alternation", t.alternation);
  t.batch = cfg.count("train.batch", t.batch);
  t.patch = cfg.count("train.patch", t.patch);
  t.lr0 = cfg.number("train.lr", t.lr0);
  t.lr_period = cfg.count("train.lr_period", t.lr_period);
  t.lr_floor = cfg.number("train.lr_floor", t.lr_floor);
  t.max_steps = cfg.count("train.steps", t.max_steps);
  t.seed = static_cast<std::uint64_t>(cfg.number("run.seed", 0));
  t.freeze_denoiser = cfg.flag("train.freeze_denoiser", false);
  t.denoiser_follows_lg = cfg.flag("train.denoiser_follows_lg", true);
  t.log_every = cfg.count("train.log_every", t.log_every);
  t.validate();
  return t;
}

PatchDataset dataset(const Config& cfg, std::size_t patch) {
  const std::string folder = cfg.get("train.images", "");
  if (!folder.empty()) return PatchDataset(PatchDataset::load_folder(folder), patch);
  return PatchDataset::synthetic(cfg.count("train.dataset_count", 16), cfg.count("train.dataset_size", 96),
                                 cfg.count("net.channels", 3), patch,
                                 static_cast<std::uint64_t>(cfg.number("run.seed", 0)) + 1000);
}

LogSink console_sink() {
  return [](const TrainLogRow& r) {
    fmt::print(stderr, "step {:>6}  L_D {:.6f}  L_G {:.6f}  L {:.6f}  lr {:.3g}\n", r.step, r.ld, r.lg, r.l, r.lr);
  };
}

std::shared_ptr<DenoiserNet> load_denoiser(const fs::path& path) {
  if (path.empty()) throw ArgumentError("denoiser checkpoint path is empty");
  if (!fs::exists(path)) throw ArgumentError("checkpoint not found: " + path.string());
  return std::make_shared<DenoiserNet>(*load_checkpoint(path).net);
}

std::shared_ptr<ReGNet> load_reg(const fs::path& path) {
  if (path.empty()) throw ArgumentError("regularizer checkpoint path is empty");
  if (!fs::exists(path)) throw ArgumentError("checkpoint not found: " + path.string());
  return std::make_shared<ReGNet>(*load_checkpoint(path).net);
}

int cmd_pretrain(const Common& c) {
  const Config cfg = load_config(c);
  const fs::path out = out_dir(cfg);
  TrainConfig t = train_config(cfg);
  t.dump_dir = out / "dump";
  const PatchDataset data = dataset(cfg, t.patch);
  const NetShape n = net_shape(cfg);
  DenoiserNet d(n.channels, n.scales, n.base, n.blocks, t.seed);
  const TrainResult r = pretrain_denoiser(d, data, t, console_sink());
  save_checkpoint(out / "denoiser.pnpr", d.net(), r.steps);
  write_train_log(out / "train_log.csv", r.log);
  io::write_text(out / "config.txt", cfg.echo());
  fmt::print("wrote {}\n", (out / "denoiser.pnpr").string());
  return 0;
}

int cmd_train_joint(const Common& c) {
  const Config cfg = load_config(c);
  const fs::path out = out_dir(cfg);
  TrainConfig t = train_config(cfg);
  t.dump_dir = out / "dump";
  const PatchDataset data = dataset(cfg, t.patch);
  const NetShape n = net_shape(cfg);
  const std::string dpath = cfg.get("net.denoiser", "");
  std::shared_ptr<DenoiserNet> d;
  if (dpath.empty()) {
    if (!cfg.flag("train.skip_pretrained", false)) {
      throw ArgumentError("net.denoiser must name a pretrained denoiser (or set train.skip_pretrained=true)");
    }
    d = std::make_shared<DenoiserNet>(n.channels, n.scales, n.base, n.blocks, t.seed);
  } else {
    d = load_denoiser(dpath);
  }
  const std::string gpath = cfg.get("net.reg", "");
  std::shared_ptr<ReGNet> g =
      gpath.empty() ? std::make_shared<ReGNet>(d->channels(), n.scales, n.base, n.blocks, t.seed + 1) : load_reg(gpath);
  const TrainResult r = joint_train(*d, *g, data, t, console_sink());
  save_checkpoint(out / "denoiser.pnpr", d->net(), r.steps);
  save_checkpoint(out / "reg.pnpr", g->net(), r.steps);
  write_train_log(out / "train_log.csv", r.log);
  io::write_text(out / "config.txt", cfg.echo());
  fmt::print("wrote {} and {}\n", (out / "denoiser.pnpr").string(), (out / "reg.pnpr").string());
  return 0;
}

int cmd_restore(const Common& c) {
  const Config cfg = load_config(c);
  ExperimentConfig e = ExperimentConfig::from(cfg);
  if (!e.out.empty()) fs::create_directories(e.out);
  const Report r = run_experiment(e);
  for (const auto& im : r.images) {
    if (im.error.empty()) {
      fmt::print("{:<20} init {:7.3f} dB  restored {:7.3f} dB  ({} it)\n", im.name, im.psnr_input, im.psnr_output,
                 im.iterations);
    } else {
      fmt::print("{:<20} ERROR {}\n", im.name, im.error);
    }
  }
  fmt::print("mean PSNR {:.3f} dB (init {:.3f} dB), {:.1f} s\n", r.mean_psnr, r.mean_psnr_input, r.runtime_seconds);
  return r.ok() ? 0 : 2;
}

int cmd_eval(const Common& c) {
  const Config cfg = load_config(c);
  const auto d = load_denoiser(cfg.get("net.denoiser", ""));
  const auto g = load_reg(cfg.get("net.reg", ""));
  const TrainConfig t = train_config(cfg);
  const PatchDataset data = dataset(cfg, t.patch);
  const auto items = make_heldout(data, t, cfg.count("eval.batches", 8), static_cast<std::uint64_t>(cfg.number("eval.seed", 777)));
  const HeldOutMetrics m = evaluate_heldout(*d, *g, items, t.lambda);
  const auto [den, noisy] = denoising_mse(*d, items);
  const std::string text = fmt::format("L_D,{}\nL_G,{}\nL,{}\ndenoised_mse,{}\nnoisy_mse,{}\n", m.ld, m.lg, m.l, den, noisy);
  std::cout << text;
  const std::string out = cfg.get("run.out", "");
  if (!out.empty()) {
    fs::create_directories(out);
    io::write_text(fs::path(out) / "eval.csv", "metric,value\n" + text);
  }
  return 0;
}

int cmd_selfcheck(const Common& c) {
  const Config cfg = load_config(c);
  const auto checks = run_selfcheck(static_cast<std::uint64_t>(cfg.number("run.seed", 0)));
  bool ok = true;
  for (const auto& r : checks) {
    fmt::print("{} {} ({:.3e})\n", r.ok ? "PASS" : "FAIL", r.name, r.value);
    ok = ok && r.ok;
  }
  const std::string out = cfg.get("run.out", "");
  if (!out.empty()) {
    fs::create_directories(out);
    io::write_text(fs::path(out) / "selfcheck.csv", selfcheck_csv(checks));
  }
  return ok ? 0 : 2;
}

int cmd_study(const Common& c) {
  const Config cfg = load_config(c);
  const fs::path out = out_dir(cfg);
  const std::string kind = cfg.require("study.kind");
  ExperimentConfig e = ExperimentConfig::from(cfg);
  io::write_text(out / "config.txt", cfg.echo());
  if (kind == "ablation") {
    TrainedPair joint{load_denoiser(cfg.get("study.joint_denoiser", "")), load_reg(cfg.get("study.joint_reg", ""))};
    TrainedPair frozen{load_denoiser(cfg.get("study.frozen_denoiser", "")), load_reg(cfg.get("study.frozen_reg", ""))};
    const TrainConfig t = train_config(cfg);
    const PatchDataset data = dataset(cfg, t.patch);
    const auto items = make_heldout(data, t, cfg.count("eval.batches", 8), static_cast<std::uint64_t>(cfg.number("eval.seed", 777)));
    const AblationReport r = ablation_fixed_vs_joint(experiment_images(e), items, joint, frozen, e);
    write_ablation(out, r);
    for (std::size_t i = 0; i < r.names.size(); ++i) {
      fmt::print("{:<20} joint {:7.3f} dB  fixed {:7.3f} dB\n", r.names[i], r.psnr_joint[i], r.psnr_frozen[i]);
    }
    fmt::print("held-out L_G: joint {:.6g}  fixed {:.6g}\n", r.residual_joint, r.residual_frozen);
    return 0;
  }
  if (kind == "admm-stability") {
    const DenoiserPrior original(load_denoiser(cfg.get("study.original_denoiser", "")));
    const DenoiserPrior updated(load_denoiser(cfg.get("study.updated_denoiser", "")));
    const auto images = experiment_images(e);
    const StabilityTraces t = admm_stability_study(original, updated, images.front(), e);
    write_stability(out, t);
    fmt::print("final PSNR: original {:.3f} dB  updated {:.3f} dB\n", t.original.rows.back().psnr,
               t.updated.rows.back().psnr);
    return 0;
  }
  if (kind == "unrolled") {
    UnrolledConfig u;
    u.unroll = cfg.count("unrolled.unroll", u.unroll);
    u.steps = cfg.count("unrolled.steps", u.steps);
    u.lr = cfg.number("unrolled.lr", u.lr);
    u.batch = cfg.count("unrolled.batch", u.batch);
    u.mu = e.gd.mu;
    u.sigma = e.gd.sigma;
    u.sigma_n = e.task.sigma_n;
    u.seed = e.seed;
    const std::size_t patch = cfg.count("unrolled.patch", 32);
    const OperatorPtr op = experiment_operator(e.task, net_shape(cfg).channels, patch, patch, e.seed);
    const PatchDataset data = dataset(cfg, patch);
    const std::string gpath = cfg.get("net.reg", "");
    const NetShape n = net_shape(cfg);
    auto g = gpath.empty() ? std::make_shared<ReGNet>(n.channels, n.scales, n.base, n.blocks, e.seed + 1) : load_reg(gpath);
    std::string log = "step,loss\n";
    unrolled_gd_train(data, *op, *g, u, [&](const UnrolledLogRow& r) {
      log += fmt::format("{},{}\n", r.step, r.loss);
      fmt::print(stderr, "step {:>6}  loss {:.6f}\n", r.step, r.loss);
    });
    io::write_text(out / "unrolled_log.csv", log);
    save_checkpoint(out / "reg_unrolled.pnpr", g->net(), u.steps);
    return 0;
  }
  throw ArgumentError("unknown study.kind " + kind + " (ablation | admm-stability | unrolled)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PnP restoration with a learned regularizer gradient"};
  app.require_subcommand(1);
  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "config file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.sets, "override, section.key=value (repeatable)");
    sub->add_option("--seed", common.seed, "base seed");
    sub->add_option("--jobs", common.jobs, "worker threads for per-image runs");
    sub->add_option("--out", common.out, "output directory");
    sub->add_flag("--fp64", common.fp64, "run networks in double precision");
  };
  struct Verb {
    const char* name;
    const char* help;
    int (*run)(const Common&);
  };
  const Verb verbs[] = {
      {"pretrain", "train the denoiser alone on L_D", cmd_pretrain},
      {"train-joint", "train the regularizer gradient jointly with the denoiser", cmd_train_joint},
      {"restore", "degrade images and restore them with the configured solver", cmd_restore},
      {"eval", "held-out losses of a (denoiser, regularizer) pair", cmd_eval},
      {"selfcheck", "operator adjoints, residual identity, checkpoint round trip", cmd_selfcheck},
      {"study", "ablation | admm-stability | unrolled", cmd_study},
  };
  int (*chosen)(const Common&) = nullptr;
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    add_common(sub);
    sub->callback([&chosen, run = v.run] { chosen = run; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR: " << e.what() << "\n" << app.help();
    return 1;
  }
  try {
    return chosen(common);
  } catch (const ArgumentError& e) {
    std::cerr << "ERROR: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "ERROR: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "ERROR: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR: " << e.what() << "\n";
    return 2;
  }
}
