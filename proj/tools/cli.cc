/* Copyright 2026 The RSFNet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cli.h"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rsf/checkpoint.h"
#include "rsf/config.h"
#include "rsf/dataset.h"
#include "rsf/eval.h"
#include "rsf/model.h"
#include "rsf/plg.h"
#include "rsf/trainer.h"

namespace rsf::cli {
namespace {

namespace fs = std::filesystem;

// Raw flag values before resolution.
struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool fp64 = false;
  std::vector<std::string> overrides;  // key=value
  std::string dataset;
  std::string split = "train";
  std::string synthetic;
  int synthetic_n = 16;
  int synthetic_size = 64;
  std::string out;
  std::vector<int> scales{2, 4, 8};
  bool stretch_thermal = false;
  bool saliency_png = false;
  int fuse_trials = 3;
  int bench_trials = 10;
  int warmup = 1;
  double tol = 1e-5;
  std::string checkpoint;
  std::string checkpoint_out;
  bool exclude_unlabeled = false;
  bool save_pred = false;
  int batch_size = 4;
  std::int64_t height = 64;
  std::int64_t width = 64;
};

// Flags > config file > defaults.
Config resolve_config(const Flags& f) {
  Config cfg;
  if (!f.config_path.empty()) cfg = load_config_file(f.config_path, cfg);
  for (const std::string& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(kv, "--set expects key=value, got '" + kv + "'");
    }
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.fp64) cfg.model.dtype = DType::kFloat64;
  if (!f.synthetic.empty()) cfg.model.num_classes = kSyntheticClasses;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

fs::path ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("out", "--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  return fs::path(out);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

// The resolved configuration plus the command-level flags, loadable again
// through --config (flag lines are comments).
void write_run_config(const fs::path& dir, const std::string& command,
                      const Flags& f, const Config& cfg) {
  std::ofstream file = open_out(dir / "run_config.txt");
  file << "# rsf " << command << "\n";
  if (!f.dataset.empty()) file << "# dataset = " << f.dataset << " split = " << f.split << "\n";
  if (!f.synthetic.empty()) {
    file << "# synthetic = " << f.synthetic << " n = " << f.synthetic_n
         << " size = " << f.synthetic_size << "\n";
  }
  if (!f.checkpoint.empty()) file << "# checkpoint = " << f.checkpoint << "\n";
  file << serialize_config(cfg);
}

std::vector<SamplePair> load_samples(const Flags& f, const Config& cfg) {
  if (!f.synthetic.empty() && !f.dataset.empty()) {
    throw ConfigError("dataset", "--dataset and --synthetic are mutually exclusive");
  }
  if (!f.synthetic.empty()) {
    if (f.synthetic_n < 0) throw ConfigError("n", "--n must be non-negative");
    return make_synthetic_dataset(f.synthetic_n, cfg.train.seed,
                                  parse_scene_mode(f.synthetic), f.synthetic_size);
  }
  if (f.dataset.empty()) throw ConfigError("dataset", "need --dataset or --synthetic");
  return load_dataset(f.dataset, f.split, cfg.model.num_classes);
}

PlgOptions plg_options(const Flags& f) {
  if (f.scales.empty()) throw ConfigError("scales", "--scales needs at least one radius");
  for (int r : f.scales) {
    if (r < 1) throw ConfigError("scales", "--scales radii must be >= 1, got " + std::to_string(r));
  }
  PlgOptions o;
  o.scales = f.scales;
  o.stretch_thermal = f.stretch_thermal;
  return o;
}

void write_pseudo_csv(const fs::path& path, const std::vector<SamplePair>& samples) {
  std::ofstream csv = open_out(path);
  csv << "id,p_rgb,p_thm\n";
  for (const SamplePair& s : samples) {
    csv << s.id << "," << fmt(s.pseudo->p_rgb) << "," << fmt(s.pseudo->p_thm) << "\n";
  }
}

Image8 saliency_image(const Tensor& plane_0_255) {
  Image8 img{plane_0_255.dim(0), plane_0_255.dim(1), 1, {}};
  img.data.reserve(static_cast<std::size_t>(plane_0_255.numel()));
  for (double v : plane_0_255.values()) {
    img.data.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))));
  }
  return img;
}

int cmd_synth(const Flags& f, std::ostream& out) {
  if (f.synthetic.empty()) throw ConfigError("synthetic", "synth needs --synthetic day|night");
  const Config cfg = resolve_config(f);
  const auto samples = load_samples(f, cfg);
  const fs::path dir = ensure_out_dir(f.out);
  save_dataset(dir.string(), f.split, samples);
  out << "wrote " << samples.size() << " " << f.synthetic << " samples to " << dir.string()
      << " (split " << f.split << ")\n";
  return kExitOk;
}

int cmd_plg(const Flags& f, std::ostream& out) {
  const Config cfg = resolve_config(f);
  std::vector<SamplePair> samples = load_samples(f, cfg);
  const fs::path dir = ensure_out_dir(f.out);
  write_run_config(dir, "plg", f, cfg);
  const PlgOptions options = plg_options(f);
  attach_pseudo_labels(samples, cfg.model.num_classes, options);
  write_pseudo_csv(dir / "pseudo_labels.csv", samples);
  if (f.saliency_png) {
    fs::create_directories(dir / "saliency");
    for (const SamplePair& s : samples) {
      const auto radii = clip_scales(options.scales, s.height(), s.width());
      const auto rgb = fine_grained_saliency(to_grayscale(scale(s.rgb, 255.0)), radii);
      const auto thm = fine_grained_saliency(intensity_from_plane(scale(s.thm, 255.0)), radii);
      write_png((dir / "saliency" / (s.id + "_rgb.png")).string(), saliency_image(rgb.values));
      write_png((dir / "saliency" / (s.id + "_thm.png")).string(), saliency_image(thm.values));
    }
  }
  double sum_rgb = 0.0, sum_thm = 0.0;
  for (const SamplePair& s : samples) {
    sum_rgb += s.pseudo->p_rgb;
    sum_thm += s.pseudo->p_thm;
  }
  const double n = std::max<double>(1.0, static_cast<double>(samples.size()));
  out << samples.size() << " samples, mean p_rgb " << fmt(sum_rgb / n) << ", mean p_thm "
      << fmt(sum_thm / n) << "\n";
  return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const Config cfg = resolve_config(f);
  std::vector<SamplePair> samples = load_samples(f, cfg);
  if (samples.empty()) throw Error("training set is empty");
  const fs::path dir = ensure_out_dir(f.out);
  write_run_config(dir, "train", f, cfg);
  attach_pseudo_labels(samples, cfg.model.num_classes, plg_options(f));
  write_pseudo_csv(dir / "pseudo_labels.csv", samples);

  Rng init = Rng::derive(cfg.train.seed, "init");
  RsfNet net(cfg.model, init);
  const int steps = resolve_steps(cfg.train, samples.size());
  const int every = cfg.train.checkpoint_every;
  if (every > 0) fs::create_directories(dir / "checkpoints");
  const int report_every = std::max(1, steps / 10);
  auto log = train_model(net, samples, cfg.train, [&](const TrainLogEntry& e, RsfNet& m) {
    // Log steps are 0-based; file names count completed updates.
    const int done = e.step + 1;
    if (every > 0 && done % every == 0) {
      save_checkpoint(m.to_checkpoint(),
                      (dir / "checkpoints" / ("step_" + std::to_string(done) + ".rsfc"))
                          .string());
    }
    if (done % report_every == 0 || e.step == 0) {
      out << "step " << done << "/" << steps << " lr " << fmt(e.lr) << " loss "
          << fmt(e.total) << " (seg " << fmt(e.seg) << ", reg " << fmt(e.reg) << ")\n";
    }
  });
  std::ofstream csv = open_out(dir / "loss_log.csv");
  csv << "step,lr,total,seg,reg\n";
  for (const TrainLogEntry& e : log) {
    csv << e.step << "," << fmt(e.lr) << "," << fmt(e.total) << "," << fmt(e.seg) << ","
        << fmt(e.reg) << "\n";
  }
  save_checkpoint(net.to_checkpoint(), (dir / "model.rsfc").string());
  out << "initial loss " << fmt(log.front().total) << ", final loss "
      << fmt(log.back().total) << "; wrote " << (dir / "model.rsfc").string() << "\n";
  return kExitOk;
}

int cmd_fuse(const Flags& f, std::ostream& out) {
  RsfNet net = RsfNet::from_checkpoint(load_checkpoint(f.checkpoint));
  if (net.is_fused()) {
    out << "notice: " << f.checkpoint << " is already fused; writing it unchanged\n";
    save_checkpoint(net.to_checkpoint(), f.checkpoint_out);
    return kExitOk;
  }
  const FuseReport rep = net.fuse(f.tol, f.fuse_trials, f.seed.value_or(0));
  out << "fused " << rep.blocks << " branch blocks; max |multi-branch - fused| "
      << fmt(rep.max_abs_deviation) << ", scaled by output magnitude "
      << fmt(rep.max_scaled_deviation) << " (tolerance " << fmt(rep.tolerance) << ", "
      << rep.trials << " trials per block)\n";
  if (!rep.passed) {
    throw Error("equivalence check failed; no checkpoint written");
  }
  save_checkpoint(net.to_checkpoint(), f.checkpoint_out);
  out << "wrote " << f.checkpoint_out << "\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const RsfNet net = RsfNet::from_checkpoint(load_checkpoint(f.checkpoint));
  Config cfg;
  cfg.model = net.config();
  if (f.seed) cfg.train.seed = *f.seed;
  const auto samples = load_samples(f, cfg);
  if (samples.empty()) throw Error("evaluation set is empty");
  if (!f.synthetic.empty() && net.config().num_classes != kSyntheticClasses) {
    throw ConfigError("num_classes", "synthetic data has 3 classes, model has " +
                                         std::to_string(net.config().num_classes));
  }
  const ConfusionMatrix cm = evaluate(net, samples, f.batch_size);
  const SegMetrics m = macc_miou(cm, !f.exclude_unlabeled);

  char line[128];
  out << "class       acc      iou\n";
  for (int c = 0; c < cm.num_classes(); ++c) {
    std::snprintf(line, sizeof(line), "%-8d %7.4f  %7.4f\n", c, m.acc[c], m.iou[c]);
    out << line;
  }
  std::snprintf(line, sizeof(line), "mean     %7.4f  %7.4f  (%s)\n", m.macc, m.miou,
                f.exclude_unlabeled ? "class 0 excluded" : "all classes");
  out << line;

  if (!f.out.empty()) {
    const fs::path dir = ensure_out_dir(f.out);
    std::ofstream csv = open_out(dir / "metrics.csv");
    csv << "class,acc,iou\n";
    for (int c = 0; c < cm.num_classes(); ++c) {
      csv << c << "," << fmt(m.acc[c]) << "," << fmt(m.iou[c]) << "\n";
    }
    csv << "mean," << fmt(m.macc) << "," << fmt(m.miou) << "\n";
    std::ofstream conf = open_out(dir / "confusion.csv");
    conf << "gt\\pred";
    for (int p = 0; p < cm.num_classes(); ++p) conf << "," << p;
    conf << "\n";
    for (int g = 0; g < cm.num_classes(); ++g) {
      conf << g;
      for (int p = 0; p < cm.num_classes(); ++p) conf << "," << cm.at(g, p);
      conf << "\n";
    }
    if (f.save_pred) {
      fs::create_directories(dir / "pred");
      for (const SamplePair& s : samples) {
        const auto pred = net.predict(reshape(s.rgb, {1, 3, s.height(), s.width()}),
                                      reshape(s.thm, {1, 1, s.height(), s.width()}));
        write_png((dir / "pred" / (s.id + ".png")).string(), labels_to_image(pred[0]));
      }
    }
  }
  return kExitOk;
}

int cmd_bench(const Flags& f, std::ostream& out) {
  if (f.bench_trials < 1) throw ConfigError("trials", "--trials must be at least 1");
  std::optional<RsfNet> loaded;
  if (!f.checkpoint.empty()) {
    loaded.emplace(RsfNet::from_checkpoint(load_checkpoint(f.checkpoint)));
  } else {
    const Config cfg = resolve_config(f);
    Rng init = Rng::derive(cfg.train.seed, "init");
    loaded.emplace(cfg.model, init);
  }
  const RsfNet& net = *loaded;
  std::vector<std::pair<std::string, RsfNet>> variants;
  if (net.is_fused()) {
    out << "notice: checkpoint is fused; the multi-branch form is not available\n";
    variants.emplace_back("fused", net.clone());
  } else {
    variants.emplace_back("multi_branch", net.clone());
    RsfNet fused = net.clone();
    fused.fuse(f.tol);
    variants.emplace_back("fused", std::move(fused));
  }

  out << "FLOPs count 2 per multiply-accumulate; input " << f.height << "x" << f.width
      << ", batch 1\n";
  std::vector<CostReport> costs;
  std::vector<LatencyStats> latency;
  char line[160];
  for (auto& [name, model] : variants) {
    costs.push_back(count_cost(model, f.height, f.width));
    latency.push_back(bench_model(model, f.height, f.width, f.bench_trials, f.warmup,
                                  f.seed.value_or(0)));
    std::snprintf(line, sizeof(line),
                  "%-13s params %10" PRId64 "  flops %14" PRId64
                  "  mean %8.3f ms  p50 %8.3f  p95 %8.3f  sd %7.3f\n",
                  name.c_str(), costs.back().params, costs.back().flops,
                  latency.back().mean_ms, latency.back().p50_ms, latency.back().p95_ms,
                  latency.back().stddev_ms);
    out << line;
  }

  if (!f.out.empty()) {
    const fs::path dir = ensure_out_dir(f.out);
    // Counts are deterministic; wall-clock numbers live in their own file.
    std::ofstream cost = open_out(dir / "cost.csv");
    cost << "variant,layer,params,flops\n";
    for (std::size_t v = 0; v < variants.size(); ++v) {
      for (const LayerCost& l : costs[v].layers) {
        cost << variants[v].first << "," << l.name << "," << l.params << "," << l.flops
             << "\n";
      }
      cost << variants[v].first << ",total," << costs[v].params << "," << costs[v].flops
           << "\n";
    }
    std::ofstream lat = open_out(dir / "latency.csv");
    lat << "variant,trials,mean_ms,p50_ms,p95_ms,stddev_ms\n";
    for (std::size_t v = 0; v < variants.size(); ++v) {
      lat << variants[v].first << "," << latency[v].trials << "," << fmt(latency[v].mean_ms)
          << "," << fmt(latency[v].p50_ms) << "," << fmt(latency[v].p95_ms) << ","
          << fmt(latency[v].stddev_ms) << "\n";
    }
  }
  return kExitOk;
}

void add_config_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_path, "Config file (key = value lines)");
  sub->add_option("--set", f.overrides, "Override one config key, key=value (repeatable)");
  sub->add_option("--seed", f.seed, "Seed for every random stream");
  sub->add_flag("--fp64", f.fp64, "Run the model in float64");
}

void add_data_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--dataset", f.dataset, "Dataset root with rgb/, thm/, labels/");
  sub->add_option("--split", f.split, "Split file name without .txt")->capture_default_str();
  sub->add_option("--synthetic", f.synthetic, "Synthetic scenes: day or night");
  sub->add_option("--n", f.synthetic_n, "Synthetic sample count")->capture_default_str();
  sub->add_option("--size", f.synthetic_size, "Synthetic image side")->capture_default_str();
}

void add_plg_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--scales", f.scales, "Saliency box radii")
      ->delimiter(',')
      ->capture_default_str();
  sub->add_flag("--stretch-thermal", f.stretch_thermal,
                "Min-max stretch thermal before saliency");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"RGB-thermal segmentation with re-parameterized fusion"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  add_config_flags(synth, f);
  add_data_flags(synth, f);
  synth->add_option("--out", f.out, "Dataset root to write")->required();

  CLI::App* plg = app.add_subcommand("plg", "Pseudo-label CSV for a dataset");
  add_config_flags(plg, f);
  add_data_flags(plg, f);
  add_plg_flags(plg, f);
  plg->add_option("--out", f.out, "Output directory")->required();
  plg->add_flag("--saliency-png", f.saliency_png, "Also write saliency maps");

  CLI::App* train = app.add_subcommand("train", "Train on a dataset or synthetic scenes");
  add_config_flags(train, f);
  add_data_flags(train, f);
  add_plg_flags(train, f);
  train->add_option("--out", f.out, "Output directory")->required();

  CLI::App* fuse = app.add_subcommand("fuse", "Re-parameterize all fusion branch blocks");
  fuse->add_option("checkpoint", f.checkpoint, "Input checkpoint")->required();
  fuse->add_option("output", f.checkpoint_out, "Output checkpoint")->required();
  fuse->add_option("--tol", f.tol, "Max allowed |multi-branch - fused|")
      ->capture_default_str();
  fuse->add_option("--trials", f.fuse_trials, "Random inputs per block")->capture_default_str();
  fuse->add_option("--seed", f.seed, "Seed for the equivalence inputs");

  CLI::App* eval = app.add_subcommand("eval", "Per-class accuracy and IoU");
  eval->add_option("checkpoint", f.checkpoint, "Model checkpoint")->required();
  add_data_flags(eval, f);
  eval->add_option("--seed", f.seed, "Seed for synthetic scenes");
  eval->add_option("--out", f.out, "Write metrics.csv and confusion.csv here");
  eval->add_option("--batch-size", f.batch_size, "Inference batch")->capture_default_str();
  eval->add_flag("--exclude-unlabeled", f.exclude_unlabeled, "Leave class 0 out of the means");
  eval->add_flag("--save-pred", f.save_pred, "Write predicted label PNGs under --out");

  CLI::App* bench = app.add_subcommand("bench", "Parameter, FLOP and latency report");
  bench->add_option("checkpoint", f.checkpoint, "Checkpoint (default: config)");
  add_config_flags(bench, f);
  bench->add_option("--height", f.height, "Input height")->capture_default_str();
  bench->add_option("--width", f.width, "Input width")->capture_default_str();
  bench->add_option("--trials", f.bench_trials, "Timed runs per variant")
      ->capture_default_str();
  bench->add_option("--warmup", f.warmup, "Untimed runs first")->capture_default_str();
  bench->add_option("--tol", f.tol, "Fusion tolerance")->capture_default_str();
  bench->add_option("--out", f.out, "Write cost.csv and latency.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitInvalid;
  }

  try {
    if (synth->parsed()) return cmd_synth(f, out);
    if (plg->parsed()) return cmd_plg(f, out);
    if (train->parsed()) return cmd_train(f, out);
    if (fuse->parsed()) return cmd_fuse(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (bench->parsed()) return cmd_bench(f, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace rsf::cli
