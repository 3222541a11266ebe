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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cli.h"
#include "rsf/checkpoint.h"
#include "rsf/dataset.h"
#include "rsf/eval.h"
#include "rsf/model.h"
#include "rsf/plg.h"
#include "rsf/reparam.h"
#include "rsf/train.h"
#include "rsf/trainer.h"
#include "support/gradcheck.h"
#include "support/plg_oracles.h"

namespace rsf {
namespace {

namespace fs = std::filesystem;

// Outcome of one criterion. `detail` carries the measured numbers.
struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch_dir() {
  fs::path dir = fs::temp_directory_path() / "rsf_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Toy model in float32 whose branch blocks carry random BN statistics, so
// fusion is non-trivial.
RsfNet random_toy_model(std::uint64_t seed) {
  Rng rng(seed);
  RsfNet net(ModelConfig::toy(), rng);
  for (auto& st : net.params().rsf) {
    const std::int64_t c = st.rgb.block.channels();
    const int k = st.rgb.block.kernel;
    st.rgb.block = BranchBlockParams::random(c, k, rng, DType::kFloat32);
    st.thm.block = BranchBlockParams::random(c, k, rng, DType::kFloat32);
  }
  return net;
}

// Labels of `a` and `b` on 100 random 32x32 inputs; returns mismatching
// images and records the largest logit gap.
int argmax_mismatches(const RsfNet& a, const RsfNet& b, std::uint64_t seed,
                      double* worst_logit) {
  Rng in(seed);
  int mismatches = 0;
  *worst_logit = 0.0;
  NoGradGuard no_grad;
  for (int chunk = 0; chunk < 10; ++chunk) {
    const Tensor rgb = random_uniform({10, 3, 32, 32}, in, 0, 1);
    const Tensor thm = random_uniform({10, 1, 32, 32}, in, 0, 1);
    *worst_logit = std::max(*worst_logit, max_abs_diff(a.forward(rgb, thm, false).logits,
                                                       b.forward(rgb, thm, false).logits));
    const auto la = a.predict(rgb, thm);
    const auto lb = b.predict(rgb, thm);
    for (std::size_t i = 0; i < la.size(); ++i) mismatches += la[i] == lb[i] ? 0 : 1;
  }
  return mismatches;
}

// Max |branch_forward - conv2d(fused)| on random inputs.
double block_deviation(const BranchBlockParams& b, const ConvParams& fused, Rng& rng,
                       int trials = 2) {
  double worst = 0.0;
  NoGradGuard no_grad;
  for (int t = 0; t < trials; ++t) {
    const Tensor x = random_normal({2, b.channels(), 9, 7}, rng, 1.0, b.dtype());
    worst = std::max(worst, max_abs_diff(branch_forward(x, b, false), conv2d(x, fused)));
  }
  return worst;
}

// ---- 1. Re-parameterization equivalence ----
Outcome reparam_equivalence() {
  Outcome o;
  Rng rng(101);
  double worst32 = 0.0, worst64 = 0.0;
  int blocks = 0;
  for (int i = 0; i < 200; ++i) {
    const std::int64_t c = 4 + rng.uniform_int(13);
    const int k = 3 + 2 * static_cast<int>(rng.uniform_int(3));
    for (DType dt : {DType::kFloat32, DType::kFloat64}) {
      const BranchBlockParams b = BranchBlockParams::random(c, k, rng, dt);
      const double d = block_deviation(b, fuse_branch_block(b), rng);
      (dt == DType::kFloat32 ? worst32 : worst64) =
          std::max(dt == DType::kFloat32 ? worst32 : worst64, d);
      ++blocks;
    }
  }
  o.check(worst32 <= 1e-5, "float32 deviation " + fmt("%.3g", worst32) + " > 1e-5");
  o.check(worst64 <= 1e-10, "float64 deviation " + fmt("%.3g", worst64) + " > 1e-10");

  RsfNet net = random_toy_model(102);
  RsfNet fused = net.clone();
  fused.fuse();
  double logit_gap = 0.0;
  const int mismatches = argmax_mismatches(net, fused, 103, &logit_gap);
  o.check(mismatches == 0, std::to_string(mismatches) + " of 100 label maps differ");
  o.note(std::to_string(blocks) + " blocks, max dev f32 " + fmt("%.3g", worst32) +
         " f64 " + fmt("%.3g", worst64) + ", 100 label maps, logit gap " +
         fmt("%.3g", logit_gap));
  return o;
}

// ---- 2. Gradient correctness ----
Tensor weighted_sum(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

// Uniform draws kept at least 0.05 away from `kink` so that piecewise ops are
// differentiable at every probed point.
Tensor away_from(Shape shape, Rng& rng, double kink) {
  Tensor t = random_uniform(shape, rng);
  for (double& v : t.mutable_values()) {
    if (std::abs(v - kink) < 0.05) v = kink + (v < kink ? -0.05 : 0.05);
  }
  return t;
}

Outcome gradient_correctness() {
  Outcome o;
  Rng rng(201);
  double worst_op = 0.0;
  std::string worst_name;
  int ops = 0;
  auto op = [&](const std::string& name, const std::function<Tensor()>& f,
                std::vector<Tensor> params) {
    const auto res = testing::check_gradients(f, std::move(params));
    ++ops;
    if (res.max_rel_error > worst_op) {
      worst_op = res.max_rel_error;
      worst_name = name;
    }
    o.check(res.max_rel_error <= 1e-6,
            name + " rel error " + fmt("%.3g", res.max_rel_error));
  };

  {
    auto x = random_uniform({2, 3, 6, 5}, rng);
    for (int v = 0; v < 3; ++v) {
      ConvParams p;
      p.weight = random_uniform({4, 3, 3, 1 + 2 * (v % 2)}, rng);
      if (v != 1) p.bias = random_uniform({4}, rng);
      p.stride = {1 + v % 2, 1 + v / 2};
      p.padding = {v, 1};
      auto r = random_uniform(conv2d(x, p).shape(), rng);
      std::vector<Tensor> ps{x, p.weight};
      if (p.has_bias()) ps.push_back(p.bias);
      op("conv2d", [&] { return weighted_sum(conv2d(x, p), r); }, ps);
    }
  }
  {
    auto v = random_uniform({2, 7}, rng);
    auto k = random_uniform({5}, rng);
    auto r = random_uniform({2, 7}, rng);
    op("conv1d_channel", [&] { return weighted_sum(conv1d_channel(v, k), r); }, {v, k});
  }
  auto x = random_uniform({2, 3, 4, 5}, rng);
  {
    auto r = random_uniform({2, 3}, rng);
    op("global_avg_pool", [&] { return weighted_sum(global_avg_pool(x), r); }, {x});
    auto r_dn = random_uniform({2, 3, 3, 2}, rng);
    op("bilinear_resize", [&] { return weighted_sum(bilinear_resize(x, 3, 2), r_dn); },
       {x});
    auto r_up = random_uniform({2, 3, 8, 11}, rng);
    op("bilinear_resize", [&] { return weighted_sum(bilinear_resize(x, 8, 11), r_up); },
       {x});
  }
  {
    auto p = BatchNormParams::identity(3);
    p.gamma = random_uniform({3}, rng, 0.5, 1.5);
    p.beta = random_uniform({3}, rng);
    p.running_mean = random_uniform({3}, rng);
    p.running_var = random_uniform({3}, rng, 0.5, 2.0);
    auto r = random_uniform(x.shape(), rng);
    for (bool training : {true, false}) {
      op(training ? "batch_norm(train)" : "batch_norm(infer)",
         [&] { return weighted_sum(batch_norm(x, p, training), r); },
         {x, p.gamma, p.beta});
    }
  }
  {
    auto a = random_uniform({2, 3, 2, 2}, rng);
    auto b = random_uniform({2, 3, 2, 2}, rng);
    auto w = random_uniform({1, 3, 1, 1}, rng);
    auto r = random_uniform({2, 3, 2, 2}, rng);
    op("add", [&] { return weighted_sum(add(a, w), r); }, {a, w});
    op("sub", [&] { return weighted_sum(sub(w, b), r); }, {w, b});
    op("mul", [&] { return weighted_sum(mul(a, w), r); }, {a, w});
    op("scale", [&] { return weighted_sum(scale(a, -1.7), r); }, {a});
    auto k = away_from({2, 3, 2, 2}, rng, 0.0);
    op("relu", [&] { return weighted_sum(relu(k), r); }, {k});
    op("sigmoid", [&] { return weighted_sum(sigmoid(scale(a, 3.0)), r); }, {a});
    auto rc = random_uniform({2, 6, 2, 2}, rng);
    op("concat_channels", [&] { return weighted_sum(concat_channels({a, b}), rc); },
       {a, b});
    auto rs = random_uniform({2, 2, 2, 2}, rng);
    op("slice_channels", [&] { return weighted_sum(slice_channels(a, 1, 2), rs); }, {a});
    op("softmax_channels", [&] { return weighted_sum(softmax_channels(a), r); }, {a});
    auto rr = random_uniform({4, 6}, rng);
    op("reshape", [&] { return weighted_sum(reshape(a, {4, 6}), rr); }, {a});
    op("sum", [&] { return sum(mul(a, a)); }, {a});
    op("mean", [&] { return mean(mul(a, b)); }, {a, b});
  }
  {
    auto in = random_uniform({3, 4}, rng);
    auto fw = random_uniform({5, 4}, rng);
    auto fb = random_uniform({5}, rng);
    auto r = random_uniform({3, 5}, rng);
    op("linear", [&] { return weighted_sum(linear(in, fw, fb), r); }, {in, fw, fb});
  }
  {
    auto logits = random_uniform({2, 3, 3, 4}, rng, -2, 2);
    std::vector<LabelMap> labels(2, LabelMap(3, 4));
    for (auto& m : labels)
      for (auto& l : m.labels) l = static_cast<std::int32_t>(rng.uniform_int(3));
    const std::vector<double> w{1.3, 4.0, 2.2};
    op("segmentation_loss",
       [&] { return segmentation_loss(softmax_channels(logits), labels, w); }, {logits});
    auto e = away_from({2, 5}, rng, 0.0);
    for (double& v : e.mutable_values()) v += 1.0;  // [0, 2], clear of the branch at 1
    auto r = random_uniform({2, 5}, rng);
    op("smooth_l1", [&] { return weighted_sum(smooth_l1(e), r); }, {e});
    auto cr = random_uniform({3}, rng, -3, 3);
    auto ct = random_uniform({3}, rng, -3, 3);
    const std::vector<PseudoLabelPair> targets{{0.9, 0.1}, {0.0, 1.0}, {0.5, 0.5}};
    op("regression_loss",
       [&] { return regression_loss(sigmoid(cr), sigmoid(ct), targets); }, {cr, ct});
  }

  // End-to-end: small float64 model, full training loss.
  ModelConfig c;
  c.num_classes = 2;
  c.rgb = {{4, 4, 6, 6}, {1, 1, 1, 1}};
  c.thm = {{2, 4, 4, 4}, {1, 1, 1, 1}};
  c.downsample = {2, 2, 2, 1};
  c.reduced = {4, 4, 4, 4};
  c.inner = 2;
  c.kernel = 3;
  c.dtype = DType::kFloat64;
  Rng init(202);
  RsfNet net(c, init);
  Rng in(203);
  Batch batch{random_uniform({2, 3, 16, 16}, in, 0, 1),
              random_uniform({2, 1, 16, 16}, in, 0, 1),
              {LabelMap(16, 16, 0), LabelMap(16, 16, 0)},
              {{0.2, 0.7}, {0.4, 0.1}}};
  for (int i = 0; i < 256; ++i) {
    batch.labels[0].labels[i] = (i / 16 + i % 16) % 5 == 0;
    batch.labels[1].labels[i] = (i % 16) > 9;
  }
  const std::vector<double> weights = class_weights(std::vector<double>{0.7, 0.3});
  // Many entries have gradients near 1e-7, which need the larger step; the
  // smaller one covers entries whose larger step straddles a ReLU kink.
  const auto e2e = testing::check_gradients_steps(
      [&] { return compute_loss(net, batch, weights, 0.3).total; }, net.parameters(),
      {1e-4, 1e-5}, 1e-6, 4);
  o.check(e2e.max_rel_error <= 1e-4,
          "end-to-end rel error " + fmt("%.3g", e2e.max_rel_error));
  o.note(std::to_string(ops) + " op checks, worst " + fmt("%.3g", worst_op) + " (" +
         worst_name + "), end-to-end " + fmt("%.3g", e2e.max_rel_error) + " over " +
         std::to_string(e2e.checked) + " entries");
  return o;
}

// ---- 3. Pseudo-label oracles ----
Outcome plg_oracles() {
  Outcome o;
  Rng rng(301);
  int otsu_bad = 0;
  for (int t = 0; t < 50; ++t) {
    const int h = 8 + static_cast<int>(rng.uniform_int(17));
    const int w = 8 + static_cast<int>(rng.uniform_int(17));
    // Two or three clusters of random spread, clipped to 8 bits.
    const int clusters = 2 + static_cast<int>(rng.uniform_int(2));
    std::vector<double> centers, spreads;
    for (int k = 0; k < clusters; ++k) {
      centers.push_back(rng.uniform(0, 255));
      spreads.push_back(rng.uniform(1, 40));
    }
    std::vector<int> pixels(h * w);
    std::vector<double> vals(h * w);
    for (int i = 0; i < h * w; ++i) {
      const auto k = rng.uniform_int(clusters);
      const double v = std::round(centers[k] + spreads[k] * rng.normal());
      pixels[i] = static_cast<int>(std::clamp(v, 0.0, 255.0));
      vals[i] = pixels[i];
    }
    const OtsuResult r = otsu_binarize(SaliencyMap{Tensor::from_values({h, w}, vals)});
    const int want = testing::brute_force_otsu(pixels);
    bool ok = r.threshold == want;
    for (int i = 0; i < h * w && ok; ++i) ok = r.mask.values[i] == (pixels[i] > want ? 1.0 : 0.0);
    otsu_bad += ok ? 0 : 1;
  }
  o.check(otsu_bad == 0, std::to_string(otsu_bad) + " Otsu mismatches");

  int iou_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + static_cast<int>(rng.uniform_int(20));
    const int w = 1 + static_cast<int>(rng.uniform_int(20));
    const double pa = rng.uniform(), pb = rng.uniform();
    std::vector<int> a(h * w), b(h * w);
    std::vector<double> av(h * w), bv(h * w);
    for (int i = 0; i < h * w; ++i) {
      a[i] = rng.bernoulli(pa);
      b[i] = rng.bernoulli(pb);
      av[i] = a[i];
      bv[i] = b[i];
    }
    const double got = iou_score(BinaryMask{Tensor::from_values({h, w}, av)},
                                 BinaryMask{Tensor::from_values({h, w}, bv)});
    iou_bad += got == testing::brute_force_iou(a, b) ? 0 : 1;
  }
  o.check(iou_bad == 0, std::to_string(iou_bad) + " IoU mismatches");

  // Ground truth built as the binarized thermal saliency itself.
  const int h = 32, w = 32;
  std::vector<double> heat(h * w, 20.0);
  for (int y = 12; y < 18; ++y)
    for (int x = 10; x < 19; ++x) heat[y * w + x] = 230.0;
  const Tensor thm = Tensor::from_values({1, h, w}, heat);
  const PlgOptions opts;
  const BinaryMask mask =
      otsu_binarize(fine_grained_saliency(intensity_from_plane(thm),
                                          clip_scales(opts.scales, h, w)))
          .mask;
  LabelMap gt(h, w, 0);
  for (int i = 0; i < h * w; ++i) gt.labels[i] = mask.values[i] != 0.0 ? 2 : 0;
  const PseudoLabelPair p =
      generate_pseudo_labels(Tensor::full({3, h, w}, 128.0), thm, gt, 3, opts);
  o.check(p.p_thm == 1.0, "perfect overlap gave " + fmt("%.17g", p.p_thm));
  o.note("50 Otsu maps, 100 IoU pairs, perfect overlap p=" + fmt("%.17g", p.p_thm));
  return o;
}

// ---- 4. Loss spot values ----
Outcome loss_spot_values() {
  Outcome o;
  const double w95 = class_weight(0.95);
  const double w0 = class_weight(0.0);
  o.check(std::abs(w95 - 1.442695) <= 1e-5, "weight(0.95) = " + fmt("%.9g", w95));
  o.check(std::abs(w0 - 20.49573) <= 1e-3, "weight(0) = " + fmt("%.9g", w0));
  const double jump = std::abs(smooth_l1(std::nextafter(1.0, 0.0)) - smooth_l1(1.0));
  o.check(jump <= 1e-12, "smooth-L1 jump at 1 = " + fmt("%.3g", jump));
  double worst_lr = 0.0;
  for (double lr0 : {1.0, 0.01, 0.25}) {
    worst_lr = std::max(worst_lr, std::abs(poly_lr(lr0, 500, 1000) / lr0 - 0.535887));
  }
  o.check(worst_lr <= 1e-5, "poly lr off by " + fmt("%.3g", worst_lr));
  o.note("weight(0.95)=" + fmt("%.7f", w95) + " weight(0)=" + fmt("%.5f", w0) +
         " jump=" + fmt("%.3g", jump) + " poly=" + fmt("%.6f", poly_lr(1.0, 500, 1000)));
  return o;
}

// ---- 5. Gate behavior ----
double train_and_score(GateMode gate, const std::vector<SamplePair>& data) {
  ModelConfig mc;
  mc.num_classes = kSyntheticClasses;
  mc.gate = gate;
  TrainConfig tc;  // 500 steps, batch 4, lr 0.01, augmentation, seed 0
  Rng init = Rng::derive(tc.seed, "init");
  RsfNet net(mc, init);
  train_model(net, data, tc);
  return macc_miou(evaluate(net, data)).miou;
}

Outcome gate_behavior() {
  Outcome o;
  Rng rng(501);
  RsfStageParams st = make_rsf_stage(8, 8, 8, 4, 5, 3, rng, DType::kFloat32);
  st.rgb.block = BranchBlockParams::random(4, 5, rng, DType::kFloat32);
  st.thm.block = BranchBlockParams::random(4, 5, rng, DType::kFloat32);
  const Tensor f_rgb = random_normal({2, 8, 8, 8}, rng, 1.0, DType::kFloat32);
  const Tensor f_thm = random_normal({2, 8, 8, 8}, rng, 1.0, DType::kFloat32);
  const Tensor zero = Tensor::zeros({2}, DType::kFloat32);
  bool identity = true;
  for (GateMode g : {GateMode::kCounterpart, GateMode::kOwn, GateMode::kFrozenZero}) {
    for (bool training : {false, true}) {
      auto [a, b] = rsf_forward(f_rgb, f_thm, zero, zero, st, g, training);
      for (std::int64_t i = 0; i < a.numel(); ++i) {
        identity = identity && a[i] == f_rgb[i] && b[i] == f_thm[i];
      }
    }
  }
  o.check(identity, "closed gates changed the features");

  const TrainConfig defaults;
  std::vector<SamplePair> data =
      make_synthetic_dataset(16, defaults.seed, SceneMode::kNight);
  attach_pseudo_labels(data, kSyntheticClasses);
  const double gated = train_and_score(GateMode::kCounterpart, data);
  const double frozen = train_and_score(GateMode::kFrozenZero, data);
  o.check(gated >= 0.80, "gated mIoU " + fmt("%.4f", gated) + " < 0.80");
  o.check(gated > frozen, "gated mIoU " + fmt("%.4f", gated) + " <= frozen " +
                              fmt("%.4f", frozen));
  o.note("bitwise identity at zero confidence, gated mIoU " + fmt("%.4f", gated) +
         " vs frozen " + fmt("%.4f", frozen));
  return o;
}

// ---- 6. Cost accounting ----
ConvParams make_conv(std::int64_t co, std::int64_t ci, int kh, int kw, bool bias) {
  ConvParams c;
  c.weight = Tensor::zeros({co, ci, kh, kw});
  if (bias) c.bias = Tensor::zeros({co});
  c.padding = {kh / 2, kw / 2};
  return c;
}

Outcome cost_accounting() {
  Outcome o;
  auto expect = [&](const LayerCost& got, std::int64_t params, std::int64_t flops,
                    const std::string& what) {
    o.check(got.params == params && got.flops == flops,
            what + " gave " + std::to_string(got.params) + "/" + std::to_string(got.flops));
  };
  expect(conv_cost(make_conv(1, 1, 1, 1, false), 1, 1), 1, 2, "1x1 conv");
  expect(conv_cost(make_conv(4, 2, 3, 3, true), 8, 8), 76, 9216 + 256, "3x3 conv");
  expect(conv_cost(make_conv(6, 3, 1, 5, false), 4, 7), 90, 2 * 15 * 6 * 28, "1x5 conv");
  expect(batch_norm_cost(8, 4, 4), 16, 256, "batch norm");
  expect(linear_cost(64, 16, true), 1040, 16 * 129, "linear");

  // Multi-branch block with bias-free convs: KxK, 1x1, and two 1x1 -> 1xK
  // chains, four batch norms. Fused: one KxK conv with bias.
  bool fewer = true;
  for (std::int64_t c : {4, 8, 16}) {
    for (int k : {3, 5, 7}) {
      const std::int64_t h = 6, w = 10, hw = h * w;
      const BranchBlockParams b = BranchBlockParams::zeros(c, k);
      const CostReport multi = branch_block_cost(b, h, w);
      const std::int64_t weights = c * c * (k * k + 1 + 2 * (1 + k));
      const std::string tag = "C=" + std::to_string(c) + " K=" + std::to_string(k);
      o.check(multi.params == weights + 8 * c, tag + " multi-branch params");
      o.check(multi.flops == hw * (2 * weights + 8 * c), tag + " multi-branch FLOPs");
      const LayerCost fused = conv_cost(fuse_branch_block(b), h, w);
      o.check(fused.params == c * c * k * k + c, tag + " fused params");
      o.check(fused.flops == hw * c * (2 * c * k * k + 1), tag + " fused FLOPs");
      fewer = fewer && fused.params < multi.params && fused.flops < multi.flops;
    }
  }
  o.check(fewer, "fused block not cheaper");

  // Whole model: the cost report matches what an actual forward pass tallies.
  RsfNet net = random_toy_model(601);
  RsfNet fused_net = net.clone();
  fused_net.fuse();
  for (const RsfNet* m : {&net, &fused_net}) {
    Rng in(602);
    FlopCounter counter;
    NoGradGuard no_grad;
    m->forward(random_uniform({1, 3, 64, 96}, in, 0, 1),
               random_uniform({1, 1, 64, 96}, in, 0, 1), false);
    o.check(count_cost(*m, 64, 96).flops == counter.flops(),
            "count_cost disagrees with executed FLOPs");
  }
  const CostReport a = count_cost(net, 64, 96);
  const CostReport f = count_cost(fused_net, 64, 96);
  o.check(f.params < a.params && f.flops < a.flops, "fused model not cheaper");
  o.note("closed forms exact; toy model multi-branch " + std::to_string(a.params) +
         " params " + std::to_string(a.flops) + " FLOPs, fused " +
         std::to_string(f.params) + " params " + std::to_string(f.flops) + " FLOPs");
  return o;
}

// ---- 7. Persistence ----
Outcome persistence(const fs::path& dir) {
  Outcome o;
  RsfNet net = random_toy_model(701);
  const std::string path = (dir / "model.rsfc").string();
  const Checkpoint saved = net.to_checkpoint();
  save_checkpoint(saved, path);
  const Checkpoint loaded = RsfNet::from_checkpoint(load_checkpoint(path)).to_checkpoint();
  bool exact = saved.size() == loaded.size();
  for (std::size_t i = 0; exact && i < saved.size(); ++i) {
    const auto& a = saved.entries()[i];
    const auto& b = loaded.entries()[i];
    exact = a.name == b.name && a.value.dtype() == b.value.dtype() &&
            a.value.shape() == b.value.shape() &&
            std::equal(a.value.values().begin(), a.value.values().end(),
                       b.value.values().begin());
  }
  o.check(exact, "model round trip not bit-exact");
  save_checkpoint(loaded, (dir / "again.rsfc").string());
  o.check(slurp(path) == slurp(dir / "again.rsfc"), "re-saved file differs");

  RsfNet fused = net.clone();
  fused.fuse();
  const std::string fused_path = (dir / "fused.rsfc").string();
  save_checkpoint(fused.to_checkpoint(), fused_path);
  const RsfNet reloaded = RsfNet::from_checkpoint(load_checkpoint(fused_path));
  o.check(reloaded.is_fused(), "reloaded model is not fused");

  // Criterion 1 on the reloaded kernels against the original branch blocks.
  Rng rng(702);
  double worst = 0.0;
  for (int s = 0; s < 4; ++s) {
    for (int m = 0; m < 2; ++m) {
      const FusionParams& orig = m == 0 ? net.params().rsf[s].rgb : net.params().rsf[s].thm;
      const FusionParams& back =
          m == 0 ? reloaded.params().rsf[s].rgb : reloaded.params().rsf[s].thm;
      if (!back.fused) {
        o.check(false, "missing fused kernel");
        continue;
      }
      worst = std::max(worst, block_deviation(orig.block, *back.fused, rng, 5));
    }
  }
  o.check(worst <= 1e-5, "reloaded fused deviation " + fmt("%.3g", worst));
  double logit_gap = 0.0;
  const int mismatches = argmax_mismatches(net, reloaded, 703, &logit_gap);
  o.check(mismatches == 0, std::to_string(mismatches) + " of 100 label maps differ");
  o.note(std::to_string(saved.size()) + " tensors bit-exact, reloaded fused deviation " +
         fmt("%.3g", worst) + ", 100 label maps identical");
  return o;
}

// ---- 8. Determinism ----
int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rsf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

Outcome determinism(const fs::path& dir) {
  Outcome o;
  const std::string data = (dir / "night").string();
  o.check(cli({"synth", "--synthetic", "night", "--n", "6", "--size", "32", "--seed", "3",
               "--out", data}) == cli::kExitOk,
          "synth failed");
  for (const char* run : {"a", "b"}) {
    o.check(cli({"train", "--synthetic", "night", "--n", "6", "--size", "32", "--seed", "5",
                 "--set", "steps=20", "--out", (dir / "train" / run).string()}) ==
                cli::kExitOk,
            "train failed");
    o.check(cli({"plg", "--dataset", data, "--out", (dir / "plg" / run).string()}) ==
                cli::kExitOk,
            "plg failed");
  }
  const std::string log_a = slurp(dir / "train/a/loss_log.csv");
  o.check(!log_a.empty() && log_a == slurp(dir / "train/b/loss_log.csv"),
          "loss logs differ");
  const std::string csv_a = slurp(dir / "plg/a/pseudo_labels.csv");
  o.check(!csv_a.empty() && csv_a == slurp(dir / "plg/b/pseudo_labels.csv"),
          "pseudo-label CSVs differ");
  o.note("loss logs (" + std::to_string(std::count(log_a.begin(), log_a.end(), '\n')) +
         " lines) and pseudo-label CSVs byte-identical");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace rsf

int main() {
  using namespace rsf;
  const fs::path dir = scratch_dir();
  const std::vector<Criterion> criteria = {
      {1, "re-parameterization equivalence", 120, reparam_equivalence},
      {2, "gradient correctness", 300, gradient_correctness},
      {3, "pseudo-label oracles", 0, plg_oracles},
      {4, "loss spot values", 0, loss_spot_values},
      {5, "gate behavior", 600, gate_behavior},
      {6, "cost accounting", 0, cost_accounting},
      {7, "persistence", 0, [&] { return persistence(dir); }},
      {8, "determinism", 0, [&] { return determinism(dir); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0) {
      o.check(secs < c.budget_s, "runtime " + fmt("%.1f", secs) + " s over budget " +
                                     fmt("%.0f", c.budget_s) + " s");
    }
    std::printf("criterion %d %s: %s (%s; %.1f s)\n", c.id, c.name,
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  fs::remove_all(dir);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
