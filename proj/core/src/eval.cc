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

#include "rsf/eval.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "rsf/parallel.h"

namespace rsf {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::int64_t out_extent(std::int64_t in, std::int64_t k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

void add(CostReport& r, LayerCost c) {
  r.params += c.params;
  r.flops += c.flops;
  r.layers.push_back(std::move(c));
}

void add_all(CostReport& r, const CostReport& other, const std::string& prefix) {
  for (LayerCost c : other.layers) {
    c.name = prefix + c.name;
    add(r, std::move(c));
  }
}

// Appends conv + BN and returns the output extents.
std::pair<std::int64_t, std::int64_t> conv_bn(CostReport& r, const std::string& name,
                                              const ConvBn& cb, std::int64_t h,
                                              std::int64_t w, bool count_flops = true) {
  const auto& c = cb.conv;
  const std::int64_t oh = out_extent(h, c.kernel_h(), c.stride[0], c.padding[0]);
  const std::int64_t ow = out_extent(w, c.kernel_w(), c.stride[1], c.padding[1]);
  LayerCost lc = conv_cost(c, oh, ow);
  LayerCost bn = batch_norm_cost(c.out_channels(), oh, ow);
  lc.name = name + ".conv";
  bn.name = name + ".bn";
  if (!count_flops) lc.flops = bn.flops = 0;
  add(r, std::move(lc));
  add(r, std::move(bn));
  return {oh, ow};
}

struct Extents {
  std::int64_t h, w;
};

std::array<Extents, 4> encoder_cost(CostReport& r, const std::string& prefix,
                                    const EncoderBranch& e, std::int64_t h,
                                    std::int64_t w) {
  auto [h1, w1] = conv_bn(r, prefix + ".stem1", e.stem1, h, w);
  auto [h2, w2] = conv_bn(r, prefix + ".stem2", e.stem2, h1, w1);
  std::array<Extents, 4> out;
  Extents cur{h2, w2};
  for (int s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < e.stages[s].size(); ++b) {
      const ResidualBlock& blk = e.stages[s][b];
      const std::string p = prefix + ".stage" + std::to_string(s + 1) + ".block" +
                            std::to_string(b);
      auto [ha, wa] = conv_bn(r, p + ".a", blk.a, cur.h, cur.w);
      conv_bn(r, p + ".b", blk.b, ha, wa);
      if (blk.shortcut) conv_bn(r, p + ".shortcut", *blk.shortcut, cur.h, cur.w);
      cur = {ha, wa};
    }
    out[s] = cur;
  }
  return out;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw Error("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::accumulate(const LabelMap& gt, const LabelMap& pred) {
  if (!gt.same_extents(pred)) {
    throw ShapeError("ConfusionMatrix: gt " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width) + " vs prediction " +
                     std::to_string(pred.height) + "x" + std::to_string(pred.width));
  }
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const std::int32_t g = gt.labels[i], p = pred.labels[i];
    if (g < 0 || g >= classes_ || p < 0 || p >= classes_) {
      throw Error("ConfusionMatrix: class index (gt " + std::to_string(g) +
                  ", pred " + std::to_string(p) + ") outside [0, " +
                  std::to_string(classes_) + ")");
    }
  }
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    ++counts_[gt.labels[i] * classes_ + pred.labels[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    throw ShapeError("ConfusionMatrix::merge: class counts differ");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::row_sum(int gt) const {
  std::int64_t s = 0;
  for (int p = 0; p < classes_; ++p) s += at(gt, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int g = 0; g < classes_; ++g) s += at(g, pred);
  return s;
}

SegMetrics macc_miou(const ConfusionMatrix& cm, bool include_unlabeled) {
  const int c = cm.num_classes();
  SegMetrics m;
  m.acc.assign(c, kNaN);
  m.iou.assign(c, kNaN);
  double acc_sum = 0.0, iou_sum = 0.0;
  int acc_n = 0, iou_n = 0;
  for (int k = 0; k < c; ++k) {
    const std::int64_t diag = cm.at(k, k), row = cm.row_sum(k), col = cm.col_sum(k);
    const std::int64_t uni = row + col - diag;
    if (row > 0) m.acc[k] = static_cast<double>(diag) / static_cast<double>(row);
    if (uni > 0) m.iou[k] = static_cast<double>(diag) / static_cast<double>(uni);
    if (uni == 0) m.excluded.push_back(k);
    if (k == 0 && !include_unlabeled) continue;
    if (row > 0) {
      acc_sum += m.acc[k];
      ++acc_n;
    }
    if (uni > 0) {
      iou_sum += m.iou[k];
      ++iou_n;
    }
  }
  m.macc = acc_n > 0 ? acc_sum / acc_n : 0.0;
  m.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
  return m;
}

ConfusionMatrix evaluate(const RsfNet& net, std::span<const SamplePair> samples,
                         int batch_size) {
  ConfusionMatrix cm(net.config().num_classes);
  std::vector<std::size_t> idx;
  auto flush = [&]() {
    if (idx.empty()) return;
    const SamplePair& first = samples[idx[0]];
    const std::int64_t n = static_cast<std::int64_t>(idx.size());
    const std::int64_t h = first.height(), w = first.width(), plane = h * w;
    std::vector<double> rgb(n * 3 * plane), thm(n * plane);
    for (std::int64_t i = 0; i < n; ++i) {
      const SamplePair& s = samples[idx[i]];
      std::copy(s.rgb.values().begin(), s.rgb.values().end(),
                rgb.begin() + i * 3 * plane);
      std::copy(s.thm.values().begin(), s.thm.values().end(),
                thm.begin() + i * plane);
    }
    auto pred = net.predict(Tensor::from_values({n, 3, h, w}, std::move(rgb)),
                            Tensor::from_values({n, 1, h, w}, std::move(thm)));
    for (std::int64_t i = 0; i < n; ++i) cm.accumulate(samples[idx[i]].gt, pred[i]);
    idx.clear();
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].validate(net.config().num_classes);
    if (!idx.empty() && (samples[i].height() != samples[idx[0]].height() ||
                         samples[i].width() != samples[idx[0]].width())) {
      flush();
    }
    idx.push_back(i);
    if (static_cast<int>(idx.size()) == batch_size) flush();
  }
  flush();
  return cm;
}

LayerCost conv_cost(const ConvParams& c, std::int64_t out_h, std::int64_t out_w) {
  LayerCost lc;
  lc.name = "conv";
  const std::int64_t outputs = c.out_channels() * out_h * out_w;
  const std::int64_t kdim = c.in_channels() * c.kernel_h() * c.kernel_w();
  lc.params = c.weight.numel() + (c.has_bias() ? c.bias.numel() : 0);
  lc.flops = outputs * (2 * kdim + (c.has_bias() ? 1 : 0));
  return lc;
}

LayerCost batch_norm_cost(std::int64_t channels, std::int64_t h, std::int64_t w) {
  return {"bn", 2 * channels, 2 * channels * h * w};
}

LayerCost linear_cost(std::int64_t in, std::int64_t out, bool bias) {
  return {"fc", in * out + (bias ? out : 0), out * (2 * in + (bias ? 1 : 0))};
}

CostReport branch_block_cost(const BranchBlockParams& b, std::int64_t h,
                             std::int64_t w) {
  CostReport r;
  conv_bn(r, "main", b.main, h, w);
  conv_bn(r, "pointwise", b.pointwise, h, w);
  for (const auto* seq : {&b.horizontal, &b.vertical}) {
    const std::string name = seq == &b.horizontal ? "horizontal" : "vertical";
    LayerCost pw = conv_cost(seq->pointwise, h, w);
    pw.name = name + ".pointwise";
    add(r, std::move(pw));
    conv_bn(r, name, {seq->spatial, seq->bn}, h, w);
  }
  return r;
}

CostReport count_cost(const RsfNet& net, std::int64_t h, std::int64_t w) {
  const ModelConfig& cfg = net.config();
  const RsfNetParams& p = net.params();
  CostReport r;
  const auto ext = encoder_cost(r, "encoder.rgb", p.rgb, h, w);
  encoder_cost(r, "encoder.thm", p.thm, h, w);
  for (int k = 0; k < 2; ++k) {
    const ConfidenceHeadParams& hp = k == 0 ? p.head_rgb : p.head_thm;
    const std::string prefix = k == 0 ? "head.rgb" : "head.thm";
    LayerCost fc1 = linear_cost(hp.fc1_weight.dim(1), hp.fc1_weight.dim(0), true);
    LayerCost fc2 = linear_cost(hp.fc2_weight.dim(1), hp.fc2_weight.dim(0), true);
    fc1.name = prefix + ".fc1";
    fc2.name = prefix + ".fc2";
    add(r, std::move(fc1));
    add(r, std::move(fc2));
  }
  const bool fusion_active = cfg.gate != GateMode::kFrozenZero;
  for (int s = 0; s < 4; ++s) {
    const std::string prefix = "rsf.stage" + std::to_string(s + 1);
    const RsfStageParams& st = p.rsf[s];
    const auto [sh, sw] = ext[s];
    for (int k = 0; k < 2; ++k) {
      const RecalParams& rc = k == 0 ? st.recal_rgb : st.recal_thm;
      const std::string name = prefix + (k == 0 ? ".recal_rgb" : ".recal_thm");
      const std::int64_t kk = rc.kernel.numel();
      add(r, {name + ".kernel", kk, 2 * kk * rc.reduce.in_channels()});
      LayerCost red = conv_cost(rc.reduce, sh, sw);
      red.name = name + ".reduce";
      add(r, std::move(red));
    }
    for (int k = 0; k < 2; ++k) {
      const FusionParams& f = k == 0 ? st.rgb : st.thm;
      const std::string name = prefix + (k == 0 ? ".rgb" : ".thm");
      conv_bn(r, name + ".squeeze", f.squeeze, sh, sw, fusion_active);
      if (f.fused) {
        LayerCost fc = conv_cost(*f.fused, sh, sw);
        fc.name = name + ".fused";
        if (!fusion_active) fc.flops = 0;
        add(r, std::move(fc));
      } else {
        CostReport block = branch_block_cost(f.block, sh, sw);
        if (!fusion_active) {
          for (LayerCost& c : block.layers) c.flops = 0;
        }
        add_all(r, block, name + ".block.");
      }
      LayerCost ex = conv_cost(f.expand, sh, sw);
      ex.name = name + ".expand";
      if (!fusion_active) ex.flops = 0;
      add(r, std::move(ex));
    }
  }
  for (int k = 0; k < 2; ++k) {
    for (std::size_t b = 0; b < p.decoder.streams[k].size(); ++b) {
      const int coarse = 3 - static_cast<int>(b);
      const DecoderBlock& blk = p.decoder.streams[k][b];
      const std::string name = std::string("decoder.") + (k == 0 ? "rgb" : "thm") +
                               ".block" + std::to_string(b);
      conv_bn(r, name + ".reduce", blk.reduce, ext[coarse].h, ext[coarse].w);
      conv_bn(r, name + ".refine1", blk.refine1, ext[coarse - 1].h, ext[coarse - 1].w);
      conv_bn(r, name + ".refine2", blk.refine2, ext[coarse - 1].h, ext[coarse - 1].w);
    }
  }
  LayerCost cls = conv_cost(p.decoder.classifier, ext[0].h, ext[0].w);
  cls.name = "decoder.classifier";
  add(r, std::move(cls));
  return r;
}

CostReport count_cost(const ModelConfig& cfg, std::int64_t h, std::int64_t w) {
  Rng rng(0);
  return count_cost(RsfNet(cfg, rng), h, w);
}

LatencyStats bench_latency(const std::function<void()>& fn, int trials, int warmup) {
  if (trials < 1) throw Error("bench_latency: trials must be >= 1");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  for (int i = 0; i < trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  LatencyStats st;
  st.trials = trials;
  st.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / trials;
  double ss = 0.0;
  for (double v : ms) ss += (v - st.mean_ms) * (v - st.mean_ms);
  st.stddev_ms = std::sqrt(ss / trials);
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  // Nearest-rank percentiles.
  auto pct = [&](double q) {
    const auto rank = static_cast<std::size_t>(std::ceil(q * trials));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
  };
  st.p50_ms = trials == 1 ? st.mean_ms : pct(0.5);
  st.p95_ms = trials == 1 ? st.mean_ms : pct(0.95);
  return st;
}

LatencyStats bench_model(const RsfNet& net, std::int64_t h, std::int64_t w,
                         int trials, int warmup, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "bench");
  const Tensor rgb = random_uniform({1, 3, h, w}, rng, 0.0, 1.0);
  const Tensor thm = random_uniform({1, 1, h, w}, rng, 0.0, 1.0);
  ScopedThreadCount single(1);
  return bench_latency([&] { net.predict(rgb, thm); }, trials, warmup);
}

}  // namespace rsf
