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

#include "rsf/model.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace rsf {
namespace {

const char* kModality[2] = {"rgb", "thm"};

Tensor param(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

ConvParams make_conv(std::int64_t ci, std::int64_t co, int kh, int kw,
                     int stride, bool bias, Rng& rng, DType dtype,
                     double gain = 2.0) {
  ConvParams c;
  const double std = std::sqrt(gain / static_cast<double>(ci * kh * kw));
  c.weight = param(random_normal({co, ci, kh, kw}, rng, std, dtype));
  if (bias) c.bias = param(Tensor::zeros({co}, dtype));
  c.stride = {stride, stride};
  c.padding = {kh / 2, kw / 2};
  return c;
}

BatchNormParams make_bn(std::int64_t channels, DType dtype) {
  BatchNormParams bn = BatchNormParams::identity(channels, 1e-5, dtype);
  bn.gamma.set_requires_grad(true);
  bn.beta.set_requires_grad(true);
  return bn;
}

ConvBn make_conv_bn(std::int64_t ci, std::int64_t co, int k, int stride,
                    Rng& rng, DType dtype) {
  return {make_conv(ci, co, k, k, stride, false, rng, dtype), make_bn(co, dtype)};
}

void fill_normal(Tensor& t, Rng& rng, double std) {
  for (double& v : t.mutable_values()) v = std * rng.normal();
  t.quantize();
}

EncoderBranch make_encoder(std::int64_t in_channels, const BranchConfig& bc,
                           const std::array<int, 4>& downsample, Rng& rng,
                           DType dtype) {
  EncoderBranch e;
  const std::int64_t w0 = bc.widths[0];
  const std::int64_t stem_mid = std::max<std::int64_t>(1, w0 / 2);
  const int s1 = downsample[0] >= 2 ? 2 : 1;
  const int s2 = downsample[0] == 4 ? 2 : 1;
  e.stem1 = make_conv_bn(in_channels, stem_mid, 3, s1, rng, dtype);
  e.stem2 = make_conv_bn(stem_mid, w0, 3, s2, rng, dtype);
  std::int64_t ci = w0;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t co = bc.widths[s];
    for (int b = 0; b < bc.blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? downsample[s] : 1;
      ResidualBlock blk;
      blk.a = make_conv_bn(ci, co, 3, stride, rng, dtype);
      blk.b = make_conv_bn(co, co, 3, 1, rng, dtype);
      if (stride != 1 || ci != co) {
        blk.shortcut = make_conv_bn(ci, co, 1, stride, rng, dtype);
      }
      e.stages[s].push_back(std::move(blk));
      ci = co;
    }
  }
  return e;
}

ConfidenceHeadParams make_head(std::int64_t c4, Rng& rng, DType dtype) {
  const std::int64_t hidden = std::max<std::int64_t>(1, c4 / 4);
  ConfidenceHeadParams h;
  h.fc1_weight = param(random_normal({hidden, c4}, rng,
                                     std::sqrt(2.0 / static_cast<double>(c4)), dtype));
  h.fc1_bias = param(Tensor::zeros({hidden}, dtype));
  h.fc2_weight = param(random_normal(
      {1, hidden}, rng, std::sqrt(1.0 / static_cast<double>(hidden)), dtype));
  h.fc2_bias = param(Tensor::zeros({1}, dtype));
  return h;
}

RecalParams make_recal(std::int64_t cs, std::int64_t reduced, int k, Rng& rng,
                       DType dtype) {
  RecalParams r;
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  r.kernel = param(random_uniform({k}, rng, -bound, bound, dtype));
  r.reduce = make_conv(cs, reduced, 1, 1, 1, true, rng, dtype);
  return r;
}

FusionParams make_fusion(std::int64_t reduced, std::int64_t inner, int k,
                         Rng& rng, DType dtype) {
  FusionParams f;
  f.squeeze = make_conv_bn(reduced, inner, 1, 1, rng, dtype);
  f.block = BranchBlockParams::zeros(inner, k, dtype);
  auto he = [&](Tensor& w) {
    fill_normal(w, rng, std::sqrt(2.0 / static_cast<double>(w.numel() / w.dim(0))));
    w.set_requires_grad(true);
  };
  auto bn = [](BatchNormParams& b) {
    b.gamma.set_requires_grad(true);
    b.beta.set_requires_grad(true);
  };
  BranchBlockParams& b = f.block;
  he(b.main.conv.weight);
  he(b.pointwise.conv.weight);
  he(b.horizontal.pointwise.weight);
  he(b.horizontal.spatial.weight);
  he(b.vertical.pointwise.weight);
  he(b.vertical.spatial.weight);
  bn(b.main.bn);
  bn(b.pointwise.bn);
  bn(b.horizontal.bn);
  bn(b.vertical.bn);
  f.expand = make_conv(2 * inner, reduced, 1, 1, 1, true, rng, dtype);
  return f;
}

void require_nchw(const Tensor& x, std::int64_t channels, const char* what) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError(std::string(what) + ": expected [N, " +
                     std::to_string(channels) + ", H, W], got " +
                     shape_str(x.shape()));
  }
}

Tensor as_gate(const Tensor& conf, std::int64_t n) {
  if (conf.numel() != n) {
    throw ShapeError("rsf_forward: confidence has " + std::to_string(conf.numel()) +
                     " entries for a batch of " + std::to_string(n));
  }
  return reshape(conf, {n, 1, 1, 1});
}

// Visiting helpers. Undefined tensors (absent biases) are skipped.
struct Walker {
  const TensorVisitor& fn;

  void tensor(const std::string& name, Tensor& t, TensorRole role) const {
    if (t.defined()) fn(name, t, role);
  }
  void conv(const std::string& prefix, ConvParams& c) const {
    tensor(prefix + ".weight", c.weight, TensorRole::kParameter);
    tensor(prefix + ".bias", c.bias, TensorRole::kParameter);
  }
  void bn(const std::string& prefix, BatchNormParams& b) const {
    tensor(prefix + ".gamma", b.gamma, TensorRole::kParameter);
    tensor(prefix + ".beta", b.beta, TensorRole::kParameter);
    tensor(prefix + ".running_mean", b.running_mean, TensorRole::kBuffer);
    tensor(prefix + ".running_var", b.running_var, TensorRole::kBuffer);
  }
  void conv_bn(const std::string& prefix, ConvBn& c) const {
    conv(prefix + ".conv", c.conv);
    bn(prefix + ".bn", c.bn);
  }
  void seq(const std::string& prefix, SeqConvBn& s) const {
    conv(prefix + ".pointwise", s.pointwise);
    conv(prefix + ".spatial", s.spatial);
    bn(prefix + ".bn", s.bn);
  }
  void encoder(const std::string& prefix, EncoderBranch& e) const {
    conv_bn(prefix + ".stem1", e.stem1);
    conv_bn(prefix + ".stem2", e.stem2);
    for (int s = 0; s < 4; ++s) {
      for (std::size_t b = 0; b < e.stages[s].size(); ++b) {
        const std::string p = prefix + ".stage" + std::to_string(s + 1) +
                              ".block" + std::to_string(b);
        ResidualBlock& blk = e.stages[s][b];
        conv_bn(p + ".a", blk.a);
        conv_bn(p + ".b", blk.b);
        if (blk.shortcut) conv_bn(p + ".shortcut", *blk.shortcut);
      }
    }
  }
  void head(const std::string& prefix, ConfidenceHeadParams& h) const {
    tensor(prefix + ".fc1.weight", h.fc1_weight, TensorRole::kParameter);
    tensor(prefix + ".fc1.bias", h.fc1_bias, TensorRole::kParameter);
    tensor(prefix + ".fc2.weight", h.fc2_weight, TensorRole::kParameter);
    tensor(prefix + ".fc2.bias", h.fc2_bias, TensorRole::kParameter);
  }
  void recal(const std::string& prefix, RecalParams& r) const {
    tensor(prefix + ".kernel", r.kernel, TensorRole::kParameter);
    conv(prefix + ".reduce", r.reduce);
  }
  void fusion(const std::string& prefix, FusionParams& f) const {
    conv_bn(prefix + ".squeeze", f.squeeze);
    if (f.fused) {
      conv(prefix + ".fused", *f.fused);
    } else {
      conv_bn(prefix + ".block.main", f.block.main);
      conv_bn(prefix + ".block.pointwise", f.block.pointwise);
      seq(prefix + ".block.horizontal", f.block.horizontal);
      seq(prefix + ".block.vertical", f.block.vertical);
    }
    conv(prefix + ".expand", f.expand);
  }
};

void write_list(Checkpoint& ckpt, const std::string& name,
                const std::array<int, 4>& v) {
  ckpt.add(name, Tensor::from_values({4}, {static_cast<double>(v[0]),
                                           static_cast<double>(v[1]),
                                           static_cast<double>(v[2]),
                                           static_cast<double>(v[3])}));
}

std::array<int, 4> read_list(const Checkpoint& ckpt, const std::string& name) {
  const Tensor& t = ckpt.get(name);
  if (t.numel() != 4) {
    throw CheckpointError(CheckpointErrc::kShapeMismatch, name + " must hold 4 values");
  }
  return {static_cast<int>(t[0]), static_cast<int>(t[1]), static_cast<int>(t[2]),
          static_cast<int>(t[3])};
}

}  // namespace

RsfStageParams make_rsf_stage(std::int64_t c_rgb, std::int64_t c_thm,
                              std::int64_t reduced, std::int64_t inner, int kernel,
                              int recal_kernel, Rng& rng, DType dtype) {
  RsfStageParams st;
  st.recal_rgb = make_recal(c_rgb, reduced, recal_kernel, rng, dtype);
  st.recal_thm = make_recal(c_thm, reduced, recal_kernel, rng, dtype);
  st.rgb = make_fusion(reduced, inner, kernel, rng, dtype);
  st.thm = make_fusion(reduced, inner, kernel, rng, dtype);
  return st;
}

Tensor conv_bn_relu(const Tensor& x, const ConvBn& p, bool training) {
  return relu(batch_norm(conv2d(x, p.conv), p.bn, training));
}

Tensor residual_forward(const Tensor& x, const ResidualBlock& p, bool training) {
  Tensor out = conv_bn_relu(x, p.a, training);
  out = batch_norm(conv2d(out, p.b.conv), p.b.bn, training);
  Tensor skip = p.shortcut
                    ? batch_norm(conv2d(x, p.shortcut->conv), p.shortcut->bn, training)
                    : x;
  return relu(add(out, skip));
}

std::array<Tensor, 4> encode_branch(const Tensor& x, const EncoderBranch& p,
                                    bool training) {
  Tensor h = conv_bn_relu(x, p.stem1, training);
  h = conv_bn_relu(h, p.stem2, training);
  std::array<Tensor, 4> out;
  for (int s = 0; s < 4; ++s) {
    for (const ResidualBlock& blk : p.stages[s]) h = residual_forward(h, blk, training);
    out[s] = h;
  }
  return out;
}

std::array<StageFeatures, 4> encoder_forward(const Tensor& rgb, const Tensor& thm,
                                             const EncoderBranch& enc_rgb,
                                             const EncoderBranch& enc_thm,
                                             const ModelConfig& cfg,
                                             bool training) {
  require_nchw(rgb, 3, "encoder_forward (rgb)");
  require_nchw(thm, 1, "encoder_forward (thm)");
  if (rgb.dim(0) != thm.dim(0) || rgb.dim(2) != thm.dim(2) ||
      rgb.dim(3) != thm.dim(3)) {
    throw ShapeError("encoder_forward: rgb " + shape_str(rgb.shape()) +
                     " and thm " + shape_str(thm.shape()) +
                     " disagree in batch or extents");
  }
  const std::int64_t d = cfg.divisor();
  if (rgb.dim(2) % d != 0 || rgb.dim(3) % d != 0) {
    throw ShapeError("encoder_forward: input extents " +
                     std::to_string(rgb.dim(2)) + "x" + std::to_string(rgb.dim(3)) +
                     " are not multiples of " + std::to_string(d));
  }
  auto fr = encode_branch(rgb.to(cfg.dtype), enc_rgb, training);
  auto ft = encode_branch(thm.to(cfg.dtype), enc_thm, training);
  std::array<StageFeatures, 4> out;
  for (int s = 0; s < 4; ++s) {
    if (fr[s].dim(2) != ft[s].dim(2) || fr[s].dim(3) != ft[s].dim(3)) {
      throw ShapeError("encoder_forward: stage " + std::to_string(s + 1) +
                       " extents differ between branches");
    }
    out[s] = {fr[s], ft[s]};
  }
  return out;
}

Tensor confidence_head(const Tensor& f4, const ConfidenceHeadParams& p) {
  Tensor g = global_avg_pool(f4);
  Tensor h = relu(linear(g, p.fc1_weight, p.fc1_bias));
  Tensor o = linear(h, p.fc2_weight, p.fc2_bias);
  return reshape(sigmoid(o), {f4.dim(0)});
}

Tensor feature_recalibration(const Tensor& f, const RecalParams& p) {
  require_nchw(f, p.reduce.in_channels(), "feature_recalibration");
  Tensor w = sigmoid(conv1d_channel(global_avg_pool(f), p.kernel));
  Tensor weighted = mul(f, reshape(w, {f.dim(0), f.dim(1), 1, 1}));
  return conv2d(weighted, p.reduce);
}

Tensor fusion_spatial_weight(const Tensor& z, const FusionParams& p,
                             bool training) {
  return sigmoid(p.fused ? conv2d(z, *p.fused) : branch_forward(z, p.block, training));
}

std::pair<Tensor, Tensor> rsf_forward(const Tensor& rf_rgb, const Tensor& rf_thm,
                                      const Tensor& conf_rgb,
                                      const Tensor& conf_thm,
                                      const RsfStageParams& p, GateMode gate,
                                      bool training) {
  if (rf_rgb.shape() != rf_thm.shape()) {
    throw ShapeError("rsf_forward: recalibrated features differ: " +
                     shape_str(rf_rgb.shape()) + " vs " + shape_str(rf_thm.shape()));
  }
  require_nchw(rf_rgb, p.rgb.expand.out_channels(), "rsf_forward");
  if (gate == GateMode::kFrozenZero) return {rf_rgb, rf_thm};
  const std::int64_t n = rf_rgb.dim(0);
  Tensor z_rgb = conv_bn_relu(rf_rgb, p.rgb.squeeze, training);
  Tensor z_thm = conv_bn_relu(rf_thm, p.thm.squeeze, training);
  Tensor w_rgb = fusion_spatial_weight(z_thm, p.rgb, training);
  Tensor w_thm = fusion_spatial_weight(z_rgb, p.thm, training);
  Tensor zh_rgb = conv2d(concat_channels({mul(z_rgb, w_rgb), z_rgb}), p.rgb.expand);
  Tensor zh_thm = conv2d(concat_channels({mul(z_thm, w_thm), z_thm}), p.thm.expand);
  const bool counterpart = gate == GateMode::kCounterpart;
  Tensor g_rgb = as_gate(counterpart ? conf_thm : conf_rgb, n);
  Tensor g_thm = as_gate(counterpart ? conf_rgb : conf_thm, n);
  return {add(rf_rgb, mul(zh_rgb, g_rgb)), add(rf_thm, mul(zh_thm, g_thm))};
}

Tensor decoder_forward(const std::vector<std::pair<Tensor, Tensor>>& enhanced,
                       const DecoderParams& p, std::int64_t out_h,
                       std::int64_t out_w, bool training) {
  if (enhanced.size() != 4) {
    throw ShapeError("decoder_forward: expected 4 stages, got " +
                     std::to_string(enhanced.size()));
  }
  Tensor streams[2];
  for (int k = 0; k < 2; ++k) {
    if (p.streams[k].size() != 3) {
      throw ShapeError("decoder_forward: each stream needs 3 blocks");
    }
    auto pick = [&](int s) { return k == 0 ? enhanced[s].first : enhanced[s].second; };
    Tensor x = pick(3);
    for (int s = 3; s >= 1; --s) {
      const DecoderBlock& blk = p.streams[k][3 - s];
      const Tensor skip = pick(s - 1);
      x = conv_bn_relu(x, blk.reduce, training);
      if (x.dim(2) != skip.dim(2) || x.dim(3) != skip.dim(3)) {
        x = bilinear_resize(x, skip.dim(2), skip.dim(3));
      }
      x = add(x, skip);
      x = conv_bn_relu(x, blk.refine1, training);
      x = conv_bn_relu(x, blk.refine2, training);
    }
    streams[k] = x;
  }
  Tensor logits = conv2d(add(streams[0], streams[1]), p.classifier);
  if (logits.dim(2) != out_h || logits.dim(3) != out_w) {
    logits = bilinear_resize(logits, out_h, out_w);
  }
  return logits;
}

RsfNet::RsfNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const DType dt = cfg_.dtype;
  p_.rgb = make_encoder(3, cfg_.rgb, cfg_.downsample, rng, dt);
  p_.thm = make_encoder(1, cfg_.thm, cfg_.downsample, rng, dt);
  p_.head_rgb = make_head(cfg_.rgb.widths[3], rng, dt);
  p_.head_thm = make_head(cfg_.thm.widths[3], rng, dt);
  for (int s = 0; s < 4; ++s) {
    p_.rsf[s] = make_rsf_stage(cfg_.rgb.widths[s], cfg_.thm.widths[s],
                               cfg_.reduced[s], cfg_.inner, cfg_.kernel,
                               cfg_.recal_kernel, rng, dt);
  }
  for (int k = 0; k < 2; ++k) {
    for (int s = 3; s >= 1; --s) {
      const std::int64_t coarse = cfg_.reduced[s], fine = cfg_.reduced[s - 1];
      p_.decoder.streams[k].push_back({make_conv_bn(coarse, fine, 3, 1, rng, dt),
                                       make_conv_bn(fine, fine, 3, 1, rng, dt),
                                       make_conv_bn(fine, fine, 3, 1, rng, dt)});
    }
  }
  p_.decoder.classifier =
      make_conv(cfg_.reduced[0], cfg_.num_classes, 1, 1, 1, true, rng, dt, 1.0);
}

ForwardResult RsfNet::forward(const Tensor& rgb, const Tensor& thm,
                              bool training) const {
  auto stages = encoder_forward(rgb, thm, p_.rgb, p_.thm, cfg_, training);
  ForwardResult r;
  r.conf_rgb = confidence_head(stages[3].f_rgb, p_.head_rgb);
  r.conf_thm = confidence_head(stages[3].f_thm, p_.head_thm);
  std::vector<std::pair<Tensor, Tensor>> enhanced;
  for (int s = 0; s < 4; ++s) {
    Tensor rf_rgb = feature_recalibration(stages[s].f_rgb, p_.rsf[s].recal_rgb);
    Tensor rf_thm = feature_recalibration(stages[s].f_thm, p_.rsf[s].recal_thm);
    enhanced.push_back(rsf_forward(rf_rgb, rf_thm, r.conf_rgb, r.conf_thm,
                                   p_.rsf[s], cfg_.gate, training));
  }
  r.logits = decoder_forward(enhanced, p_.decoder, rgb.dim(2), rgb.dim(3), training);
  r.probs = cfg_.seg_activation == SegActivation::kSoftmax ? softmax_channels(r.logits)
                                                            : sigmoid(r.logits);
  return r;
}

std::vector<LabelMap> RsfNet::predict(const Tensor& rgb, const Tensor& thm) const {
  NoGradGuard no_grad;
  return argmax_labels(forward(rgb, thm, false).probs);
}

void RsfNet::visit(const TensorVisitor& fn) {
  Walker w{fn};
  w.encoder("encoder.rgb", p_.rgb);
  w.encoder("encoder.thm", p_.thm);
  w.head("head.rgb", p_.head_rgb);
  w.head("head.thm", p_.head_thm);
  for (int s = 0; s < 4; ++s) {
    const std::string prefix = "rsf.stage" + std::to_string(s + 1);
    w.recal(prefix + ".recal_rgb", p_.rsf[s].recal_rgb);
    w.recal(prefix + ".recal_thm", p_.rsf[s].recal_thm);
    w.fusion(prefix + ".rgb", p_.rsf[s].rgb);
    w.fusion(prefix + ".thm", p_.rsf[s].thm);
  }
  for (int k = 0; k < 2; ++k) {
    for (std::size_t b = 0; b < p_.decoder.streams[k].size(); ++b) {
      const std::string prefix = std::string("decoder.") + kModality[k] + ".block" +
                                 std::to_string(b);
      DecoderBlock& blk = p_.decoder.streams[k][b];
      w.conv_bn(prefix + ".reduce", blk.reduce);
      w.conv_bn(prefix + ".refine1", blk.refine1);
      w.conv_bn(prefix + ".refine2", blk.refine2);
    }
  }
  w.conv("decoder.classifier", p_.decoder.classifier);
}

std::vector<Tensor> RsfNet::parameters() {
  std::vector<Tensor> out;
  visit([&](const std::string&, Tensor& t, TensorRole role) {
    if (role == TensorRole::kParameter) out.push_back(t);
  });
  return out;
}

std::int64_t RsfNet::parameter_count() {
  std::int64_t n = 0;
  for (const Tensor& t : parameters()) n += t.numel();
  return n;
}

void RsfNet::zero_parameters() {
  for (Tensor& t : parameters()) {
    for (double& v : t.mutable_values()) v = 0.0;
  }
}

FuseReport RsfNet::fuse(double tol, int trials, std::uint64_t seed) {
  FuseReport rep = report_.value_or(FuseReport{});
  rep.tolerance = tol;
  rep.trials = trials;
  for (int s = 0; s < 4; ++s) {
    for (int k = 0; k < 2; ++k) {
      FusionParams& f = k == 0 ? p_.rsf[s].rgb : p_.rsf[s].thm;
      if (f.fused) continue;
      ConvParams fused = fuse_branch_block(f.block);
      const EquivalenceReport eq = verify_equivalence(
          f.block, fused, trials, tol, mix_seed(seed, "fuse") + 2 * s + k);
      rep.blocks += 1;
      rep.max_abs_deviation = std::max(rep.max_abs_deviation, eq.max_abs_deviation);
      rep.max_scaled_deviation =
          std::max(rep.max_scaled_deviation, eq.max_scaled_deviation);
      rep.passed = rep.passed && eq.passed;
      fused.weight.set_requires_grad(true);
      fused.bias.set_requires_grad(true);
      f.fused = std::move(fused);
      const int kernel = f.block.kernel;
      f.block = BranchBlockParams{};
      f.block.kernel = kernel;
    }
  }
  report_ = rep;
  return rep;
}

bool RsfNet::is_fused() const {
  for (const RsfStageParams& st : p_.rsf) {
    if (!st.rgb.fused || !st.thm.fused) return false;
  }
  return true;
}

RsfNet RsfNet::clone() const { return from_checkpoint(to_checkpoint()); }

void write_model_config(const ModelConfig& cfg, Checkpoint& ckpt) {
  ckpt.add_scalar("config/num_classes", cfg.num_classes);
  write_list(ckpt, "config/rgb_widths", cfg.rgb.widths);
  write_list(ckpt, "config/rgb_blocks", cfg.rgb.blocks);
  write_list(ckpt, "config/thm_widths", cfg.thm.widths);
  write_list(ckpt, "config/thm_blocks", cfg.thm.blocks);
  write_list(ckpt, "config/downsample", cfg.downsample);
  write_list(ckpt, "config/reduced_dims", cfg.reduced);
  ckpt.add_scalar("config/inner_dim", cfg.inner);
  ckpt.add_scalar("config/kernel", cfg.kernel);
  ckpt.add_scalar("config/recal_kernel", cfg.recal_kernel);
  ckpt.add_scalar("config/gate", static_cast<double>(cfg.gate));
  ckpt.add_scalar("config/seg_activation", static_cast<double>(cfg.seg_activation));
  ckpt.add_scalar("config/dtype", static_cast<double>(cfg.dtype));
}

ModelConfig read_model_config(const Checkpoint& ckpt) {
  ModelConfig cfg;
  cfg.num_classes = static_cast<int>(ckpt.get_scalar("config/num_classes"));
  cfg.rgb.widths = read_list(ckpt, "config/rgb_widths");
  cfg.rgb.blocks = read_list(ckpt, "config/rgb_blocks");
  cfg.thm.widths = read_list(ckpt, "config/thm_widths");
  cfg.thm.blocks = read_list(ckpt, "config/thm_blocks");
  cfg.downsample = read_list(ckpt, "config/downsample");
  cfg.reduced = read_list(ckpt, "config/reduced_dims");
  cfg.inner = static_cast<int>(ckpt.get_scalar("config/inner_dim"));
  cfg.kernel = static_cast<int>(ckpt.get_scalar("config/kernel"));
  cfg.recal_kernel = static_cast<int>(ckpt.get_scalar("config/recal_kernel"));
  const int gate = static_cast<int>(ckpt.get_scalar("config/gate"));
  const int act = static_cast<int>(ckpt.get_scalar("config/seg_activation"));
  const int dtype = static_cast<int>(ckpt.get_scalar("config/dtype"));
  if (gate < 0 || gate > 2 || act < 0 || act > 1 || dtype < 0 || dtype > 1) {
    throw CheckpointError(CheckpointErrc::kShapeMismatch,
                          "config enum value out of range");
  }
  cfg.gate = static_cast<GateMode>(gate);
  cfg.seg_activation = static_cast<SegActivation>(act);
  cfg.dtype = static_cast<DType>(dtype);
  return cfg;
}

Checkpoint RsfNet::to_checkpoint() const {
  Checkpoint ckpt;
  write_model_config(cfg_, ckpt);
  const_cast<RsfNet*>(this)->visit(
      [&](const std::string& name, Tensor& t, TensorRole) { ckpt.add(name, t); });
  if (report_) {
    ckpt.add_scalar("fuse_report/blocks", report_->blocks);
    ckpt.add_scalar("fuse_report/max_abs_deviation", report_->max_abs_deviation);
    ckpt.add_scalar("fuse_report/max_scaled_deviation", report_->max_scaled_deviation);
    ckpt.add_scalar("fuse_report/tolerance", report_->tolerance);
    ckpt.add_scalar("fuse_report/trials", report_->trials);
    ckpt.add_scalar("fuse_report/passed", report_->passed ? 1.0 : 0.0);
  }
  return ckpt;
}

RsfNet RsfNet::from_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig cfg = read_model_config(ckpt);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointErrc::kShapeMismatch,
                          std::string("stored config invalid: ") + e.what());
  }
  Rng rng(0);
  RsfNet net(cfg, rng);
  for (int s = 0; s < 4; ++s) {
    for (int k = 0; k < 2; ++k) {
      const std::string prefix =
          "rsf.stage" + std::to_string(s + 1) + "." + kModality[k] + ".fused";
      if (!ckpt.contains(prefix + ".weight")) continue;
      FusionParams& f = k == 0 ? net.p_.rsf[s].rgb : net.p_.rsf[s].thm;
      const int kernel = f.block.kernel;
      ConvParams fused;
      fused.weight = Tensor::zeros({cfg.inner, cfg.inner, kernel, kernel}, cfg.dtype);
      fused.bias = Tensor::zeros({cfg.inner}, cfg.dtype);
      fused.padding = {kernel / 2, kernel / 2};
      f.fused = fused;
      f.block = BranchBlockParams{};
      f.block.kernel = kernel;
    }
  }
  std::set<std::string> consumed;
  net.visit([&](const std::string& name, Tensor& t, TensorRole role) {
    if (!ckpt.contains(name)) {
      throw CheckpointError(CheckpointErrc::kMissingName,
                            "checkpoint lacks '" + name + "'");
    }
    const Tensor& src = ckpt.get(name);
    if (src.shape() != t.shape() || src.dtype() != t.dtype()) {
      throw CheckpointError(CheckpointErrc::kShapeMismatch,
                            "'" + name + "' stored as " + shape_str(src.shape()) +
                                " " + dtype_name(src.dtype()) + ", model expects " +
                                shape_str(t.shape()) + " " + dtype_name(t.dtype()));
    }
    auto dst = t.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
    t.set_requires_grad(role == TensorRole::kParameter);
    consumed.insert(name);
  });
  for (const auto& e : ckpt.entries()) {
    if (e.name.starts_with("config/") || e.name.starts_with("fuse_report/")) continue;
    if (!consumed.count(e.name)) {
      throw CheckpointError(CheckpointErrc::kUnknownName,
                            "checkpoint entry '" + e.name + "' has no model slot");
    }
  }
  if (ckpt.contains("fuse_report/blocks")) {
    FuseReport rep;
    rep.blocks = static_cast<int>(ckpt.get_scalar("fuse_report/blocks"));
    rep.max_abs_deviation = ckpt.get_scalar("fuse_report/max_abs_deviation");
    rep.max_scaled_deviation = ckpt.get_scalar("fuse_report/max_scaled_deviation");
    rep.tolerance = ckpt.get_scalar("fuse_report/tolerance");
    rep.trials = static_cast<int>(ckpt.get_scalar("fuse_report/trials"));
    rep.passed = ckpt.get_scalar("fuse_report/passed") != 0.0;
    net.report_ = rep;
  }
  return net;
}

std::vector<LabelMap> argmax_labels(const Tensor& scores) {
  if (scores.rank() != 4) {
    throw ShapeError("argmax_labels: expected [N, C, H, W], got " +
                     shape_str(scores.shape()));
  }
  const std::int64_t n = scores.dim(0), c = scores.dim(1), h = scores.dim(2),
                     w = scores.dim(3), plane = h * w;
  auto v = scores.values();
  std::vector<LabelMap> out;
  for (std::int64_t b = 0; b < n; ++b) {
    LabelMap m(h, w, 0);
    const double* base = v.data() + b * c * plane;
    for (std::int64_t q = 0; q < plane; ++q) {
      int best = 0;
      for (std::int64_t k = 1; k < c; ++k) {
        if (base[k * plane + q] > base[best * plane + q]) best = static_cast<int>(k);
      }
      m.labels[q] = best;
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace rsf
