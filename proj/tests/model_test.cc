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

#include <gtest/gtest.h>

#include <cmath>

#include "rsf/model.h"
#include "rsf/train.h"
#include "support/golden.h"
#include "support/gradcheck.h"

namespace rsf {
namespace {

ModelConfig f64_toy() {
  ModelConfig c = ModelConfig::toy();
  c.dtype = DType::kFloat64;
  return c;
}

// Two-class model small enough for finite differences at 16x16. Many entries
// have gradients near 1e-7, so the step is 1e-4 to keep roundoff below the
// truncation error.
ModelConfig tiny_config() {
  ModelConfig c;
  c.num_classes = 2;
  c.rgb = {{4, 4, 6, 6}, {1, 1, 1, 1}};
  c.thm = {{2, 4, 4, 4}, {1, 1, 1, 1}};
  c.downsample = {2, 2, 2, 1};
  c.reduced = {4, 4, 4, 4};
  c.inner = 2;
  c.kernel = 3;
  c.dtype = DType::kFloat64;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void expect_close_rel(const Tensor& got, const Tensor& want, double tol,
                      const std::string& what) {
  ASSERT_EQ(got.shape(), want.shape()) << what;
  for (std::int64_t i = 0; i < got.numel(); ++i) {
    ASSERT_NEAR(got[i], want[i], tol * std::max(1.0, std::abs(want[i])))
        << what << " entry " << i;
  }
}

TEST(EncoderTest, ToyStageExtentsAndWidths) {
  Rng rng(1);
  RsfNet net(ModelConfig::toy(), rng);
  Rng in(2);
  auto stages = encoder_forward(random_uniform({2, 3, 64, 64}, in, 0, 1),
                                random_uniform({2, 1, 64, 64}, in, 0, 1),
                                net.params().rgb, net.params().thm, net.config(),
                                false);
  const std::int64_t extents[4] = {16, 8, 4, 2};
  for (int s = 0; s < 4; ++s) {
    EXPECT_EQ(stages[s].f_rgb.shape(),
              (Shape{2, net.config().rgb.widths[s], extents[s], extents[s]}));
    EXPECT_EQ(stages[s].f_thm.shape(),
              (Shape{2, net.config().thm.widths[s], extents[s], extents[s]}));
  }
}

TEST(EncoderTest, RejectsIndivisibleExtents) {
  Rng rng(1);
  RsfNet net(ModelConfig::toy(), rng);
  EXPECT_EQ(net.config().divisor(), 32);
  EXPECT_THROW(encoder_forward(Tensor::zeros({1, 3, 48, 64}),
                               Tensor::zeros({1, 1, 48, 64}), net.params().rgb,
                               net.params().thm, net.config(), false),
               ShapeError);
  EXPECT_THROW(encoder_forward(Tensor::zeros({1, 3, 64, 64}),
                               Tensor::zeros({1, 1, 32, 32}), net.params().rgb,
                               net.params().thm, net.config(), false),
               ShapeError);
}

TEST(EncoderTest, ZeroInputGivesZeroFeatures) {
  Rng rng(3);
  RsfNet net(ModelConfig::toy(), rng);
  auto stages = encoder_forward(Tensor::zeros({1, 3, 32, 32}),
                                Tensor::zeros({1, 1, 32, 32}), net.params().rgb,
                                net.params().thm, net.config(), false);
  for (const auto& st : stages) {
    for (double v : st.f_rgb.values()) ASSERT_EQ(v, 0.0);
    for (double v : st.f_thm.values()) ASSERT_EQ(v, 0.0);
  }
}

class GoldenTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    want_ = new testing::GoldenMap(
        testing::read_golden(std::string(RSF_FIXTURE_DIR) + "/golden.txt"));
    got_ = new testing::GoldenMap(testing::compute_golden());
  }
  static void TearDownTestSuite() {
    delete want_;
    delete got_;
  }
  void compare_prefix(const std::string& prefix) {
    int matched = 0;
    for (const auto& [name, t] : *want_) {
      if (name.rfind(prefix, 0) != 0) continue;
      ASSERT_TRUE(got_->count(name)) << name;
      expect_close_rel(got_->at(name), t, 1e-9, name);
      ++matched;
    }
    EXPECT_GT(matched, 0);
  }
  static testing::GoldenMap* want_;
  static testing::GoldenMap* got_;
};
testing::GoldenMap* GoldenTest::want_ = nullptr;
testing::GoldenMap* GoldenTest::got_ = nullptr;

TEST_F(GoldenTest, EncoderStages) { compare_prefix("encoder."); }
TEST_F(GoldenTest, FusionStage) { compare_prefix("rsf."); }
TEST_F(GoldenTest, FullModel) { compare_prefix("model."); }

TEST(ConfidenceHeadTest, ZeroWeightsGiveOneHalf) {
  ConfidenceHeadParams p{Tensor::zeros({4, 16}), Tensor::zeros({4}),
                         Tensor::zeros({1, 4}), Tensor::zeros({1})};
  Rng rng(4);
  Tensor out = confidence_head(random_normal({3, 16, 2, 2}, rng), p);
  EXPECT_EQ(out.shape(), (Shape{3}));
  for (double v : out.values()) EXPECT_EQ(v, 0.5);
  p.fc2_bias = Tensor::from_values({1}, {10.0});
  out = confidence_head(random_normal({3, 16, 2, 2}, rng), p);
  for (double v : out.values()) EXPECT_NEAR(v, 1.0 / (1.0 + std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(out[0], 0.99995, 1e-5);
}

TEST(ConfidenceHeadTest, OutputStrictlyInsideUnitInterval) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    ConfidenceHeadParams p{random_normal({2, 8}, rng), random_normal({2}, rng),
                           random_normal({1, 2}, rng), random_normal({1}, rng)};
    Tensor out = confidence_head(random_normal({2, 8, 3, 3}, rng, 2.0), p);
    for (double v : out.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(ConfidenceHeadTest, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  ConfidenceHeadParams p{random_normal({3, 8}, rng), random_normal({3}, rng),
                         random_normal({1, 3}, rng), random_normal({1}, rng)};
  const Tensor f4 = random_normal({2, 8, 2, 2}, rng);
  auto res = testing::check_gradients(
      [&] { return sum(confidence_head(f4, p)); },
      {p.fc1_weight, p.fc1_bias, p.fc2_weight, p.fc2_bias}, 1e-6, 1e-8);
  EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
}

TEST(RecalibrationTest, ZeroKernelHalvesInput) {
  Rng rng(7);
  RecalParams p;
  p.kernel = Tensor::zeros({3});
  p.reduce.weight = random_normal({4, 6, 1, 1}, rng);
  p.reduce.bias = random_normal({4}, rng);
  const Tensor f = random_normal({2, 6, 3, 3}, rng);
  const Tensor got = feature_recalibration(f, p);
  const Tensor want = conv2d(scale(f, 0.5), p.reduce);
  EXPECT_EQ(max_abs_diff(got, want), 0.0);
}

TEST(RecalibrationTest, SaturatedSelfWeightPassesFeaturesThrough) {
  RecalParams p;
  p.kernel = Tensor::from_values({3}, {0.0, 50.0, 0.0});
  p.reduce.weight = Tensor::from_values({1, 2, 1, 1}, {1.0, 1.0});
  const Tensor f = Tensor::full({1, 2, 2, 2}, 3.0);
  const Tensor got = feature_recalibration(f, p);
  for (double v : got.values()) EXPECT_NEAR(v, 6.0, 1e-12);
}

TEST(RecalibrationTest, DefaultStageOneReducesTo64Channels) {
  const ModelConfig full = ModelConfig::full();
  EXPECT_EQ(full.reduced, (std::array<int, 4>{64, 128, 256, 256}));
  EXPECT_EQ(full.inner, 64);
  EXPECT_EQ(full.kernel, 5);
  Rng rng(8);
  RsfStageParams st = make_rsf_stage(full.rgb.widths[0], full.thm.widths[0],
                                     full.reduced[0], full.inner, full.kernel,
                                     full.recal_kernel, rng, DType::kFloat32);
  const Tensor f = random_normal({1, 256, 4, 4}, rng, 1.0, DType::kFloat32);
  EXPECT_EQ(feature_recalibration(f, st.recal_rgb).shape(), (Shape{1, 64, 4, 4}));
}

struct FusionFixture {
  RsfStageParams st;
  Tensor rf_rgb, rf_thm;
  explicit FusionFixture(DType dtype = DType::kFloat64, std::uint64_t seed = 9) {
    Rng rng(seed);
    st = make_rsf_stage(8, 8, 8, 4, 3, 3, rng, dtype);
    st.rgb.block = BranchBlockParams::random(4, 3, rng, dtype);
    st.thm.block = BranchBlockParams::random(4, 3, rng, dtype);
    rf_rgb = random_normal({2, 8, 6, 6}, rng, 1.0, dtype);
    rf_thm = random_normal({2, 8, 6, 6}, rng, 1.0, dtype);
  }
};

TEST(RsfForwardTest, ClosedGateIsIdentityBitwise) {
  FusionFixture fx;
  const Tensor zero = Tensor::zeros({2});
  for (GateMode g : {GateMode::kCounterpart, GateMode::kOwn, GateMode::kFrozenZero}) {
    auto [a, b] = rsf_forward(fx.rf_rgb, fx.rf_thm, zero, zero, fx.st, g, false);
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      ASSERT_EQ(a[i], fx.rf_rgb[i]);
      ASSERT_EQ(b[i], fx.rf_thm[i]);
    }
  }
}

TEST(RsfForwardTest, OpenGateAddsFusedTerm) {
  FusionFixture fx;
  const Tensor one = Tensor::full({2}, 1.0);
  auto [a, b] =
      rsf_forward(fx.rf_rgb, fx.rf_thm, one, one, fx.st, GateMode::kCounterpart, false);
  // Rebuild the fused terms from the primitives.
  const Tensor z_rgb = conv_bn_relu(fx.rf_rgb, fx.st.rgb.squeeze, false);
  const Tensor z_thm = conv_bn_relu(fx.rf_thm, fx.st.thm.squeeze, false);
  const Tensor w_rgb = sigmoid(branch_forward(z_thm, fx.st.rgb.block, false));
  const Tensor w_thm = sigmoid(branch_forward(z_rgb, fx.st.thm.block, false));
  const Tensor zh_rgb =
      conv2d(concat_channels({mul(z_rgb, w_rgb), z_rgb}), fx.st.rgb.expand);
  const Tensor zh_thm =
      conv2d(concat_channels({mul(z_thm, w_thm), z_thm}), fx.st.thm.expand);
  EXPECT_EQ(max_abs_diff(a, add(fx.rf_rgb, zh_rgb)), 0.0);
  EXPECT_EQ(max_abs_diff(b, add(fx.rf_thm, zh_thm)), 0.0);
}

TEST(RsfForwardTest, GateWiringFollowsMode) {
  FusionFixture fx;
  const Tensor lo = Tensor::from_values({2}, {0.0, 0.0});
  const Tensor hi = Tensor::from_values({2}, {1.0, 1.0});
  // Counterpart: rgb gated by thm confidence.
  auto [a, b] =
      rsf_forward(fx.rf_rgb, fx.rf_thm, lo, hi, fx.st, GateMode::kCounterpart, false);
  EXPECT_GT(max_abs_diff(a, fx.rf_rgb), 0.0);
  EXPECT_EQ(max_abs_diff(b, fx.rf_thm), 0.0);
  auto [c, d] = rsf_forward(fx.rf_rgb, fx.rf_thm, lo, hi, fx.st, GateMode::kOwn, false);
  EXPECT_EQ(max_abs_diff(c, fx.rf_rgb), 0.0);
  EXPECT_GT(max_abs_diff(d, fx.rf_thm), 0.0);
}

TEST(RsfForwardTest, FusedBlocksAgreeInFloat32) {
  FusionFixture fx(DType::kFloat32, 10);
  const Tensor conf_rgb = Tensor::from_values({2}, {0.4, 0.9});
  const Tensor conf_thm = Tensor::from_values({2}, {0.6, 0.2});
  auto [a, b] = rsf_forward(fx.rf_rgb, fx.rf_thm, conf_rgb, conf_thm, fx.st,
                            GateMode::kCounterpart, false);
  RsfStageParams fused = fx.st;
  fused.rgb.fused = fuse_branch_block(fused.rgb.block);
  fused.thm.fused = fuse_branch_block(fused.thm.block);
  auto [c, d] = rsf_forward(fx.rf_rgb, fx.rf_thm, conf_rgb, conf_thm, fused,
                            GateMode::kCounterpart, false);
  EXPECT_LE(max_abs_diff(a, c), 1e-5);
  EXPECT_LE(max_abs_diff(b, d), 1e-5);
}

TEST(RsfForwardTest, RejectsMismatchedShapes) {
  FusionFixture fx;
  const Tensor conf = Tensor::zeros({2});
  EXPECT_THROW(rsf_forward(fx.rf_rgb, Tensor::zeros({2, 8, 5, 6}), conf, conf, fx.st,
                           GateMode::kCounterpart, false),
               ShapeError);
  EXPECT_THROW(rsf_forward(fx.rf_rgb, fx.rf_thm, Tensor::zeros({3}), conf, fx.st,
                           GateMode::kCounterpart, false),
               ShapeError);
}

TEST(DecoderTest, OutputShapeAndZeroParameters) {
  Rng rng(11);
  RsfNet net(ModelConfig::toy(), rng);
  Rng in(12);
  const Tensor rgb = random_uniform({2, 3, 32, 64}, in, 0, 1);
  const Tensor thm = random_uniform({2, 1, 32, 64}, in, 0, 1);
  ForwardResult r = net.forward(rgb, thm, false);
  EXPECT_EQ(r.logits.shape(), (Shape{2, 3, 32, 64}));
  EXPECT_EQ(r.probs.shape(), (Shape{2, 3, 32, 64}));
  net.zero_parameters();
  r = net.forward(rgb, thm, false);
  for (double v : r.probs.values()) ASSERT_NEAR(v, 1.0 / 3.0, 1e-7);
  for (const LabelMap& m : net.predict(rgb, thm)) {
    for (std::int32_t c : m.labels) ASSERT_EQ(c, 0);
  }

  ModelConfig sig = ModelConfig::toy();
  sig.seg_activation = SegActivation::kSigmoid;
  RsfNet sig_net(sig, rng);
  sig_net.zero_parameters();
  const Tensor sig_probs = sig_net.forward(rgb, thm, false).probs;
  for (double v : sig_probs.values()) ASSERT_EQ(v, 0.5);
}

TEST(DecoderTest, RejectsWrongStageCount) {
  Rng rng(13);
  RsfNet net(ModelConfig::toy(), rng);
  std::vector<std::pair<Tensor, Tensor>> three(3, {Tensor::zeros({1, 8, 4, 4}),
                                                   Tensor::zeros({1, 8, 4, 4})});
  EXPECT_THROW(decoder_forward(three, net.params().decoder, 16, 16, false), ShapeError);
}

TEST(PredictTest, ArgmaxTieBreakIsLowestIndex) {
  const Tensor scores = Tensor::from_values(
      {1, 3, 1, 4}, {0.5, 0.2, 0.9, 0.1, 0.5, 0.7, 0.9, 0.1, 0.1, 0.7, 0.3, 0.1});
  const LabelMap m = argmax_labels(scores)[0];
  EXPECT_EQ(m.labels, (std::vector<std::int32_t>{0, 1, 0, 0}));
}

TEST(PredictTest, FusedModelPredictsIdenticalLabels) {
  Rng rng(14);
  RsfNet net(ModelConfig::toy(), rng);
  // Non-trivial batch-norm statistics in every branch block.
  for (auto& st : net.params().rsf) {
    st.rgb.block = BranchBlockParams::random(8, 5, rng, DType::kFloat32);
    st.thm.block = BranchBlockParams::random(8, 5, rng, DType::kFloat32);
  }
  RsfNet fused = net.clone();
  const FuseReport rep = fused.fuse(1e-5, 2, 1);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.blocks, 8);
  EXPECT_TRUE(fused.is_fused());
  EXPECT_FALSE(net.is_fused());
  EXPECT_LT(fused.parameter_count(), net.parameter_count());

  Rng in(15);
  double worst = 0.0;
  int checked = 0;
  for (int chunk = 0; chunk < 10; ++chunk) {
    const Tensor rgb = random_uniform({10, 3, 32, 32}, in, 0, 1);
    const Tensor thm = random_uniform({10, 1, 32, 32}, in, 0, 1);
    NoGradGuard no_grad;
    worst = std::max(worst, max_abs_diff(net.forward(rgb, thm, false).logits,
                                         fused.forward(rgb, thm, false).logits));
    const auto a = net.predict(rgb, thm);
    const auto b = fused.predict(rgb, thm);
    for (int i = 0; i < 10; ++i) {
      EXPECT_EQ(a[i], b[i]);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 100);
  EXPECT_LE(worst, 1e-5);
}

TEST(ModelGradientTest, EndToEndMatchesFiniteDifferences) {
  Rng rng(16);
  RsfNet net(tiny_config(), rng);
  Rng in(17);
  const Tensor rgb = random_uniform({2, 3, 16, 16}, in, 0, 1);
  const Tensor thm = random_uniform({2, 1, 16, 16}, in, 0, 1);
  Batch batch{rgb, thm, {LabelMap(16, 16, 0), LabelMap(16, 16, 0)}, {{0.2, 0.7}, {0.4, 0.1}}};
  for (int i = 0; i < 256; ++i) {
    batch.labels[0].labels[i] = (i / 16 + i % 16) % 5 == 0;
    batch.labels[1].labels[i] = (i % 16) > 9;
  }
  const std::vector<double> weights = class_weights(std::vector<double>{0.7, 0.3});
  std::vector<std::string> names;
  net.visit([&](const std::string& name, Tensor&, TensorRole role) {
    if (role == TensorRole::kParameter) names.push_back(name);
  });
  auto params = net.parameters();
  ASSERT_EQ(names.size(), params.size());
  auto res = testing::check_gradients(
      [&] { return compute_loss(net, batch, weights, 0.3).total; }, params, 1e-4,
      1e-6, 4);
  EXPECT_LT(res.max_rel_error, 1e-4)
      << names[std::stoul(res.worst.substr(0, res.worst.find(':')))] << " "
      << res.worst;
  EXPECT_GE(res.checked, params.size());
}

TEST(ModelStateTest, VisitNamesAreUniqueAndCountsAgree) {
  Rng rng(18);
  RsfNet net(ModelConfig::toy(), rng);
  std::set<std::string> names;
  std::int64_t params = 0;
  net.visit([&](const std::string& name, Tensor& t, TensorRole role) {
    EXPECT_TRUE(names.insert(name).second) << name;
    if (role == TensorRole::kParameter) {
      params += t.numel();
      EXPECT_TRUE(t.requires_grad()) << name;
    } else {
      EXPECT_FALSE(t.requires_grad()) << name;
    }
  });
  EXPECT_EQ(params, net.parameter_count());
}

TEST(ModelStateTest, CheckpointRoundTripIsBitExact) {
  Rng rng(19);
  RsfNet net(ModelConfig::toy(), rng);
  const Checkpoint a = net.to_checkpoint();
  RsfNet back = RsfNet::from_checkpoint(Checkpoint::decode(a.encode()));
  const Checkpoint b = back.to_checkpoint();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries()[i].name, b.entries()[i].name);
    EXPECT_EQ(a.entries()[i].value.shape(), b.entries()[i].value.shape());
    for (std::int64_t k = 0; k < a.entries()[i].value.numel(); ++k) {
      ASSERT_EQ(a.entries()[i].value[k], b.entries()[i].value[k]);
    }
  }
  EXPECT_EQ(back.config().gate, net.config().gate);
  EXPECT_EQ(back.config().rgb.widths, net.config().rgb.widths);
}

TEST(ModelStateTest, FusedCheckpointKeepsReport) {
  Rng rng(20);
  RsfNet net(ModelConfig::toy(), rng);
  net.fuse();
  RsfNet back = RsfNet::from_checkpoint(net.to_checkpoint());
  EXPECT_TRUE(back.is_fused());
  ASSERT_TRUE(back.fuse_report().has_value());
  EXPECT_EQ(back.fuse_report()->blocks, 8);
  EXPECT_TRUE(back.fuse_report()->passed);
  // Fusing again is a no-op.
  const FuseReport again = back.fuse();
  EXPECT_EQ(again.blocks, 8);
}

TEST(ModelStateTest, UnknownAndMissingNamesFail) {
  Rng rng(21);
  RsfNet net(ModelConfig::toy(), rng);
  Checkpoint extra = net.to_checkpoint();
  extra.add("encoder.rgb.bogus", Tensor::zeros({1}));
  try {
    RsfNet::from_checkpoint(extra);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), CheckpointErrc::kUnknownName);
  }
  const Checkpoint full = net.to_checkpoint();
  Checkpoint partial;
  for (const auto& e : full.entries()) {
    if (e.name != "decoder.classifier.bias") partial.add(e.name, e.value);
  }
  try {
    RsfNet::from_checkpoint(partial);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), CheckpointErrc::kMissingName);
  }
}

}  // namespace
}  // namespace rsf
