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

#include "rsf/train.h"

#include <cmath>
#include <string>

#include "rsf/ops.h"

namespace rsf {
namespace {

// d/dc smooth_l1(|c - t|)
double smooth_l1_grad(double c, double t) {
  const double d = c - t;
  if (std::abs(d) < 1.0) return d;
  return d > 0.0 ? 1.0 : -1.0;
}

}  // namespace

double class_weight(double freq) { return 1.0 / std::log(1.05 + freq); }

std::vector<double> class_weights(std::span<const double> freqs) {
  std::vector<double> out;
  out.reserve(freqs.size());
  for (double p : freqs) out.push_back(class_weight(p));
  return out;
}

std::vector<double> class_frequencies(std::span<const LabelMap> labels,
                                      int num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  double total = 0.0;
  for (const LabelMap& m : labels) {
    for (std::int32_t c : m.labels) {
      if (c < 0 || c >= num_classes) {
        throw Error("class_frequencies: label " + std::to_string(c) +
                    " outside [0, " + std::to_string(num_classes) + ")");
      }
      counts[c] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0) {
    for (double& c : counts) c /= total;
  }
  return counts;
}

Tensor segmentation_loss(const Tensor& probs, std::span<const LabelMap> labels,
                         std::span<const double> weights) {
  if (probs.rank() != 4) {
    throw ShapeError("segmentation_loss: expected [N, C, H, W] probabilities, got " +
                     shape_str(probs.shape()));
  }
  const std::int64_t n = probs.dim(0), c = probs.dim(1), h = probs.dim(2),
                     w = probs.dim(3), plane = h * w;
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("segmentation_loss: " + std::to_string(labels.size()) +
                     " label maps for a batch of " + std::to_string(n));
  }
  if (static_cast<std::int64_t>(weights.size()) != c) {
    throw ShapeError("segmentation_loss: " + std::to_string(weights.size()) +
                     " class weights for " + std::to_string(c) + " classes");
  }
  // Flat index of the true-class probability and its weight, per pixel.
  auto index = std::make_shared<std::vector<std::int64_t>>(n * plane);
  auto omega = std::make_shared<std::vector<double>>(n * plane);
  for (std::int64_t b = 0; b < n; ++b) {
    const LabelMap& m = labels[b];
    if (m.height != h || m.width != w) {
      throw ShapeError("segmentation_loss: label map " + std::to_string(b) +
                       " is " + std::to_string(m.height) + "x" +
                       std::to_string(m.width) + ", predictions are " +
                       std::to_string(h) + "x" + std::to_string(w));
    }
    for (std::int64_t q = 0; q < plane; ++q) {
      const std::int32_t y = m.labels[q];
      if (y < 0 || y >= c) {
        throw Error("segmentation_loss: label " + std::to_string(y) +
                    " outside [0, " + std::to_string(c) + ")");
      }
      (*index)[b * plane + q] = (b * c + y) * plane + q;
      (*omega)[b * plane + q] = weights[y];
    }
  }
  auto v = probs.values();
  const double inv = 1.0 / static_cast<double>(n * plane);
  double total = 0.0;
  for (std::size_t i = 0; i < index->size(); ++i) {
    total -= (*omega)[i] * std::log(std::max(v[(*index)[i]], kLogClamp));
  }
  Tensor p = probs;
  return make_result({}, probs.dtype(), {total * inv}, {probs},
                     [p, index, omega, inv](std::span<const double> g) {
                       auto pv = p.values();
                       auto sink = p.grad_sink();
                       for (std::size_t i = 0; i < index->size(); ++i) {
                         const double y = pv[(*index)[i]];
                         if (y > kLogClamp) {
                           sink[(*index)[i]] -= g[0] * inv * (*omega)[i] / y;
                         }
                       }
                     });
}

Tensor segmentation_loss_one_hot(const Tensor& probs, const Tensor& one_hot,
                                 std::span<const double> weights) {
  if (one_hot.shape() != probs.shape() || probs.rank() != 4) {
    throw ShapeError("segmentation_loss: one-hot target " +
                     shape_str(one_hot.shape()) + " vs probabilities " +
                     shape_str(probs.shape()));
  }
  const std::int64_t n = probs.dim(0), c = probs.dim(1), h = probs.dim(2),
                     w = probs.dim(3), plane = h * w;
  auto t = one_hot.values();
  std::vector<LabelMap> labels;
  for (std::int64_t b = 0; b < n; ++b) {
    LabelMap m(h, w, 0);
    for (std::int64_t q = 0; q < plane; ++q) {
      int hot = -1;
      for (std::int64_t k = 0; k < c; ++k) {
        const double x = t[(b * c + k) * plane + q];
        if (x == 1.0 && hot < 0) {
          hot = static_cast<int>(k);
        } else if (x != 0.0) {
          hot = -2;
          break;
        }
      }
      if (hot < 0) throw Error("segmentation_loss: target is not one-hot");
      m.labels[q] = hot;
    }
    labels.push_back(std::move(m));
  }
  return segmentation_loss(probs, labels, weights);
}

double smooth_l1(double e) { return e < 1.0 ? 0.5 * e * e : e - 0.5; }

Tensor smooth_l1(const Tensor& e) {
  auto v = e.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = smooth_l1(std::abs(v[i]));
  Tensor x = e;
  return make_result(e.shape(), e.dtype(), std::move(out), {e},
                     [x](std::span<const double> g) {
                       auto xv = x.values();
                       auto sink = x.grad_sink();
                       for (std::size_t i = 0; i < xv.size(); ++i) {
                         sink[i] += g[i] * smooth_l1_grad(xv[i], 0.0);
                       }
                     });
}

Tensor regression_loss(const Tensor& conf_rgb, const Tensor& conf_thm,
                       std::span<const PseudoLabelPair> targets) {
  const std::int64_t n = conf_rgb.numel();
  if (conf_thm.numel() != n || static_cast<std::int64_t>(targets.size()) != n) {
    throw ShapeError("regression_loss: " + std::to_string(n) + " rgb and " +
                     std::to_string(conf_thm.numel()) + " thm confidences for " +
                     std::to_string(targets.size()) + " pseudo-label pairs");
  }
  std::vector<PseudoLabelPair> t(targets.begin(), targets.end());
  auto rv = conf_rgb.values();
  auto tv = conf_thm.values();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    total += smooth_l1(std::abs(t[i].p_rgb - rv[i])) +
             smooth_l1(std::abs(t[i].p_thm - tv[i]));
  }
  const double inv = 1.0 / static_cast<double>(n);
  Tensor cr = conf_rgb, ct = conf_thm;
  return make_result(
      {}, promote({conf_rgb, conf_thm}), {total * inv}, {conf_rgb, conf_thm},
      [cr, ct, t, inv](std::span<const double> g) {
        if (cr.requires_grad()) {
          auto v = cr.values();
          auto sink = cr.grad_sink();
          for (std::size_t i = 0; i < t.size(); ++i) {
            sink[i] += g[0] * inv * smooth_l1_grad(v[i], t[i].p_rgb);
          }
        }
        if (ct.requires_grad()) {
          auto v = ct.values();
          auto sink = ct.grad_sink();
          for (std::size_t i = 0; i < t.size(); ++i) {
            sink[i] += g[0] * inv * smooth_l1_grad(v[i], t[i].p_thm);
          }
        }
      });
}

Tensor total_loss(const Tensor& seg, const Tensor& reg, double lambda) {
  if (lambda < 0.0) throw Error("total_loss: lambda must be >= 0");
  return add(seg, scale(reg, lambda));
}

double poly_lr(double lr0, int iter, int iter_max, double power) {
  if (iter_max <= 0 || iter < 0 || iter > iter_max) {
    throw Error("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                std::to_string(iter_max) + "]");
  }
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / iter_max, power);
}

Sgd::Sgd(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const Tensor& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto theta = p.mutable_values();
    std::vector<double>& v = velocity_[k];
    const bool has_grad = p.has_grad();
    std::span<const double> g = has_grad ? p.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      v[i] = momentum_ * v[i] + gi + weight_decay_ * theta[i];
      theta[i] -= lr * v[i];
    }
    p.quantize();
  }
  zero_grad();
}

void Sgd::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

LossTerms compute_loss(const RsfNet& net, const Batch& batch,
                       std::span<const double> weights, double lambda) {
  ForwardResult r = net.forward(batch.rgb, batch.thm, true);
  LossTerms out;
  out.seg = segmentation_loss(r.probs, batch.labels, weights);
  out.reg = regression_loss(r.conf_rgb, r.conf_thm, batch.pseudo);
  out.total = total_loss(out.seg, out.reg, lambda);
  return out;
}

StepResult train_step(RsfNet& net, const Batch& batch, Sgd& opt,
                      std::span<const double> weights, double lambda, double lr) {
  opt.zero_grad();
  LossTerms terms = compute_loss(net, batch, weights, lambda);
  StepResult r{terms.total.item(), terms.seg.item(), terms.reg.item()};
  if (!std::isfinite(r.total)) {
    throw Error("train_step: non-finite loss (seg " + std::to_string(r.seg) +
                ", reg " + std::to_string(r.reg) + ", lr " + std::to_string(lr) +
                ")");
  }
  terms.total.backward();
  opt.step(lr);
  return r;
}

}  // namespace rsf
