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

#include "rsf/config.h"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace rsf {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value,
                            const char* expected) {
  throw ConfigError(std::string(key), "config key '" + std::string(key) +
                                          "': cannot parse '" +
                                          std::string(value) + "' as " +
                                          expected);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  value = trim(value);
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    bad_value(key, value, std::is_integral_v<T> ? "an integer" : "a number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  value = trim(value);
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean");
}

std::array<int, 4> parse_list4(std::string_view key, std::string_view value) {
  std::array<int, 4> out{};
  std::size_t count = 0;
  std::string_view rest = value;
  while (true) {
    const auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    if (count == 4) bad_value(key, value, "a list of 4 integers");
    out[count++] = parse_number<int>(key, item);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  if (count != 4) bad_value(key, value, "a list of 4 integers");
  return out;
}

std::string join4(const std::array<int, 4>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," +
         std::to_string(v[2]) + "," + std::to_string(v[3]);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void check(bool ok, const char* key, const std::string& message) {
  if (!ok) throw ConfigError(key, std::string("config key '") + key + "': " + message);
}

}  // namespace

const char* gate_mode_name(GateMode mode) {
  switch (mode) {
    case GateMode::kCounterpart: return "counterpart";
    case GateMode::kOwn: return "own";
    case GateMode::kFrozenZero: return "frozen_zero";
  }
  return "?";
}

const char* seg_activation_name(SegActivation act) {
  return act == SegActivation::kSoftmax ? "softmax" : "sigmoid";
}

std::int64_t ModelConfig::divisor() const {
  std::int64_t d = 1;
  for (int f : downsample) d *= f;
  return d;
}

void ModelConfig::validate() const {
  check(num_classes >= 2, "num_classes", "must be >= 2");
  for (int s = 0; s < 4; ++s) {
    check(rgb.widths[s] >= 1, "rgb_widths", "widths must be positive");
    check(thm.widths[s] >= 1, "thm_widths", "widths must be positive");
    check(rgb.blocks[s] >= 1, "rgb_blocks", "each stage needs a block");
    check(thm.blocks[s] >= 1, "thm_blocks", "each stage needs a block");
    check(reduced[s] >= 1, "reduced_dims", "must be positive");
    const int f = downsample[s];
    check(f == 1 || f == 2 || (s == 0 && f == 4), "downsample",
          "stage 1 accepts 1, 2 or 4 and later stages 1 or 2");
  }
  check(inner >= 1, "inner_dim", "must be positive");
  check(kernel >= 3 && kernel % 2 == 1, "kernel", "must be odd and >= 3");
  check(recal_kernel >= 1 && recal_kernel % 2 == 1, "recal_kernel",
        "must be odd and >= 1");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.num_classes = 9;
  c.rgb = {{256, 512, 1024, 2048}, {3, 4, 23, 3}};
  c.thm = {{64, 128, 256, 512}, {3, 4, 6, 3}};
  c.reduced = {64, 128, 256, 256};
  c.inner = 64;
  c.kernel = 5;
  return c;
}

void TrainConfig::validate() const {
  check(lambda >= 0.0, "lambda", "must be >= 0");
  check(lr > 0.0, "lr", "must be > 0");
  check(momentum >= 0.0 && momentum < 1.0, "momentum", "must be in [0, 1)");
  check(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  check(poly_power >= 0.0, "poly_power", "must be >= 0");
  check(epochs >= 0, "epochs", "must be >= 0");
  check(steps >= 1, "steps", "must be >= 1");
  check(batch_size >= 1, "batch_size", "must be >= 1");
  check(crop_size >= 0, "crop_size", "must be >= 0");
  check(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
}

void set_config_value(Config& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  ModelConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  if (key == "preset") {
    if (value == "toy") {
      m = ModelConfig::toy();
    } else if (value == "full") {
      m = ModelConfig::full();
    } else {
      bad_value(key, value, "toy or full");
    }
  } else if (key == "num_classes") {
    m.num_classes = parse_number<int>(key, value);
  } else if (key == "rgb_widths") {
    m.rgb.widths = parse_list4(key, value);
  } else if (key == "thm_widths") {
    m.thm.widths = parse_list4(key, value);
  } else if (key == "rgb_blocks") {
    m.rgb.blocks = parse_list4(key, value);
  } else if (key == "thm_blocks") {
    m.thm.blocks = parse_list4(key, value);
  } else if (key == "downsample") {
    m.downsample = parse_list4(key, value);
  } else if (key == "reduced_dims") {
    m.reduced = parse_list4(key, value);
  } else if (key == "inner_dim") {
    m.inner = parse_number<int>(key, value);
  } else if (key == "kernel") {
    m.kernel = parse_number<int>(key, value);
  } else if (key == "recal_kernel") {
    m.recal_kernel = parse_number<int>(key, value);
  } else if (key == "gate") {
    if (value == "counterpart") {
      m.gate = GateMode::kCounterpart;
    } else if (value == "own") {
      m.gate = GateMode::kOwn;
    } else if (value == "frozen_zero") {
      m.gate = GateMode::kFrozenZero;
    } else {
      bad_value(key, value, "counterpart, own or frozen_zero");
    }
  } else if (key == "seg_activation") {
    if (value == "softmax") {
      m.seg_activation = SegActivation::kSoftmax;
    } else if (value == "sigmoid") {
      m.seg_activation = SegActivation::kSigmoid;
    } else {
      bad_value(key, value, "softmax or sigmoid");
    }
  } else if (key == "dtype") {
    if (value == "float32") {
      m.dtype = DType::kFloat32;
    } else if (value == "float64") {
      m.dtype = DType::kFloat64;
    } else {
      bad_value(key, value, "float32 or float64");
    }
  } else if (key == "lambda") {
    t.lambda = parse_number<double>(key, value);
  } else if (key == "lr") {
    t.lr = parse_number<double>(key, value);
  } else if (key == "momentum") {
    t.momentum = parse_number<double>(key, value);
  } else if (key == "weight_decay") {
    t.weight_decay = parse_number<double>(key, value);
  } else if (key == "poly_power") {
    t.poly_power = parse_number<double>(key, value);
  } else if (key == "epochs") {
    t.epochs = parse_number<int>(key, value);
  } else if (key == "steps") {
    t.steps = parse_number<int>(key, value);
  } else if (key == "batch_size") {
    t.batch_size = parse_number<int>(key, value);
  } else if (key == "crop_size") {
    t.crop_size = parse_number<int>(key, value);
  } else if (key == "augment") {
    t.augment = parse_bool(key, value);
  } else if (key == "checkpoint_every") {
    t.checkpoint_every = parse_number<int>(key, value);
  } else if (key == "seed") {
    t.seed = parse_number<std::uint64_t>(key, value);
  } else {
    throw ConfigError(std::string(key),
                      "unknown config key '" + std::string(key) + "'");
  }
}

Config parse_config(std::string_view text, Config base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line), "config line " +
                                               std::to_string(line_no) +
                                               ": expected key = value");
    }
    set_config_value(base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

Config load_config_file(const std::string& path, Config base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string serialize_config(const Config& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  std::ostringstream out;
  out << "num_classes = " << m.num_classes << "\n"
      << "rgb_widths = " << join4(m.rgb.widths) << "\n"
      << "rgb_blocks = " << join4(m.rgb.blocks) << "\n"
      << "thm_widths = " << join4(m.thm.widths) << "\n"
      << "thm_blocks = " << join4(m.thm.blocks) << "\n"
      << "downsample = " << join4(m.downsample) << "\n"
      << "reduced_dims = " << join4(m.reduced) << "\n"
      << "inner_dim = " << m.inner << "\n"
      << "kernel = " << m.kernel << "\n"
      << "recal_kernel = " << m.recal_kernel << "\n"
      << "gate = " << gate_mode_name(m.gate) << "\n"
      << "seg_activation = " << seg_activation_name(m.seg_activation) << "\n"
      << "dtype = " << dtype_name(m.dtype) << "\n"
      << "lambda = " << fmt_double(t.lambda) << "\n"
      << "lr = " << fmt_double(t.lr) << "\n"
      << "momentum = " << fmt_double(t.momentum) << "\n"
      << "weight_decay = " << fmt_double(t.weight_decay) << "\n"
      << "poly_power = " << fmt_double(t.poly_power) << "\n"
      << "epochs = " << t.epochs << "\n"
      << "steps = " << t.steps << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "crop_size = " << t.crop_size << "\n"
      << "augment = " << (t.augment ? "true" : "false") << "\n"
      << "checkpoint_every = " << t.checkpoint_every << "\n"
      << "seed = " << t.seed << "\n";
  return out.str();
}

}  // namespace rsf
