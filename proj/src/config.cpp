// Copyright 2026 The fmxcoders Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fmx/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fmx/errors.hpp"

namespace fmx {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
};

// Empty values mean "derived" (documented at the point of use).
constexpr KeyDefault kDefaults[] = {
    {"seed", "0"},
    {"out", "out"},

    {"data.cache", ""},
    {"data.spec_seed", "0"},
    {"data.tokens", "200000"},
    {"data.d", "32"},
    {"data.layers", "8"},
    {"data.single", "32"},
    {"data.cross", "32"},
    {"data.cross_support", "4"},
    {"data.policy", "shared"},
    {"data.firing_prob", "0.05"},
    {"data.magnitude_mu", "0"},
    {"data.magnitude_sigma", "0.5"},
    {"data.noise", "0.05"},
    {"data.orthogonal", "false"},
    {"data.labels", "false"},
    {"data.concept", ""},
    {"data.sequence_length", "0"},

    {"model.variant", "tr"},
    {"model.d_sae", "256"},
    {"model.k", "4"},
    {"model.ranks", ""},
    {"model.cp_rank", ""},
    {"model.reduction", "1"},
    {"model.layer", ""},
    {"model.checkpoint", ""},

    {"train.learning_rate", "3e-4"},
    {"train.beta1", "0.9"},
    {"train.beta2", "0.999"},
    {"train.epsilon", "1e-8"},
    {"train.grad_clip", "1"},
    {"train.batch_size", "256"},
    {"train.steps", "1000"},
    {"train.mask_p", "0"},
    {"train.log_every", "10"},
    {"train.prefetch", "2"},
    {"train.epochs", "0"},

    {"eval.cache", ""},
    {"eval.mode", "batch_topk"},
    {"eval.chunk", "4096"},
    {"eval.layer", ""},
    {"eval.histogram_width", "0.25"},

    {"probe.cache", ""},
    {"probe.task", "planted"},
    {"probe.train_fraction", "0.5"},

    {"sweep.p", "0,0.1"},
    {"sweep.reductions", "1,0.5,0.25,0.125"},

    {"judge.evidence", ""},
    {"judge.stub", ""},
    {"judge.base_url", "https://openrouter.ai/api/v1"},
    {"judge.path", "/chat/completions"},
    {"judge.model", ""},
    {"judge.auth_env", "FMX_JUDGE_API_KEY"},
    {"judge.temperature", "0"},
    {"judge.timeout_s", "60"},
    {"judge.max_retries", "3"},
    {"judge.backoff_ms", "500"},
    {"judge.rps", "0"},
    {"judge.in_flight", "4"},

    {"ranks.d", ""},
    {"ranks.d_sae", ""},
    {"ranks.layers", ""},
    {"ranks.budget", ""},
    {"ranks.ratio", "fitted"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError(key + ": expected " + want + ", got \"" + value + "\"");
}

}  // namespace

Config::Config() {
  for (const auto& kd : kDefaults) values_[kd.key] = kd.value;
}

bool Config::known(const std::string& key) {
  return std::any_of(std::begin(kDefaults), std::end(kDefaults),
                     [&](const KeyDefault& kd) { return key == kd.key; });
}

void Config::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key: " + key);
  values_[key] = trim(value);
}

void Config::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  load_text(text.str(), path.string());
}

const std::string& Config::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

std::int64_t Config::integer(const std::string& key) const {
  const auto& v = raw(key);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::size_t Config::count(const std::string& key) const {
  const auto v = integer(key);
  if (v < 0) bad_value(key, raw(key), "a non-negative integer");
  return static_cast<std::size_t>(v);
}

double Config::real(const std::string& key) const {
  const auto& v = raw(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  bad_value(key, v, "a number");
}

bool Config::flag(const std::string& key) const {
  const auto& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(raw(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) bad_value(key, raw(key), "a comma-separated list of numbers");
    } catch (const std::logic_error&) {
      bad_value(key, raw(key), "a comma-separated list of numbers");
    }
  }
  if (out.empty()) bad_value(key, raw(key), "a nonempty list");
  return out;
}

void Config::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

void Config::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write(out);
}

}  // namespace fmx
