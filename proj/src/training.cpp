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

#include "fmx/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "fmx/bounded_queue.hpp"
#include "fmx/errors.hpp"

namespace fmx {

double standard_normal(Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train.eps must be > 0");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("train.grad_clip must be > 0");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(mask_p >= 0.0 && mask_p <= 1.0)) throw ConfigError("train.mask_p must lie in [0, 1]");
}

std::pair<ActivationBatch, LayerMask> apply_layer_mask(const ActivationBatch& batch, double p,
                                                       Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("mask probability must lie in [0, 1]");
  LayerMask mask{batch.tokens(), batch.layers(),
                 std::vector<std::uint8_t>(batch.tokens() * batch.layers(), 1)};
  ActivationBatch masked = batch;
  if (p == 0.0) return {std::move(masked), std::move(mask)};
  for (std::size_t t = 0; t < batch.tokens(); ++t) {
    for (std::size_t l = 0; l < batch.layers(); ++l) {
      if (uniform01(rng) < p) {
        mask.keep[t * batch.layers() + l] = 0;
        auto x = masked.at(t, l);
        std::fill(x.begin(), x.end(), 0.0f);
      }
    }
  }
  return {std::move(masked), std::move(mask)};
}

LossResult recon_loss(const CrosscoderModel& m, const ActivationBatch& clean,
                      const ActivationBatch& masked, const SparseCode* fixed_selection,
                      bool with_grad) {
  const WeightDims dims = m.dims();
  if (clean.tokens() != masked.tokens() || clean.layers() != masked.layers() ||
      clean.dim() != masked.dim()) {
    throw DimensionError("clean and masked batches differ in shape");
  }
  clean.check_finite();
  masked.check_finite();
  const std::size_t tokens = clean.tokens();
  if (tokens == 0) throw DataError("empty batch");

  // Pre-activation before ReLU, then select.
  Matrix<double> pre = encoder_contract(m.encoder, masked);
  for (std::size_t t = 0; t < tokens; ++t) {
    auto row = pre.row(t);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] += m.b_enc[i];
  }
  SparseCode code;
  if (fixed_selection != nullptr) {
    if (fixed_selection->tokens() != tokens || fixed_selection->width() != dims.d_sae) {
      throw DimensionError("fixed selection does not match the batch");
    }
    code = SparseCode(0, dims.d_sae);
    std::vector<SparseCode::Entry> entries;
    for (std::size_t t = 0; t < tokens; ++t) {
      entries.clear();
      for (const auto i : fixed_selection->indices(t)) {
        entries.push_back({i, std::max(0.0, pre(t, i))});
      }
      code.push_token(entries);
    }
  } else {
    Matrix<double> relu = pre;
    for (auto& v : relu.flat()) v = std::max(0.0, v);
    code = batch_topk(relu, m.k);
  }

  LossResult out;
  const std::vector<double> recon = decode(m, code);
  const std::size_t stride = dims.layers * dims.d;
  const double scale = 1.0 / (static_cast<double>(dims.layers) * static_cast<double>(tokens));
  std::vector<double> drecon(recon.size());
  double sum = 0.0;
  const auto x = clean.flat();
  for (std::size_t n = 0; n < recon.size(); ++n) {
    const double diff = recon[n] - static_cast<double>(x[n]);
    sum += diff * diff;
    drecon[n] = 2.0 * scale * diff;
  }
  out.loss = sum * scale;
  out.code = code;
  if (!with_grad) return out;

  out.grad = zeros_like(m);
  auto gbias = out.grad.b_dec.flat();
  for (std::size_t t = 0; t < tokens; ++t) {
    const double* dr = drecon.data() + t * stride;
    for (std::size_t n = 0; n < stride; ++n) gbias[n] += dr[n];
  }
  std::vector<double> dz = decoder_backward(m.decoder, code, drecon, out.grad.decoder);
  // ReLU gate: a selected coordinate only passes gradient while its
  // pre-activation is positive.
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto idx = code.indices(t);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      double& g = dz[code.offset(t) + n];
      if (!(pre(t, idx[n]) > 0.0)) g = 0.0;
      out.grad.b_enc[idx[n]] += g;
    }
  }
  const SparseCode dpre = code.with_values(std::move(dz));
  encoder_backward(m.encoder, masked, dpre, out.grad.encoder);
  return out;
}

CrosscoderModel init_model(WeightDims dims, Variant variant, std::array<std::size_t, 3> ranks,
                           std::size_t k, double mask_p, Rng& rng) {
  CrosscoderModel m = make_model(dims, variant, ranks, k, mask_p);
  auto fill = [&](Weights<double>& w, double v) {
    double sigma = std::sqrt(v);
    if (variant == Variant::kCp) {
      sigma = std::pow(v / static_cast<double>(ranks[0]), 1.0 / 6.0);
    } else if (variant == Variant::kTr) {
      sigma = std::pow(v / static_cast<double>(ranks[0] * ranks[1] * ranks[2]), 1.0 / 6.0);
    }
    for (auto arr : parameter_arrays(w)) {
      for (auto& e : arr) e = sigma * standard_normal(rng);
    }
  };
  fill(m.encoder, 2.0 / static_cast<double>(dims.d));
  fill(m.decoder, 2.0 / static_cast<double>(dims.d_sae));
  return m;
}

double global_norm(const std::vector<std::span<const double>>& arrays) {
  double s = 0.0;
  for (const auto arr : arrays) {
    for (const double v : arr) s += v * v;
  }
  return std::sqrt(s);
}

double clip_global_norm(const std::vector<std::span<double>>& arrays, double max_norm) {
  std::vector<std::span<const double>> view(arrays.begin(), arrays.end());
  const double norm = global_norm(view);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto arr : arrays) {
      for (auto& v : arr) v *= f;
    }
  }
  return norm;
}

AdamState make_adam_state(const std::vector<std::span<const double>>& params) {
  AdamState s;
  for (const auto arr : params) {
    s.m.emplace_back(arr.size(), 0.0);
    s.v.emplace_back(arr.size(), 0.0);
  }
  return s;
}

void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<double>>& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: parameter/gradient/state arrays disagree");
  }
  const std::int64_t step = state.step + 1;
  for (std::size_t a = 0; a < grads.size(); ++a) {
    if (grads[a].size() != params[a].size() || state.m[a].size() != params[a].size()) {
      throw DimensionError("adam_step: array " + std::to_string(a) + " size mismatch");
    }
    for (const double g : grads[a]) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient", step);
    }
  }
  clip_global_norm(grads, cfg.grad_clip_norm);
  state.step = step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t a = 0; a < params.size(); ++a) {
    auto p = params[a];
    const auto g = grads[a];
    auto& m = state.m[a];
    auto& v = state.v[a];
    for (std::size_t n = 0; n < p.size(); ++n) {
      m[n] = cfg.beta1 * m[n] + (1.0 - cfg.beta1) * g[n];
      v[n] = cfg.beta2 * v[n] + (1.0 - cfg.beta2) * g[n] * g[n];
      const double mhat = m[n] / bc1;
      const double vhat = v[n] / bc2;
      p[n] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

InMemorySource::InMemorySource(std::shared_ptr<const ActivationBatch> data, std::uint64_t seed,
                               std::size_t epochs)
    : data_(std::move(data)), rng_(seed), epochs_(epochs) {
  if (!data_ || data_->empty()) throw DataError("training data is empty");
  order_.resize(data_->tokens());
  reshuffle();
}

void InMemorySource::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  shuffle_portable(order_, rng_);
  cursor_ = 0;
}

std::optional<ActivationBatch> InMemorySource::next(std::size_t batch_size) {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    if (epochs_ != 0 && epoch_ >= epochs_) return std::nullopt;
    reshuffle();
  }
  const std::size_t n = std::min(batch_size, order_.size() - cursor_);
  const std::size_t stride = data_->layers() * data_->dim();
  std::vector<float> buf(n * stride);
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = data_->token(order_[cursor_ + r]);
    std::copy(src.begin(), src.end(), buf.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  cursor_ += n;
  return ActivationBatch(n, data_->layers(), data_->dim(), std::move(buf));
}

std::string to_ndjson(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["mean_active"] = m.mean_active;
  j["wall_ms"] = m.wall_ms;
  return j.dump();
}

namespace {

// Pulls batches from the source, either inline or through a producer thread.
class BatchFeed {
 public:
  BatchFeed(DataSource& source, std::size_t batch_size, std::size_t depth)
      : source_(source), batch_size_(batch_size), queue_(depth) {
    if (depth > 0) {
      worker_ = std::thread([this] {
        try {
          while (auto b = source_.next(batch_size_)) {
            if (!queue_.push(std::move(*b))) return;
          }
        } catch (...) {
          error_ = std::current_exception();
        }
        queue_.close();
      });
    }
  }

  ~BatchFeed() {
    queue_.close();
    if (worker_.joinable()) worker_.join();
  }

  std::optional<ActivationBatch> next() {
    if (!worker_.joinable()) return source_.next(batch_size_);
    auto b = queue_.pop();
    if (!b && error_) std::rethrow_exception(error_);
    return b;
  }

 private:
  DataSource& source_;
  std::size_t batch_size_;
  BoundedQueue<ActivationBatch> queue_;
  std::exception_ptr error_;
  std::thread worker_;
};

// Separates the masking stream from the data stream.
constexpr std::uint64_t kMaskStream = 0x6d61736b5f726e67ULL;

}  // namespace

TrainResult train(CrosscoderModel model, DataSource& source, const TrainConfig& cfg,
                  const std::function<void(const StepMetrics&)>& on_log) {
  cfg.validate();
  model.validate();
  model.mask_p = cfg.mask_p;
  Rng mask_rng(cfg.seed ^ kMaskStream);
  AdamState adam = make_adam_state(parameter_spans(std::as_const(model)));
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  BatchFeed feed(source, cfg.batch_size, cfg.prefetch);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    auto batch = feed.next();
    if (!batch) {
      result.truncated = true;
      break;
    }
    if (batch->layers() != model.dims().layers || batch->dim() != model.dims().d) {
      throw DimensionError("training batch shape does not match the model");
    }
    auto [masked, mask] = apply_layer_mask(*batch, cfg.mask_p, mask_rng);
    LossResult lr = recon_loss(model, *batch, masked);
    if (!std::isfinite(lr.loss)) {
      throw TrainingError("non-finite loss", static_cast<std::int64_t>(step));
    }
    adam_step(parameter_spans(model), parameter_spans(lr.grad), adam, cfg);
    result.steps_run = step;

    const bool log_now = (cfg.log_every != 0 && step % cfg.log_every == 0) || step == cfg.steps;
    if (log_now) {
      StepMetrics rec;
      rec.step = step;
      rec.loss = lr.loss;
      rec.mean_active = static_cast<double>(lr.code.nnz()) / static_cast<double>(batch->tokens());
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
      result.log.push_back(rec);
      if (on_log) on_log(rec);
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace fmx
