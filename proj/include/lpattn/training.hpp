#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lpattn/data.hpp"
#include "lpattn/error.hpp"
#include "lpattn/model.hpp"
#include "lpattn/optim.hpp"
#include "lpattn/rng.hpp"

namespace lpattn {

struct LrSchedule {
  long warmup_iters = 100;
  long max_iters = 5000;
  double lr_max = 1e-3;
  double lr_min = 1e-4;
};

/// Linear warmup from 0 to lr_max over warmup_iters, cosine decay to lr_min
/// at max_iters, lr_min afterwards.
inline double lr_at(long iter, const LrSchedule& s) {
  if (iter < 0) throw ContractError("lr_at: negative iteration");
  if (iter < s.warmup_iters) return s.lr_max * static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
  if (iter >= s.max_iters) return s.lr_min;
  const double span = static_cast<double>(s.max_iters - s.warmup_iters);
  const double ratio = static_cast<double>(iter - s.warmup_iters) / span;
  return s.lr_min + 0.5 * (1.0 + std::cos(std::numbers::pi * ratio)) * (s.lr_max - s.lr_min);
}

struct TrainConfig {
  long max_iters = 5000;
  long eval_interval = 250;
  std::size_t eval_tile_stride = 0;  // 0: context_len
  std::size_t batch_size = 64;
  long warmup_iters = 100;
  double lr_max = 1e-3;
  double lr_min = 1e-4;
  double grad_clip = 1.0;
  AdamWConfig optimizer;
  std::size_t train_eval_batches = 8;
  std::uint64_t seed = 1337;

  LrSchedule schedule() const { return {warmup_iters, max_iters, lr_max, lr_min}; }

  void validate() const {
    if (max_iters < 0) throw ConfigError("train: max_iters must be >= 0");
    if (eval_interval <= 0) throw ConfigError("train: eval_interval must be positive");
    if (max_iters % eval_interval != 0) {
      throw ConfigError("train: eval_interval " + std::to_string(eval_interval) + " must divide max_iters " +
                        std::to_string(max_iters));
    }
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (warmup_iters < 0) throw ConfigError("train: warmup_iters must be >= 0");
    if (!(lr_min <= lr_max) || lr_min < 0) throw ConfigError("train: need 0 <= lr_min <= lr_max");
    if (!(grad_clip > 0)) throw ConfigError("train: grad_clip must be positive");
    if (train_eval_batches == 0) throw ConfigError("train: train_eval_batches must be positive");
  }

  /// Reference char-level recipe: batch 64, lr 1e-3 -> 1e-4, 5000 iterations.
  static TrainConfig paper() { return {}; }

  /// Desk-scale smoke run: batch 32, 500 iterations.
  static TrainConfig tiny() {
    TrainConfig c;
    c.max_iters = 500;
    c.eval_interval = 50;
    c.batch_size = 32;
    return c;
  }
};

struct MetricsRecord {
  std::string run_id;
  std::string variant;
  double p = 0.0;
  int fold = 0;
  long iter = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double elapsed_seconds = 0.0;
};

struct RunResult {
  std::vector<MetricsRecord> metrics;
  double min_val_loss = std::numeric_limits<double>::infinity();
  long argmin_iter = -1;
  double total_wall_seconds = 0.0;
  bool failed = false;
  std::string failure;
};

/// Recomputes min_val_loss / argmin_iter / total_wall_seconds from metrics.
inline void summarize(RunResult& r) {
  r.min_val_loss = std::numeric_limits<double>::infinity();
  r.argmin_iter = -1;
  for (const auto& m : r.metrics) {
    if (m.val_loss < r.min_val_loss) {
      r.min_val_loss = m.val_loss;
      r.argmin_iter = m.iter;
    }
  }
  r.total_wall_seconds = r.metrics.empty() ? 0.0 : r.metrics.back().elapsed_seconds;
}

/// Validation windows: starts at val.begin + i * stride while a full
/// context_len + 1 window fits inside the span.
inline std::vector<std::size_t> val_window_offsets(const FoldPlan& fold, std::size_t context_len, std::size_t stride) {
  if (stride == 0) throw ConfigError("evaluate_val: stride must be positive");
  std::vector<std::size_t> offsets;
  for (std::size_t s = fold.val.begin; s + context_len + 1 <= fold.val.end; s += stride) offsets.push_back(s);
  if (offsets.empty()) {
    throw ConfigError("evaluate_val: validation span of " + std::to_string(fold.val.size()) +
                      " tokens cannot hold a window of " + std::to_string(context_len + 1));
  }
  return offsets;
}

/// Mean next-token loss over windows at the given offsets, dropout disabled.
template <typename T>
double mean_window_loss(const GptModel<T>& model, std::span<const TokenId> tokens, std::span<const std::size_t> offsets,
                        std::size_t chunk) {
  const std::size_t t = model.config().context_len;
  Rng unused(0);
  double total = 0.0;
  for (std::size_t i = 0; i < offsets.size(); i += chunk) {
    const std::size_t n = std::min(chunk, offsets.size() - i);
    Batch b = window_batch(tokens, offsets.subspan(i, n), t);
    Tape<T> tape(false);
    total += static_cast<double>(model.loss(tape, b.inputs, b.targets, false, unused).item()) * static_cast<double>(n);
  }
  return total / static_cast<double>(offsets.size());
}

/// Mean cross-entropy over non-overlapping tiled windows of the fold's
/// validation span.
template <typename T>
double evaluate_val(const GptModel<T>& model, const FoldPlan& fold, std::span<const TokenId> tokens, std::size_t stride,
                    std::size_t chunk = 64) {
  const auto offsets = val_window_offsets(fold, model.config().context_len, stride);
  return mean_window_loss(model, tokens, offsets, chunk);
}

struct RunOptions {
  std::string run_id = "run";
  int fold = 0;
  /// Seconds since the run started; defaults to a steady wall clock.
  std::function<double()> clock;
  /// Called after each metrics record is appended.
  std::function<void(const MetricsRecord&)> on_record;
};

/// Trains `model` in place on one fold. Sequential and deterministic given
/// the model seed and train_cfg.seed.
template <typename T>
RunResult train_model(GptModel<T>& model, const TrainConfig& cfg, const FoldPlan& fold, std::span<const TokenId> tokens,
                      RunOptions opts = {}) {
  cfg.validate();
  const auto& mc = model.config();
  const std::size_t t = mc.context_len;
  const std::size_t stride = cfg.eval_tile_stride ? cfg.eval_tile_stride : t;
  if (fold.n != tokens.size()) throw ConfigError("train: fold plan does not match token stream length");
  const auto val_offsets = val_window_offsets(fold, t, stride);

  if (!opts.clock) {
    const auto start = std::chrono::steady_clock::now();
    opts.clock = [start] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  }

  BatchSampler sampler(tokens, fold, t, cfg.seed);
  BatchSampler eval_sampler(tokens, fold, t, hash_combine(cfg.seed, 2));
  Rng dropout_rng(hash_combine(cfg.seed, 1));
  AdamW<T> optimizer(cfg.optimizer);
  const auto schedule = cfg.schedule();

  RunResult result;
  auto record = [&](long iter) {
    double train_loss = 0.0;
    for (std::size_t i = 0; i < cfg.train_eval_batches; ++i) {
      Batch b = eval_sampler.sample_batch(cfg.batch_size);
      Tape<T> tape(false);
      train_loss += static_cast<double>(model.loss(tape, b.inputs, b.targets, false, dropout_rng).item());
    }
    train_loss /= static_cast<double>(cfg.train_eval_batches);
    MetricsRecord m{opts.run_id,        to_string(mc.attention.variant),
                    mc.attention.variant == AttentionVariant::standard ? 0.0 : mc.attention.effective_p(),
                    opts.fold,          iter, train_loss,
                    mean_window_loss(model, tokens, val_offsets, cfg.batch_size),
                    0.0};
    if (!std::isfinite(m.val_loss) || !std::isfinite(m.train_loss)) {
      result.failed = true;
      result.failure = "non-finite evaluation loss at iter " + std::to_string(iter);
      return;
    }
    m.elapsed_seconds = opts.clock();
    result.metrics.push_back(m);
    if (opts.on_record) opts.on_record(m);
  };

  record(0);
  auto& params = model.parameters();
  for (long step = 0; step < cfg.max_iters && !result.failed; ++step) {
    const double lr = lr_at(step + 1, schedule);
    Batch b = sampler.sample_batch(cfg.batch_size);
    Tape<T> tape;
    auto loss = model.loss(tape, b.inputs, b.targets, true, dropout_rng);
    const double loss_value = static_cast<double>(loss.item());
    double grad_norm = std::numeric_limits<double>::quiet_NaN();
    if (std::isfinite(loss_value)) {
      tape.backward(loss);
      grad_norm = clip_grad_norm<T>(params, cfg.grad_clip);
    }
    if (!std::isfinite(loss_value) || !std::isfinite(grad_norm)) {
      std::ostringstream os;
      os << "non-finite training state at iter " << step + 1 << ": loss=" << loss_value << " lr=" << lr
         << " grad_norm=" << grad_norm;
      result.failed = true;
      result.failure = os.str();
      break;
    }
    optimizer.step(params, lr);
    if ((step + 1) % cfg.eval_interval == 0) record(step + 1);
  }
  summarize(result);
  return result;
}

/// Builds a fresh model from `model_cfg` and trains it on one fold.
template <typename T = float>
RunResult run_training(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const FoldPlan& fold,
                       std::span<const TokenId> tokens, RunOptions opts = {}) {
  GptModel<T> model(model_cfg);
  return train_model(model, train_cfg, fold, tokens, std::move(opts));
}

// ---- metrics CSV ---------------------------------------------------------

inline constexpr const char* kMetricsHeader = "run_id,variant,p,fold,iter,train_loss,val_loss,elapsed_seconds";

inline std::string format_shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string to_csv_line(const MetricsRecord& m) {
  return m.run_id + ',' + m.variant + ',' + format_shortest(m.p) + ',' + std::to_string(m.fold) + ',' +
         std::to_string(m.iter) + ',' + format_fixed6(m.train_loss) + ',' + format_fixed6(m.val_loss) + ',' +
         format_fixed6(m.elapsed_seconds);
}

/// Append-only writer for one run's metrics file.
class MetricsCsvWriter {
 public:
  explicit MetricsCsvWriter(const std::filesystem::path& path) : os_(path, std::ios::trunc) {
    if (!os_) throw IoError(path.string() + ": cannot write metrics CSV");
    os_ << kMetricsHeader << '\n';
    os_.flush();
  }
  void append(const MetricsRecord& m) {
    os_ << to_csv_line(m) << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

inline void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
  MetricsCsvWriter w(path);
  for (const auto& m : records) w.append(m);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw IoError(where + ": bad number '" + s + "'");
  return v;
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string() + ": cannot open metrics CSV");
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw IoError(path.string() + ": unexpected metrics header");
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 8) throw IoError(where + ": expected 8 fields");
    MetricsRecord m;
    m.run_id = f[0];
    m.variant = f[1];
    m.p = parse_double(f[2], where);
    m.fold = static_cast<int>(parse_double(f[3], where));
    m.iter = static_cast<long>(parse_double(f[4], where));
    m.train_loss = parse_double(f[5], where);
    m.val_loss = parse_double(f[6], where);
    m.elapsed_seconds = parse_double(f[7], where);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace lpattn
