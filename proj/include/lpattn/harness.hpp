#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lpattn/data.hpp"
#include "lpattn/error.hpp"
#include "lpattn/model.hpp"
#include "lpattn/report.hpp"
#include "lpattn/rng.hpp"
#include "lpattn/training.hpp"

namespace lpattn {

struct SweepConfig {
  std::vector<double> p_values{1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
  std::vector<AttentionVariant> variants{AttentionVariant::lp};
  std::size_t k_folds = 10;
  ModelConfig model = ModelConfig::paper();
  TrainConfig train = TrainConfig::paper();
  std::filesystem::path output_dir = "lpattn_out";
  std::filesystem::path data_path;
  std::size_t parallelism = 1;
  std::uint64_t base_seed = 1337;

  static SweepConfig preset(const std::string& name) {
    SweepConfig c;
    if (name == "paper") return c;
    if (name == "tiny") {
      c.model = ModelConfig::tiny();
      c.train = TrainConfig::tiny();
      return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected paper or tiny)");
  }

  void validate() const {
    if (p_values.empty() && std::count(variants.begin(), variants.end(), AttentionVariant::lp)) {
      throw ConfigError("sweep: p_values is empty");
    }
    for (double p : p_values)
      if (!(p >= 1.0)) throw ConfigError("sweep: every p must be >= 1, got " + format_shortest(p));
    if (variants.empty()) throw ConfigError("sweep: no variants selected");
    if (k_folds == 0) throw ConfigError("sweep: k_folds must be positive");
    if (parallelism == 0) throw ConfigError("sweep: parallelism must be positive");
    model.validate();
    train.validate();
  }
};

/// One cell of the (variant, p) x fold grid.
struct RunSpec {
  AttentionVariant variant;
  double p;
  int fold;
  std::string run_id;
  std::uint64_t seed;
};

inline std::string run_id_for(AttentionVariant v, double p, int fold) {
  std::string id = to_string(v);
  if (v == AttentionVariant::lp) id += "_p" + format_shortest(p);
  return id + "_fold" + std::to_string(fold);
}

/// Grid cells in execution order: variants, then p, then fold.
inline std::vector<RunSpec> plan_grid(const SweepConfig& c) {
  std::vector<RunSpec> cells;
  for (auto v : c.variants) {
    std::vector<double> ps = v == AttentionVariant::lp ? c.p_values
                             : v == AttentionVariant::qknorm ? std::vector<double>{2.0}
                                                             : std::vector<double>{0.0};
    for (double p : ps)
      for (std::size_t f = 0; f < c.k_folds; ++f) {
        const int fold = static_cast<int>(f);
        cells.push_back({v, p, fold, run_id_for(v, p, fold), run_seed(c.base_seed, p, fold)});
      }
  }
  return cells;
}

/// Model config for one cell; the seed derives from the cell's seed.
inline ModelConfig model_for(const SweepConfig& c, const RunSpec& cell) {
  ModelConfig m = c.model;
  m.attention.variant = cell.variant;
  if (cell.variant == AttentionVariant::lp) m.attention.p = cell.p;
  m.seed = hash_combine(cell.seed, 0x6d6f64656cULL);
  m.sync_attention();
  return m;
}

inline TrainConfig train_for(const SweepConfig& c, const RunSpec& cell) {
  TrainConfig t = c.train;
  t.seed = hash_combine(cell.seed, 0x747261696eULL);
  return t;
}

/// Effective concurrency: the configured value, capped by LPATTN_THREADS.
inline std::size_t effective_parallelism(std::size_t configured) {
  std::size_t n = configured;
  if (const char* env = std::getenv("LPATTN_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap > 0) n = std::min(n, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      throw ConfigError(std::string("LPATTN_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return std::max<std::size_t>(n, 1);
}

struct SweepOutcome {
  SweepSummary summary;
  std::size_t runs_executed = 0;
  std::size_t runs_skipped = 0;
  std::vector<std::string> failed_runs;
};

inline std::filesystem::path runs_dir(const std::filesystem::path& out) { return out / "runs"; }

/// Executes (or resumes) the grid and aggregates from the run CSVs on disk.
/// A cell is skipped when its `<run_id>.csv` or `<run_id>.failed` exists.
/// `max_new_runs` stops after that many freshly executed cells (0: no limit).
/// `make_clock`, when set, supplies each run's elapsed-time source in place of
/// the wall clock (used for byte-level reproducibility checks).
inline SweepOutcome run_sweep(const SweepConfig& config, std::span<const TokenId> tokens, std::ostream* log = nullptr,
                              std::size_t max_new_runs = 0,
                              const std::function<std::function<double()>()>& make_clock = {}) {
  config.validate();
  const auto folds = make_folds(tokens.size(), config.k_folds, config.model.context_len + 1);
  const auto dir = runs_dir(config.output_dir);
  std::filesystem::create_directories(dir);

  SweepOutcome outcome;
  std::vector<RunSpec> todo;
  for (auto& cell : plan_grid(config)) {
    const bool done = std::filesystem::exists(dir / (cell.run_id + ".csv")) ||
                      std::filesystem::exists(dir / (cell.run_id + ".failed"));
    if (done) {
      ++outcome.runs_skipped;
    } else if (max_new_runs == 0 || todo.size() < max_new_runs) {
      todo.push_back(cell);
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const auto& cell = todo[i];
      const auto partial = dir / (cell.run_id + ".csv.partial");
      RunResult result;
      try {
        MetricsCsvWriter writer(partial);
        RunOptions opts;
        opts.run_id = cell.run_id;
        opts.fold = cell.fold;
        if (make_clock) opts.clock = make_clock();
        opts.on_record = [&](const MetricsRecord& m) { writer.append(m); };
        result = run_training(model_for(config, cell), train_for(config, cell), folds[static_cast<std::size_t>(cell.fold)],
                              tokens, std::move(opts));
      } catch (const std::exception& e) {
        result.failed = true;
        result.failure = e.what();
      }
      std::lock_guard lock(mu);
      if (result.failed) {
        std::ofstream(dir / (cell.run_id + ".failed")) << result.failure << '\n';
        std::filesystem::remove(partial);
        outcome.failed_runs.push_back(cell.run_id);
        if (log) *log << "warning: run " << cell.run_id << " failed: " << result.failure << '\n';
      } else {
        std::filesystem::rename(partial, dir / (cell.run_id + ".csv"));
        if (log) {
          *log << "finished " << cell.run_id << " min_val_loss=" << format_fixed6(result.min_val_loss) << " @"
               << result.argmin_iter << " (" << format_fixed6(result.total_wall_seconds) << " s)\n";
        }
      }
      ++outcome.runs_executed;
    }
  };
  const std::size_t threads = std::min(effective_parallelism(config.parallelism), std::max<std::size_t>(todo.size(), 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }

  const auto runs = load_runs(dir);
  outcome.summary = aggregate(runs);
  if (!outcome.summary.empty()) export_plots(outcome.summary, config.output_dir);
  return outcome;
}

// ---- config file -------------------------------------------------------------
//
// INI-style key/value file. Keys outside a section: `preset`. Sections:
//   [model]     n_layer n_head d_model context_len vocab_size dropout tie_weights seed
//   [attention] variant p alpha_init norm_epsilon
//   [train]     max_iters eval_interval eval_tile_stride batch_size warmup_iters lr_max lr_min
//               grad_clip beta1 beta2 eps weight_decay train_eval_batches seed
//   [sweep]     p_values variants k_folds parallelism base_seed output_dir data

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  V v{};
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + text + "'");
  } else {
    is >> v;
    if (!is || !is.eof()) throw ConfigError("config: key '" + key + "' has invalid value '" + text + "'");
    if constexpr (std::is_unsigned_v<V>) {
      if (text.find('-') != std::string::npos) throw ConfigError("config: key '" + key + "' must be non-negative");
    }
  }
  return v;
}

}  // namespace detail

/// Applies the settings in an INI text on top of `base`. Unknown keys are
/// rejected so typos fail loudly.
inline SweepConfig apply_config_text(SweepConfig c, const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (auto preset = tree.get_optional<std::string>("preset")) {
    const auto out = c.output_dir;
    const auto data = c.data_path;
    c = SweepConfig::preset(*preset);
    c.output_dir = out;
    c.data_path = data;
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      if (section != "preset") throw ConfigError("config: unknown top-level key '" + section + "'");
      continue;
    }
    for (const auto& [key, node] : body) {
      const std::string value = node.get_value<std::string>();
      const std::string full = section + "." + key;
      using detail::parse_value;
      bool known = true;
      if (section == "model") {
        if (key == "n_layer") c.model.n_layer = parse_value<std::size_t>(full, value);
        else if (key == "n_head") c.model.n_head = parse_value<std::size_t>(full, value);
        else if (key == "d_model") c.model.d_model = parse_value<std::size_t>(full, value);
        else if (key == "context_len") c.model.context_len = parse_value<std::size_t>(full, value);
        else if (key == "vocab_size") c.model.vocab_size = parse_value<std::size_t>(full, value);
        else if (key == "dropout") c.model.dropout = parse_value<double>(full, value);
        else if (key == "tie_weights") c.model.tie_weights = parse_value<bool>(full, value);
        else if (key == "seed") c.model.seed = parse_value<std::uint64_t>(full, value);
        else known = false;
      } else if (section == "attention") {
        if (key == "variant") c.model.attention.variant = parse_variant(value);
        else if (key == "p") c.model.attention.p = parse_value<double>(full, value);
        else if (key == "alpha_init") c.model.attention.alpha_init = parse_value<double>(full, value);
        else if (key == "norm_epsilon") c.model.attention.norm_epsilon = parse_value<double>(full, value);
        else known = false;
      } else if (section == "train") {
        auto& t = c.train;
        if (key == "max_iters") t.max_iters = parse_value<long>(full, value);
        else if (key == "eval_interval") t.eval_interval = parse_value<long>(full, value);
        else if (key == "eval_tile_stride") t.eval_tile_stride = parse_value<std::size_t>(full, value);
        else if (key == "batch_size") t.batch_size = parse_value<std::size_t>(full, value);
        else if (key == "warmup_iters") t.warmup_iters = parse_value<long>(full, value);
        else if (key == "lr_max") t.lr_max = parse_value<double>(full, value);
        else if (key == "lr_min") t.lr_min = parse_value<double>(full, value);
        else if (key == "grad_clip") t.grad_clip = parse_value<double>(full, value);
        else if (key == "beta1") t.optimizer.beta1 = parse_value<double>(full, value);
        else if (key == "beta2") t.optimizer.beta2 = parse_value<double>(full, value);
        else if (key == "eps") t.optimizer.eps = parse_value<double>(full, value);
        else if (key == "weight_decay") t.optimizer.weight_decay = parse_value<double>(full, value);
        else if (key == "train_eval_batches") t.train_eval_batches = parse_value<std::size_t>(full, value);
        else if (key == "seed") t.seed = parse_value<std::uint64_t>(full, value);
        else known = false;
      } else if (section == "sweep") {
        if (key == "p_values") {
          c.p_values.clear();
          for (const auto& s : detail::split_list(value)) c.p_values.push_back(parse_value<double>(full, s));
        } else if (key == "variants") {
          c.variants.clear();
          for (const auto& s : detail::split_list(value)) c.variants.push_back(parse_variant(s));
        } else if (key == "k_folds") c.k_folds = parse_value<std::size_t>(full, value);
        else if (key == "parallelism") c.parallelism = parse_value<std::size_t>(full, value);
        else if (key == "base_seed") c.base_seed = parse_value<std::uint64_t>(full, value);
        else if (key == "output_dir") c.output_dir = value;
        else if (key == "data") c.data_path = value;
        else known = false;
      } else {
        throw ConfigError("config: unknown section [" + section + "]");
      }
      if (!known) throw ConfigError("config: unknown key '" + full + "'");
    }
  }
  c.model.sync_attention();
  return c;
}

inline SweepConfig load_config_file(const std::filesystem::path& path, SweepConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << is.rdbuf();
  return apply_config_text(std::move(base), ss.str());
}

}  // namespace lpattn
