// Command-line front end: sweep, train, eval, sample, report, selftest.
//
// Exit codes: 0 success, 1 run failure (or nothing to report), 2 bad flags or
// configuration.

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lpattn/lpattn.hpp"

namespace fs = std::filesystem;
using namespace lpattn;

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

/// Flags shared by the run-producing subcommands. Unset optionals leave the
/// preset/config-file value alone.
struct CommonFlags {
  std::string preset = "paper";
  std::string config;
  std::string data;
  std::string out;
  std::vector<double> p;
  std::optional<int> fold;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> variants;
  std::optional<std::size_t> folds;
  std::optional<std::size_t> parallelism;
  std::optional<long> max_iters;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool multi_p) {
  cmd->add_option("--preset", f.preset, "Base settings: paper or tiny")
      ->check(CLI::IsMember({"paper", "tiny"}))
      ->capture_default_str();
  cmd->add_option("--config", f.config, "INI config file applied on top of the preset")->check(CLI::ExistingFile);
  cmd->add_option("--data", f.data, "UTF-8 text corpus");
  cmd->add_option("--out", f.out, "Output directory");
  if (multi_p) {
    cmd->add_option("--p", f.p, "Normalisation exponents to sweep (comma separated)")->delimiter(',');
  } else {
    cmd->add_option("--p", f.p, "Normalisation exponent")->expected(1);
  }
  cmd->add_option("--seed", f.seed, "Base seed");
  cmd->add_option("--variant", f.variants, "Attention variant(s): lp, qknorm, standard")->delimiter(',');
  cmd->add_option("--folds", f.folds, "Number of cross-validation folds");
  cmd->add_option("--max-iters", f.max_iters, "Override the number of training iterations");
}

SweepConfig resolve(const CommonFlags& f) {
  SweepConfig c = SweepConfig::preset(f.preset);
  if (!f.config.empty()) c = load_config_file(f.config, c);
  if (!f.data.empty()) c.data_path = f.data;
  if (!f.out.empty()) c.output_dir = f.out;
  if (!f.p.empty()) c.p_values = f.p;
  if (f.seed) c.base_seed = *f.seed;
  if (!f.variants.empty()) {
    c.variants.clear();
    for (const auto& v : f.variants) c.variants.push_back(parse_variant(v));
  }
  if (f.folds) c.k_folds = *f.folds;
  if (f.parallelism) c.parallelism = *f.parallelism;
  if (f.max_iters) {
    c.train.max_iters = *f.max_iters;
    if (c.train.max_iters > 0 && c.train.max_iters % c.train.eval_interval != 0)
      c.train.eval_interval = std::gcd(c.train.max_iters, c.train.eval_interval);
  }
  return c;
}

struct LoadedData {
  CharVocab vocab;
  std::vector<TokenId> tokens;
};

LoadedData load_data(const SweepConfig& c) {
  if (c.data_path.empty()) throw ConfigError("no corpus given (use --data or [sweep] data = ...)");
  auto corpus = load_corpus(c.data_path);
  LoadedData d{CharVocab::from_text(corpus.text), {}};
  d.tokens = d.vocab.encode(corpus.text);
  std::cerr << "corpus " << c.data_path.string() << ": " << corpus.char_count << " chars, " << corpus.line_count
            << " lines, " << d.vocab.size() << " symbols\n";
  return d;
}

void print_summary(const SweepSummary& s, std::ostream& os) {
  os << std::left << std::setw(10) << "group" << std::setw(8) << "folds" << std::setw(14) << "averaged_min"
     << std::setw(8) << "@iter" << std::setw(16) << "mean_fold_min" << "mean_seconds\n";
  for (const auto& g : s.groups) {
    os << std::setw(10) << g.label() << std::setw(8) << g.folds.size() << std::setw(14) << format_fixed6(g.averaged_min)
       << std::setw(8) << g.argmin_iter << std::setw(16) << format_fixed6(g.mean_of_fold_minima)
       << format_fixed6(g.runtime.mean) << '\n';
  }
}

int cmd_sweep(const CommonFlags& f, std::size_t max_runs) {
  SweepConfig c = resolve(f);
  auto data = load_data(c);
  c.model.vocab_size = data.vocab.size();
  c.validate();
  std::cerr << "grid: " << plan_grid(c).size() << " runs, " << effective_parallelism(c.parallelism)
            << " at a time, output " << c.output_dir.string() << '\n';
  auto outcome = run_sweep(c, data.tokens, &std::cerr, max_runs);
  std::cerr << "executed " << outcome.runs_executed << ", skipped " << outcome.runs_skipped << " (already on disk)\n";
  if (!outcome.summary.empty()) print_summary(outcome.summary, std::cout);
  if (!outcome.failed_runs.empty()) {
    std::cerr << outcome.failed_runs.size() << " run(s) failed and were excluded from the summary\n";
    return kRunFailure;
  }
  return kOk;
}

int cmd_train(const CommonFlags& f) {
  SweepConfig c = resolve(f);
  if (c.variants.size() != 1) throw ConfigError("train: pass exactly one --variant");
  const auto variant = c.variants.front();
  if (variant == AttentionVariant::lp && c.p_values.size() != 1) throw ConfigError("train: pass exactly one --p");
  const int fold = f.fold.value_or(0);
  if (fold < 0 || static_cast<std::size_t>(fold) >= c.k_folds) {
    throw ConfigError("train: --fold must be in [0, " + std::to_string(c.k_folds) + ")");
  }
  auto data = load_data(c);
  c.model.vocab_size = data.vocab.size();
  c.validate();

  // Same cell definition as the sweep, so a single run reproduces its grid twin.
  RunSpec cell;
  for (const auto& s : plan_grid(c))
    if (s.variant == variant && s.fold == fold) cell = s;
  const auto folds = make_folds(data.tokens.size(), c.k_folds, c.model.context_len + 1);
  const auto dir = runs_dir(c.output_dir);
  fs::create_directories(dir);
  const auto csv = dir / (cell.run_id + ".csv");

  GptModel<float> model(model_for(c, cell));
  MetricsCsvWriter writer(dir / (cell.run_id + ".csv.partial"));
  RunOptions opts;
  opts.run_id = cell.run_id;
  opts.fold = fold;
  opts.on_record = [&](const MetricsRecord& m) {
    writer.append(m);
    std::cerr << cell.run_id << " iter " << m.iter << " train " << format_fixed6(m.train_loss) << " val "
              << format_fixed6(m.val_loss) << " (" << format_fixed6(m.elapsed_seconds) << " s)\n";
  };
  auto result = train_model(model, train_for(c, cell), folds[static_cast<std::size_t>(fold)], data.tokens, opts);
  if (result.failed) {
    std::cerr << "error: " << cell.run_id << " failed: " << result.failure << '\n';
    return kRunFailure;
  }
  fs::rename(dir / (cell.run_id + ".csv.partial"), csv);
  const auto ckpt = c.output_dir / (cell.run_id + ".ckpt");
  save_checkpoint(ckpt, model, data.vocab);
  std::cout << "min_val_loss " << format_fixed6(result.min_val_loss) << " at iter " << result.argmin_iter << '\n'
            << "metrics " << csv.string() << '\n'
            << "checkpoint " << ckpt.string() << '\n';
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path, int fold, std::size_t k) {
  auto loaded = load_checkpoint<float>(checkpoint);
  auto corpus = load_corpus(data_path);
  auto tokens = loaded.vocab.encode(corpus.text);
  const auto& mc = loaded.model.config();
  const auto folds = make_folds(tokens.size(), k, mc.context_len + 1);
  if (fold < 0 || static_cast<std::size_t>(fold) >= k) throw ConfigError("eval: --fold out of range");
  const double loss = evaluate_val(loaded.model, folds[static_cast<std::size_t>(fold)], tokens, mc.context_len);
  std::cout << "val_loss " << format_fixed6(loss) << '\n';
  return kOk;
}

int cmd_sample(const std::string& checkpoint, const std::string& prompt, std::size_t n, double temperature,
               std::uint64_t seed) {
  auto loaded = load_checkpoint<float>(checkpoint);
  Rng rng(seed);
  auto ids = loaded.model.generate(loaded.vocab.encode(prompt), n, temperature, rng);
  std::cout << loaded.vocab.decode(ids) << '\n';
  return kOk;
}

int cmd_report(const std::string& out) {
  const fs::path dir = out;
  auto summary = aggregate(load_runs(runs_dir(dir)));
  if (summary.empty()) {
    std::cerr << "error: no completed run CSVs under " << runs_dir(dir).string() << '\n';
    return kRunFailure;
  }
  for (const auto& p : export_plots(summary, dir)) std::cerr << "wrote " << p.string() << '\n';
  print_summary(summary, std::cout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer language models with lp-normalised attention: training, sweeps and reports"};
  app.require_subcommand(1);

  CommonFlags sweep_flags;
  std::size_t max_runs = 0;
  auto* sweep = app.add_subcommand("sweep", "Run (or resume) the p x fold grid and aggregate it");
  add_common(sweep, sweep_flags, true);
  sweep->add_option("--parallelism", sweep_flags.parallelism, "Concurrent runs (capped by LPATTN_THREADS)");
  sweep->add_option("--max-runs", max_runs, "Stop after this many new runs (0: no limit)");

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train", "Train one (variant, p, fold) cell; writes its CSV and a checkpoint");
  add_common(train, train_flags, false);
  train->add_option("--fold", train_flags.fold, "Held-out fold index");

  std::string checkpoint, data_path, prompt = "\n";
  int fold = 0;
  std::size_t k = 10, n_tokens = 500;
  double temperature = 1.0;
  std::uint64_t seed = 1337;
  auto* eval = app.add_subcommand("eval", "Validation loss of a checkpoint on one fold");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path)->required();
  eval->add_option("--fold", fold)->capture_default_str();
  eval->add_option("--folds", k)->capture_default_str();

  auto* sample = app.add_subcommand("sample", "Generate text from a checkpoint");
  sample->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  sample->add_option("--prompt", prompt, "Prompt text (default: a newline)");
  sample->add_option("--tokens", n_tokens)->capture_default_str();
  sample->add_option("--temperature", temperature, "0 for greedy decoding")->capture_default_str();
  sample->add_option("--seed", seed)->capture_default_str();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Re-aggregate run CSVs under <out>/runs and export tables and charts");
  report->add_option("--out", report_dir, "Sweep output directory")->required();

  auto* selftest = app.add_subcommand("selftest", "Run quick invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kConfigError;
  }

  try {
    if (*sweep) return cmd_sweep(sweep_flags, max_runs);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(checkpoint, data_path, fold, k);
    if (*sample) return cmd_sample(checkpoint, prompt, n_tokens, temperature, seed);
    if (*report) return cmd_report(report_dir);
    if (*selftest) return run_selftest(std::cout) ? kOk : kRunFailure;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return kOk;
}
