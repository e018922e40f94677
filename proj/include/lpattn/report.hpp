#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "lpattn/error.hpp"
#include "lpattn/training.hpp"

namespace lpattn {

/// Box-plot statistics. Quartiles follow the median-exclusive rule: q1 and q3
/// are the medians of the lower and upper halves, excluding the overall
/// median when n is odd. Whiskers reach the most extreme points within
/// 1.5 x IQR of the box; everything beyond is an outlier.
struct RuntimeStats {
  std::size_t n = 0;
  double mean = 0, median = 0, q1 = 0, q3 = 0, whisker_lo = 0, whisker_hi = 0;
  std::vector<double> outliers;
};

namespace detail {
inline double median_sorted(const double* first, std::size_t n) {
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return n % 2 ? first[n / 2] : 0.5 * (first[n / 2 - 1] + first[n / 2]);
}
}  // namespace detail

inline RuntimeStats runtime_stats(std::vector<double> values) {
  RuntimeStats s;
  s.n = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  s.median = detail::median_sorted(values.data(), n);
  const std::size_t half = n / 2;
  if (half == 0) {
    s.q1 = s.q3 = s.median;
  } else {
    s.q1 = detail::median_sorted(values.data(), half);
    s.q3 = detail::median_sorted(values.data() + (n - half), half);
  }
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr;
  const double hi_fence = s.q3 + 1.5 * iqr;
  s.whisker_lo = std::numeric_limits<double>::infinity();
  s.whisker_hi = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      s.outliers.push_back(v);
    } else {
      s.whisker_lo = std::min(s.whisker_lo, v);
      s.whisker_hi = std::max(s.whisker_hi, v);
    }
  }
  return s;
}

/// One (variant, p) cell of the sweep, aggregated over its folds.
struct GroupSummary {
  std::string variant;
  double p = 0.0;
  std::vector<long> iters;
  std::vector<int> folds;
  std::vector<std::vector<double>> fold_curves;  // parallel to folds
  std::vector<double> mean_curve;
  double averaged_min = 0.0;  // min of the fold-averaged curve
  long argmin_iter = 0;
  double mean_of_fold_minima = 0.0;
  RuntimeStats runtime;

  std::string label() const { return variant == "lp" ? "p=" + format_shortest(p) : variant; }
};

struct SweepSummary {
  std::vector<GroupSummary> groups;  // sorted by (p, variant)
  bool empty() const { return groups.empty(); }
};

/// Fold-averages validation curves per (variant, p). Runs with no records
/// are ignored; runs in one group must share an evaluation grid.
inline SweepSummary aggregate(std::span<const RunResult> runs) {
  std::map<std::pair<double, std::string>, std::vector<const RunResult*>> grouped;
  for (const auto& r : runs) {
    if (r.failed || r.metrics.empty()) continue;
    grouped[{r.metrics.front().p, r.metrics.front().variant}].push_back(&r);
  }
  SweepSummary summary;
  for (auto& [key, members] : grouped) {
    GroupSummary g;
    g.p = key.first;
    g.variant = key.second;
    std::sort(members.begin(), members.end(),
              [](const RunResult* a, const RunResult* b) { return a->metrics.front().fold < b->metrics.front().fold; });
    for (const auto* r : members) {
      std::vector<long> iters;
      std::vector<double> curve;
      for (const auto& m : r->metrics) {
        iters.push_back(m.iter);
        curve.push_back(m.val_loss);
      }
      if (g.iters.empty()) {
        g.iters = iters;
      } else if (iters != g.iters) {
        throw AggregationError("aggregate: run " + r->metrics.front().run_id + " does not share the evaluation grid of group " +
                               g.label());
      }
      const int fold = r->metrics.front().fold;
      if (!g.folds.empty() && g.folds.back() == fold) {
        throw AggregationError("aggregate: duplicate fold " + std::to_string(fold) + " in group " + g.label());
      }
      g.folds.push_back(fold);
      g.fold_curves.push_back(std::move(curve));
    }
    const double k = static_cast<double>(g.fold_curves.size());
    g.mean_curve.assign(g.iters.size(), 0.0);
    for (const auto& c : g.fold_curves)
      for (std::size_t i = 0; i < c.size(); ++i) g.mean_curve[i] += c[i];
    for (auto& v : g.mean_curve) v /= k;
    const auto it = std::min_element(g.mean_curve.begin(), g.mean_curve.end());
    g.averaged_min = *it;
    g.argmin_iter = g.iters[static_cast<std::size_t>(it - g.mean_curve.begin())];
    double minima = 0.0;
    for (const auto& c : g.fold_curves) minima += *std::min_element(c.begin(), c.end());
    g.mean_of_fold_minima = minima / k;
    std::vector<double> times;
    for (const auto* r : members) times.push_back(r->metrics.back().elapsed_seconds);
    g.runtime = runtime_stats(std::move(times));
    summary.groups.push_back(std::move(g));
  }
  return summary;
}

/// Reads every completed run CSV (`*.csv`) in `runs_dir`, sorted by name.
inline std::vector<RunResult> load_runs(const std::filesystem::path& runs_dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(runs_dir)) {
    for (const auto& e : std::filesystem::directory_iterator(runs_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunResult> runs;
  for (const auto& f : files) {
    RunResult r;
    r.metrics = read_metrics_csv(f);
    summarize(r);
    runs.push_back(std::move(r));
  }
  return runs;
}

// ---- SVG -----------------------------------------------------------------

namespace svg {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* color(std::size_t i) {
  static constexpr const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Frame {
  double width = 720, height = 440, left = 70, right = 150, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

inline void axes(std::ostringstream& os, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
  os << "<rect x=\"0\" y=\"0\" width=\"" << f.width << "\" height=\"" << f.height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.height - f.bottom << "\" x2=\"" << f.width - f.right << "\" y2=\""
     << f.height - f.bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\"" << f.height - f.bottom
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    os << "<text x=\"" << f.left - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv)
       << "</text>\n";
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    os << "<text x=\"" << f.px(xv) << "\" y=\"" << f.height - f.bottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << fmt(xv) << "</text>\n";
  }
  os << "<text x=\"" << (f.left + f.width - f.right) / 2 << "\" y=\"" << f.height - 10
     << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
  os << "<text x=\"16\" y=\"" << f.height / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << f.height / 2 << ")\">" << escape(ylabel) << "</text>\n";
}

inline std::string line_chart(const std::string& title, const std::vector<Series>& series) {
  Frame f;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (double x : s.x) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
    for (double y : s.y) ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  f.x0 = xmin, f.x1 = xmax, f.y0 = ymin, f.y1 = ymax;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\">\n";
  axes(os, f, title, "iteration", "validation loss");
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline fill=\"none\" stroke=\"" << color(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < s.x.size(); ++j) os << (j ? " " : "") << f.px(s.x[j]) << ',' << f.py(s.y[j]);
    os << "\"/>\n";
    const double ly = f.top + 18.0 * static_cast<double>(i);
    os << "<text x=\"" << f.width - f.right + 10 << "\" y=\"" << ly + 4 << "\" font-size=\"12\" fill=\"" << color(i) << "\">"
       << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string box_chart(const std::string& title, const std::vector<std::pair<std::string, RuntimeStats>>& boxes) {
  Frame f;
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& [_, s] : boxes) {
    ymin = std::min({ymin, s.whisker_lo, s.mean});
    ymax = std::max({ymax, s.whisker_hi, s.mean});
    for (double o : s.outliers) ymin = std::min(ymin, o), ymax = std::max(ymax, o);
  }
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (ymax <= ymin) ymin -= 0.5, ymax += 0.5;
  f.x0 = 0, f.x1 = static_cast<double>(boxes.size()) + 1, f.y0 = ymin, f.y1 = ymax;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height << "\">\n";
  axes(os, f, title, "group", "seconds per run");
  const double half = 0.3 * (f.px(1) - f.px(0));
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& [label, s] = boxes[i];
    const double cx = f.px(static_cast<double>(i) + 1);
    os << "<line x1=\"" << cx << "\" y1=\"" << f.py(s.whisker_lo) << "\" x2=\"" << cx << "\" y2=\"" << f.py(s.whisker_hi)
       << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << cx - half << "\" y=\"" << f.py(s.q3) << "\" width=\"" << 2 * half << "\" height=\""
       << std::max(0.5, f.py(s.q1) - f.py(s.q3)) << "\" fill=\"" << color(i) << "\" fill-opacity=\"0.4\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << cx - half << "\" y1=\"" << f.py(s.median) << "\" x2=\"" << cx + half << "\" y2=\""
       << f.py(s.median) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    const double my = f.py(s.mean);
    os << "<polygon points=\"" << cx << ',' << my - 5 << ' ' << cx + 5 << ',' << my << ' ' << cx << ',' << my + 5 << ' '
       << cx - 5 << ',' << my << "\" fill=\"white\" stroke=\"black\"/>\n";
    for (double o : s.outliers) os << "<circle cx=\"" << cx << "\" cy=\"" << f.py(o) << "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << cx << "\" y=\"" << f.height - f.bottom + 30 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << escape(label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace svg

// ---- export ----------------------------------------------------------------

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot write");
  os << content;
  if (!os) throw IoError(path.string() + ": write failed");
}

// iter, one column per labelled curve; blank where a curve has no point.
inline std::string curves_csv(const std::vector<std::string>& labels, const std::vector<const std::vector<long>*>& iters,
                              const std::vector<const std::vector<double>*>& values) {
  std::set<long> all;
  for (const auto* it : iters) all.insert(it->begin(), it->end());
  std::ostringstream os;
  os << "iter";
  for (const auto& l : labels) os << ',' << l;
  os << '\n';
  for (long t : all) {
    os << t;
    for (std::size_t c = 0; c < labels.size(); ++c) {
      os << ',';
      const auto& xs = *iters[c];
      auto pos = std::find(xs.begin(), xs.end(), t);
      if (pos != xs.end()) os << format_fixed6((*values[c])[static_cast<std::size_t>(pos - xs.begin())]);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace detail

inline nlohmann::json to_json(const SweepSummary& s) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : s.groups) {
    groups.push_back({{"variant", g.variant},
                      {"p", g.p},
                      {"iters", g.iters},
                      {"folds", g.folds},
                      {"fold_curves", g.fold_curves},
                      {"mean_curve", g.mean_curve},
                      {"averaged_min", g.averaged_min},
                      {"argmin_iter", g.argmin_iter},
                      {"mean_of_fold_minima", g.mean_of_fold_minima},
                      {"runtime",
                       {{"n", g.runtime.n},
                        {"mean", g.runtime.mean},
                        {"median", g.runtime.median},
                        {"q1", g.runtime.q1},
                        {"q3", g.runtime.q3},
                        {"whisker_lo", g.runtime.whisker_lo},
                        {"whisker_hi", g.runtime.whisker_hi},
                        {"outliers", g.runtime.outliers}}}});
  }
  return {{"groups", groups}};
}

/// Writes curves_by_p.csv, fold_<i>_curves.csv, min_loss_table.csv,
/// runtime_stats.csv, summary.json and SVG charts into `dir`.
inline std::vector<std::filesystem::path> export_plots(const SweepSummary& summary, const std::filesystem::path& dir) {
  if (summary.empty()) throw AggregationError("export_plots: summary is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": cannot create output directory");
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    detail::write_file(dir / name, content);
    written.push_back(dir / name);
  };

  std::vector<std::string> labels;
  std::vector<const std::vector<long>*> iters;
  std::vector<const std::vector<double>*> curves;
  std::vector<svg::Series> series;
  for (const auto& g : summary.groups) {
    labels.push_back(g.label());
    iters.push_back(&g.iters);
    curves.push_back(&g.mean_curve);
    series.push_back({g.label(), std::vector<double>(g.iters.begin(), g.iters.end()), g.mean_curve});
  }
  emit("curves_by_p.csv", detail::curves_csv(labels, iters, curves));
  emit("curves_by_p.svg", svg::line_chart("Validation loss averaged over folds", series));

  std::set<int> folds;
  for (const auto& g : summary.groups) folds.insert(g.folds.begin(), g.folds.end());
  for (int fold : folds) {
    std::vector<std::string> fl;
    std::vector<const std::vector<long>*> fi;
    std::vector<const std::vector<double>*> fc;
    std::vector<svg::Series> fs;
    for (const auto& g : summary.groups) {
      auto pos = std::find(g.folds.begin(), g.folds.end(), fold);
      if (pos == g.folds.end()) continue;
      const auto& c = g.fold_curves[static_cast<std::size_t>(pos - g.folds.begin())];
      fl.push_back(g.label());
      fi.push_back(&g.iters);
      fc.push_back(&c);
      fs.push_back({g.label(), std::vector<double>(g.iters.begin(), g.iters.end()), c});
    }
    const std::string stem = "fold_" + std::to_string(fold) + "_curves";
    emit(stem + ".csv", detail::curves_csv(fl, fi, fc));
    emit(stem + ".svg", svg::line_chart("Fold " + std::to_string(fold) + " validation loss", fs));
  }

  std::ostringstream mins;
  mins << "p,averaged_min,argmin_iter,mean_of_fold_minima,variant,n_folds\n";
  for (const auto& g : summary.groups) {
    mins << format_shortest(g.p) << ',' << format_fixed6(g.averaged_min) << ',' << g.argmin_iter << ','
         << format_fixed6(g.mean_of_fold_minima) << ',' << g.variant << ',' << g.folds.size() << '\n';
  }
  emit("min_loss_table.csv", mins.str());

  std::ostringstream rt;
  rt << "p,mean,median,q1,q3,whisker_lo,whisker_hi,outliers,variant,n_runs\n";
  std::vector<std::pair<std::string, RuntimeStats>> boxes;
  for (const auto& g : summary.groups) {
    const auto& s = g.runtime;
    rt << format_shortest(g.p) << ',' << format_fixed6(s.mean) << ',' << format_fixed6(s.median) << ','
       << format_fixed6(s.q1) << ',' << format_fixed6(s.q3) << ',' << format_fixed6(s.whisker_lo) << ','
       << format_fixed6(s.whisker_hi) << ',';
    for (std::size_t i = 0; i < s.outliers.size(); ++i) rt << (i ? ";" : "") << format_fixed6(s.outliers[i]);
    rt << ',' << g.variant << ',' << s.n << '\n';
    boxes.emplace_back(g.label(), s);
  }
  emit("runtime_stats.csv", rt.str());
  emit("runtime_box.svg", svg::box_chart("Training time per run", boxes));
  emit("summary.json", to_json(summary).dump(2) + "\n");
  return written;
}

}  // namespace lpattn
