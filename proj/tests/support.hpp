#pragma once

// Test-only helpers: random tensors and a central finite-difference oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lpattn/lpattn.hpp"

namespace lpattn::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0, bool grad = true) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(dist(gen));
  t.set_requires_grad(grad);
  return t;
}

/// Values uniformly drawn from [min_abs, max_abs] with a random sign, so no
/// component sits near the |x| kink.
template <typename T = double>
Tensor<T> random_away_from_zero(Shape shape, std::mt19937_64& gen, double min_abs = 0.05, double max_abs = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> mag(min_abs, max_abs);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data()) v = static_cast<T>(sign(gen) ? mag(gen) : -mag(gen));
  t.set_requires_grad(true);
  return t;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

inline double rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

/// Compares backprop gradients of `f` against central differences (step h)
/// for every element of `inputs`, or for `sample` randomly chosen elements
/// when sample > 0.
inline GradCheckResult grad_check(std::vector<Tensor<double>> inputs,
                                  const std::function<Tensor<double>(Tape<double>&)>& f, double h = 1e-3,
                                  std::size_t sample = 0, std::uint64_t seed = 7) {
  for (auto& t : inputs) t.zero_grad();
  {
    Tape<double> tape;
    auto loss = f(tape);
    tape.backward(loss);
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) coords.emplace_back(i, j);
  if (sample > 0 && sample < coords.size()) {
    std::mt19937_64 gen(seed);
    std::shuffle(coords.begin(), coords.end(), gen);
    coords.resize(sample);
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return f(tape).item();
  };
  GradCheckResult r;
  for (auto [i, j] : coords) {
    auto& t = inputs[i];
    const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
    const double orig = t[j];
    t[j] = orig + h;
    const double up = eval();
    t[j] = orig - h;
    const double down = eval();
    t[j] = orig;
    r.max_rel_err = std::max(r.max_rel_err, rel_err(analytic, (up - down) / (2 * h)));
    ++r.checked;
  }
  return r;
}

}  // namespace lpattn::testing

#include <cstdlib>
#include <filesystem>
#include <optional>

namespace lpattn::testing {

/// Location of the Tiny Shakespeare text: $LPATTN_TINY_SHAKESPEARE, else
/// data/tinyshakespeare.txt under the source tree. Empty when absent.
inline std::optional<std::filesystem::path> tiny_shakespeare_path() {
  if (const char* env = std::getenv("LPATTN_TINY_SHAKESPEARE"); env && *env) {
    if (std::filesystem::exists(env)) return std::filesystem::path(env);
    return std::nullopt;
  }
#ifdef LPATTN_SOURCE_DIR
  auto p = std::filesystem::path(LPATTN_SOURCE_DIR) / "data" / "tinyshakespeare.txt";
  if (std::filesystem::exists(p)) return p;
#endif
  return std::nullopt;
}

}  // namespace lpattn::testing
