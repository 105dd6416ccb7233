#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "theragan/diffnet/network.hpp"
#include "theragan/diffnet/ops.hpp"

namespace theragan::testing_support {

using diffnet::Graph;
using diffnet::Shape;
using diffnet::Tensor;
using diffnet::Var;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
  return t;
}

// Builds a scalar from the op outputs by a fixed random projection so every
// output element contributes to the checked gradient.
using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Central finite differences on every element of every input versus the
// reverse-mode gradient. Relative error uses max(|a|, |b|, floor).
inline GradCheckResult finite_difference_check(const ScalarFn& fn, std::vector<Tensor> inputs, double step = 1e-4,
                                               double floor = 1e-2) {
  auto evaluate = [&](const std::vector<Tensor>& in) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : in) vars.push_back(g.constant(t));
    return fn(g, vars).value()[0];
  };
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
  Var out = fn(g, vars);
  g.backward(out);
  GradCheckResult r;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor analytic = g.has_grad(vars[a].id) ? g.grad(vars[a].id) : Tensor(inputs[a].shape, 0.0);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double orig = inputs[a][i];
      inputs[a][i] = orig + step;
      const double up = evaluate(inputs);
      inputs[a][i] = orig - step;
      const double down = evaluate(inputs);
      inputs[a][i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double diff = std::abs(numeric - analytic[i]);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
      r.max_abs_error = std::max(r.max_abs_error, diff);
      r.max_rel_error = std::max(r.max_rel_error, diff / denom);
    }
  }
  return r;
}

inline Var project(Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(x.shape(), rng);
  Var wv = x.graph->constant(std::move(w));
  return diffnet::sum_all(diffnet::mul(x, wv));
}

// Zero-initialized biases put dead ReLU units exactly on the kink, where
// central differences see slope 1/2. A small random shift gives a generic point.
inline void jitter_parameters(diffnet::Network& net, std::uint64_t seed, double sigma = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sigma);
  for (auto& e : net.params().entries())
    for (double& v : e.value.data) v += nd(rng);
}

// Worst relative error between accumulated parameter gradients and central
// differences on `per_array` random elements of every parameter array.
inline double parameter_gradient_error(diffnet::Network& net, const std::map<std::string, Tensor>& inputs, std::size_t per_array,
                                std::uint64_t seed) {
  auto loss_of = [&](bool trainable, diffnet::Network::Binding* binding, Graph& g) {
    std::map<std::string, Var> vars;
    for (const auto& [k, v] : inputs) vars.emplace(k, g.constant(v));
    return project(net.forward(g, vars, diffnet::Mode::Eval, nullptr, trainable, binding), 5);
  };
  for (auto& e : net.params().entries()) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  {
    Graph g;
    diffnet::Network::Binding binding;
    Var loss = loss_of(true, &binding, g);
    g.backward(loss);
    net.accumulate_grads(binding);
  }
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto& e : net.params().entries()) {
    std::uniform_int_distribution<std::size_t> pick(0, e.value.size() - 1);
    for (std::size_t k = 0; k < per_array; ++k) {
      const std::size_t i = pick(rng);
      const double orig = e.value[i];
      const double h = 1e-7;  // small enough to stay clear of activation kinks
      e.value[i] = orig + h;
      Graph g1;
      const double up = loss_of(false, nullptr, g1).value()[0];
      e.value[i] = orig - h;
      Graph g2;
      const double down = loss_of(false, nullptr, g2).value()[0];
      e.value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(numeric - e.grad[i]) / std::max({std::abs(numeric), std::abs(e.grad[i]), 1e-2}));
    }
  }
  return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("theragan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace theragan::testing_support
