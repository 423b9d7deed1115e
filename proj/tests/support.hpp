#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mgan/autodiff.hpp"
#include "mgan/rng.hpp"

namespace mgan::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.values()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;  // "input i[j]"
  int checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

/// Scalar probe L = sum((f(inputs) + c)^2) with a fixed random offset c, so
/// every output element gets a distinct upstream weight.
using Probe = std::function<Var(Tape&, const std::vector<Var>&)>;

inline Var probe_loss(const Probe& f, const std::vector<Tensor>& inputs, const Tensor& offset, Tape& tape,
                      std::vector<Var>& vars) {
  vars.clear();
  for (const Tensor& t : inputs) vars.push_back(tape.input(t));
  return ops::sum(ops::square(ops::add(f(tape, vars), tape.constant(offset))));
}

/// Central differences with step h against reverse mode, over every input entry
/// (or `max_entries` evenly spaced entries per input when positive).
inline GradCheck check_inputs(const Probe& f, std::vector<Tensor> inputs, std::uint64_t seed, double h = 1e-5,
                              int max_entries = 0) {
  Tensor offset;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
    offset = random_tensor(f(tape, vars).shape(), seed ^ 0x5eedULL);
  }
  Tape tape;
  std::vector<Var> vars;
  tape.backward(probe_loss(f, inputs, offset, tape, vars));
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = std::vector<double>(vars[i].grad().begin(), vars[i].grad().end());
    const Index n = inputs[i].size();
    const Index stride = max_entries > 0 ? std::max<Index>(1, n / max_entries) : 1;
    for (Index j = 0; j < n; j += stride) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      Tape tp;
      std::vector<Var> vp;
      const double up = probe_loss(f, inputs, offset, tp, vp).value()[0];
      inputs[i][j] = saved - h;
      Tape tm;
      std::vector<Var> vm;
      const double down = probe_loss(f, inputs, offset, tm, vm).value()[0];
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.empty() ? 0.0 : analytic[static_cast<std::size_t>(j)];
      const double e = relative_error(a, numeric);
      ++out.checked;
      if (e > out.max_rel_error) {
        out.max_rel_error = e;
        out.worst = "input " + std::to_string(i) + "[" + std::to_string(j) + "] analytic " + std::to_string(a) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Same check over named parameter tensors: `loss` must build the scalar on a
/// fresh tape reading the current parameter values.
inline GradCheck check_parameters(const std::function<Var(Tape&)>& loss, const ParamRefs& params, double h = 1e-5,
                                  int max_entries = 8) {
  auto eval = [&loss] {
    Tape tape;
    return loss(tape).value()[0];
  };
  for (auto& [name, t] : params) t->grad.reset();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  GradCheck out;
  for (auto& [name, t] : params) {
    const std::vector<double> analytic = t->grad ? *t->grad : std::vector<double>(static_cast<std::size_t>(t->size()), 0.0);
    t->grad.reset();
    const Index n = t->size();
    const Index stride = std::max<Index>(1, n / max_entries);
    for (Index j = 0; j < n; j += stride) {
      const double saved = (*t)[j];
      (*t)[j] = saved + h;
      const double up = eval();
      (*t)[j] = saved - h;
      const double down = eval();
      (*t)[j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[static_cast<std::size_t>(j)];
      const double e = relative_error(a, numeric);
      ++out.checked;
      if (e > out.max_rel_error) {
        out.max_rel_error = e;
        out.worst = name + "[" + std::to_string(j) + "] analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mgan-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mgan::testing
