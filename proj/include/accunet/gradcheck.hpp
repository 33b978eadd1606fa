#pragma once

#include <functional>
#include <vector>

#include "accunet/ops.hpp"
#include "accunet/tape.hpp"
#include "accunet/tensor.hpp"

namespace accunet {

// A scalar-valued tensor program executed in double precision. Checked
// variables are passed explicitly; the program must read them by handle so
// that in-place perturbation is observed.
using GradCheckProgram =
    std::function<TensorT<double>(TapeT<double>&, const std::vector<TensorT<double>>&)>;

// Central-difference verification of reverse-mode gradients. Returns
//   max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const GradCheckProgram& f,
                         const std::vector<TensorT<double>>& inputs,
                         double eps = 1e-4) {
  TapeT<double> tape;
  TensorT<double> out = f(tape, inputs);
  if (out.numel() != 1)
    throw ShapeError("grad_check: program must be scalar-valued, got " +
                     out.shape.str());
  tape.backward(out);

  // Snapshot analytic gradients before perturbing shared buffers.
  std::vector<TensorT<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) {
    const TensorT<double>* g = tape.grad(in);
    analytic.push_back(g ? g->clone() : TensorT<double>::zeros(in.shape));
  }

  auto eval = [&](const std::vector<TensorT<double>>& xs) {
    TapeT<double> scratch;
    return f(scratch, xs).scalar();
  };

  double max_rel = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    double* data = const_cast<TensorT<double>&>(inputs[t]).ptr();
    for (int64_t i = 0; i < inputs[t].numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = eval(inputs);
      data[i] = saved - eps;
      const double down = eval(inputs);
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t].ptr()[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace accunet
