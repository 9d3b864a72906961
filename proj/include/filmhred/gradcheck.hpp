// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "filmhred/autograd.hpp"

namespace fh {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_rel_error() const;
  bool passed() const { return max_rel_error() < tolerance; }
  std::string summary() const;
};

/// Builds a scalar loss on the given tape from the current parameter values.
/// Must be deterministic: it is evaluated 2·numel + 1 times.
using ScalarFunction = std::function<Var(Tape&)>;

/// Compares backward() against central differences (f(θ+ε) − f(θ−ε)) / 2ε
/// for every element of every parameter. Relative error per element is
/// |a − n| / max(1, |a| + |n|). Parameter values are restored afterwards and
/// their gradients are left zeroed.
GradCheckReport finite_difference_check(const ScalarFunction& f, std::span<Parameter* const> params,
                                        double eps = 1e-5, double tol = 1e-4);

}  // namespace fh
