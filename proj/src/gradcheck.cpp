// SPDX-License-Identifier: Apache-2.0

#include "filmhred/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "filmhred/errors.hpp"

namespace fh {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.name << ": max rel err " << e.max_rel_error << " at [" << e.worst_index
       << "] (analytic " << e.analytic << ", numeric " << e.numeric << ")\n";
  }
  return os.str();
}

namespace {

double evaluate(const ScalarFunction& f) {
  Tape tape(false);
  const Var loss = f(tape);
  if (loss.value().numel() != 1) throw ShapeError("finite_difference_check: f must be scalar");
  const double v = loss.value().item();
  if (!std::isfinite(v)) throw NumericError("finite_difference_check: f is not finite");
  return v;
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarFunction& f, std::span<Parameter* const> params,
                                        double eps, double tol) {
  GradCheckReport report;
  report.tolerance = tol;

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    const Var loss = f(tape);
    if (!std::isfinite(loss.value().item())) throw NumericError("finite_difference_check: f is not finite");
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    analytic.push_back(p->grad());
    p->zero_grad();
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    GradCheckEntry entry;
    entry.name = p.name();
    auto values = p.value().data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(f);
      values[i] = saved - eps;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      if (rel >= entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace fh
