#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/matrix.hpp"

namespace ocn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compare tape gradients of a scalar function against central differences.
/// f must be deterministic: it is re-evaluated many times on perturbed
/// inputs. Entries whose first estimate disagrees are retried at nearby step
/// sizes and the best agreement kept, so a kink (relu, abs, min/max) crossed
/// by one stencil does not mask bugs elsewhere; a genuinely wrong gradient
/// stays wrong at every step size.
inline GradCheckResult grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Matrix>& params, double h = 1e-5) {
  if (params.empty()) throw std::invalid_argument("grad_check: no parameters");

  auto eval = [&](const std::vector<Matrix>& p) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(p.size());
    for (const Matrix& m : p) leaves.push_back(tape.leaf(m));
    Var out = f(tape, leaves);
    return out.scalar();
  };

  // Analytic pass.
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& m : params) leaves.push_back(tape.leaf(m));
  Var out = f(tape, leaves);
  const double f0 = out.scalar();
  if (!std::isfinite(f0)) throw std::runtime_error("grad_check: non-finite function value");
  tape.backward(out);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Var& v : leaves) analytic.push_back(v.grad());

  std::vector<Matrix> work = params;
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double x0 = params[p].at(k);
      const double a = analytic[p].at(k);

      auto estimate = [&](double step) {
        work[p].at(k) = x0 + step;
        const double fp = eval(work);
        work[p].at(k) = x0 - step;
        const double fm = eval(work);
        work[p].at(k) = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
          throw std::runtime_error("grad_check: non-finite function value at perturbed input");
        return (fp - fm) / (2.0 * step);
      };
      auto rel = [&](double n) {
        // The floor sits above the cancellation noise of the stencil;
        // entries with |grad| below it carry no measurable signal.
        return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
      };

      double num = estimate(h);
      double err = rel(num);
      if (err > 1e-5) {
        // Retry around h: smaller steps dodge kink crossings, larger steps
        // beat roundoff when the true derivative is tiny.
        for (double s : {h / 4.0, h / 16.0, h * 4.0, h * 16.0}) {
          const double n2 = estimate(s);
          const double e2 = rel(n2);
          if (e2 < err) {
            err = e2;
            num = n2;
          }
          if (err <= 1e-5) break;
        }
      }
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_param = p;
        res.worst_entry = k;
        res.analytic = a;
        res.numeric = num;
      }
    }
  }
  return res;
}

}  // namespace ocn
