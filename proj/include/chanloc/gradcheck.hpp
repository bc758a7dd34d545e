#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace chanloc {

struct GradReport {
  std::string op;
  double max_rel_err = 0.0;
  std::string worst_tensor;     // which input/parameter held the worst element
  std::size_t worst_index = 0;  // flat index within that tensor
  double tolerance = 0.0;
  bool pass = false;
};

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per element. Runs in
// wide precision; callers pass the op as a scalar projection.
template <typename F>
std::vector<double> finite_diff(F&& f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff: non-finite function value");
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// rel err per element: |a - n| / max(1, |a|, |n|).
GradReport compare_gradients(const std::string& op, const std::string& tensor,
                             const std::vector<double>& analytic,
                             const std::vector<double>& numeric, double tol);

GradReport merge_reports(const std::string& op, const std::vector<GradReport>& parts);

// Named finite-difference checks covering every layer primitive and both
// attention blocks. Inputs are drawn in [-1, 1] from the seed, resampled away
// from relu/max kinks, and checked at `tol` for the input and every
// parameter tensor.
std::vector<std::string> gradcheck_names();
GradReport check_op(const std::string& name, std::uint64_t seed, double tol = 1e-6);

// Runs every check across `seeds` consecutive seeds starting at seed0.
std::vector<GradReport> run_all_checks(std::uint64_t seed0, std::size_t seeds, double tol = 1e-6);

std::string format_report_table(const std::vector<GradReport>& reports);

}  // namespace chanloc
