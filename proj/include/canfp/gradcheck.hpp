#pragma once

#include <functional>
#include <string>
#include <vector>

#include "canfp/tensor.hpp"

namespace canfp {

/// One array whose analytic gradient is compared with finite differences.
struct GradTarget {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
};

struct GradcheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t entries_checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Denominator floor of the relative error |a-n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

/// `analytic` must zero and then populate every target's grad for the
/// current values; `loss` must be a deterministic function of the values.
/// Throws non_finite_value if any loss or gradient is NaN/inf.
GradcheckReport gradcheck(const std::string& name, const std::function<double()>& loss,
                          const std::function<void()>& analytic, const std::vector<GradTarget>& targets,
                          const GradcheckOptions& opts = {});

/// Built-in checks of every layer, the loss heads and a tiny ITS model.
std::vector<GradcheckReport> run_layer_gradchecks(std::uint64_t seed = 1);

}  // namespace canfp
