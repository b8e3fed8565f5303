#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aem/params.hpp"
#include "aem/tape.hpp"

namespace aem::num {

// Builds the scalar loss node on the given tape from bound parameters.
using LossBuilder = std::function<Value(Tape&, const ParamMap&)>;

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  std::string worst_param;
  bool passed(double tol) const { return worst < tol; }
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  // 0 = every element; otherwise a seeded subset per parameter (every
  // parameter tensor is still covered).
  int max_elements_per_param = 0;
  uint64_t subset_seed = 0;
};

// Central finite differences (f(x+eps) - f(x-eps)) / 2eps against the tape
// gradients, relative error |a-n| / max(|a|,|n|,1e-8). Frozen parameters are
// excluded from both routes. Throws if loss_fn is not deterministic.
GradCheckReport grad_check(ParamStore& params, const LossBuilder& loss_fn,
                           const GradCheckOptions& opts = {});

}  // namespace aem::num
