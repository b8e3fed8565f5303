#include "aem/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "aem/rng.hpp"

namespace aem::num {

namespace {

double eval_loss(ParamStore& params, const LossBuilder& loss_fn) {
  Tape tape;
  ParamMap bound = bind(tape, params);
  Value loss = loss_fn(tape, bound);
  const Matrix& v = tape.value(loss);
  if (v.rows() != 1 || v.cols() != 1) fail(ErrKind::shape, "grad_check: loss must be scalar");
  return v(0, 0);
}

}  // namespace

GradCheckReport grad_check(ParamStore& params, const LossBuilder& loss_fn,
                           const GradCheckOptions& opts) {
  if (opts.epsilon <= 0.0) fail(ErrKind::config, "grad_check: epsilon must be positive");

  double base = eval_loss(params, loss_fn);
  double base2 = eval_loss(params, loss_fn);
  if (base != base2)
    fail(ErrKind::numeric, "grad_check: loss_fn is not deterministic (" + std::to_string(base) +
                               " vs " + std::to_string(base2) + ")");

  // Analytic route.
  Tape tape;
  ParamMap bound = bind(tape, params);
  Value loss = loss_fn(tape, bound);
  tape.backward(loss);

  GradCheckReport report;
  const double eps = opts.epsilon;
  Rng pick(derive_seed(opts.subset_seed, "grad-check-subset"));

  for (auto& entry : params.entries()) {
    if (entry.frozen) continue;
    Matrix analytic = tape.grad(bound.at(entry.name));
    Matrix& theta = entry.value;

    std::vector<Eigen::Index> flat(static_cast<size_t>(theta.size()));
    for (Eigen::Index i = 0; i < theta.size(); ++i) flat[static_cast<size_t>(i)] = i;
    if (opts.max_elements_per_param > 0 &&
        theta.size() > static_cast<Eigen::Index>(opts.max_elements_per_param)) {
      pick.shuffle(flat);
      flat.resize(static_cast<size_t>(opts.max_elements_per_param));
    }

    double max_rel = 0.0;
    for (Eigen::Index i : flat) {
      Eigen::Index r = i % theta.rows();
      Eigen::Index c = i / theta.rows();
      double saved = theta(r, c);
      theta(r, c) = saved + eps;
      double plus = eval_loss(params, loss_fn);
      theta(r, c) = saved - eps;
      double minus = eval_loss(params, loss_fn);
      theta(r, c) = saved;
      double numeric = (plus - minus) / (2.0 * eps);
      double a = analytic(r, c);
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
    report.entries.push_back({entry.name, max_rel});
    if (max_rel >= report.worst) {
      report.worst = max_rel;
      report.worst_param = entry.name;
    }
  }
  return report;
}

}  // namespace aem::num
