#pragma once

#include <functional>
#include <string>
#include <vector>

#include "specdrift/tensor.hpp"

// Central finite-difference verification of analytic gradients. The loss
// function is evaluated through the same code path with and without a tape;
// perturbed evaluations run tapeless.

namespace specdrift {

struct GradCheckReport {
    bool passed = false;
    double max_rel_err = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
    size_t checked = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// f: (ParameterStore&, Tape*) -> scalar Tensor. Checks every element of the
// named parameters (all parameters when `names` is empty); `stride` > 1
// subsamples elements deterministically for large parameter blocks.
inline GradCheckReport grad_check(ParameterStore& store,
                                  const std::function<Tensor(ParameterStore&, Tape*)>& f,
                                  double h, double tol,
                                  std::vector<std::string> names = {},
                                  size_t stride = 1) {
    if (names.empty()) names = store.names();
    if (stride == 0) stride = 1;

    store.zero_grad();
    {
        Tape tape;
        Tensor loss = f(store, &tape);
        if (!std::isfinite(loss.scalar_value())) throw NumericError("grad_check: loss is non-finite");
        tape.backward(loss);
    }

    GradCheckReport rep;
    for (const std::string& name : names) {
        auto& p = store.at(name);
        auto& vals = *p.value;
        for (size_t i = 0; i < vals.size(); i += stride) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double fp = f(store, nullptr).scalar_value();
            vals[i] = orig - h;
            const double fm = f(store, nullptr).scalar_value();
            vals[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: perturbed loss non-finite at " + name);
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = p.grad[i];
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
            const double rel = std::fabs(analytic - numeric) / denom;
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
                rep.worst_index = i;
                rep.analytic_at_worst = analytic;
                rep.numeric_at_worst = numeric;
            }
        }
    }
    rep.passed = rep.max_rel_err < tol;
    return rep;
}

}  // namespace specdrift
