#pragma once

#include <functional>

#include "cafe/types.hpp"

// Client-side optimizers and the server-coordinated learning-rate schedule.

namespace cafe::opt {

struct SamConfig {
    double rho = 0.05;     // perturbation radius
    double base_lr = 0.01; // step size for the descent update
};

// params - lr * gradient.
ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient, double lr);

using GradFn = std::function<ParamVector(const ParamVector&)>;

// Two-step sharpness-aware update: ascend to theta + rho * g/||g||, take the
// descent step at the base point using the gradient evaluated there. With
// rho = 0 or a zero gradient this reduces exactly to sgd_step.
ParamVector sam_step(const ParamVector& params, const GradFn& grad_fn, const SamConfig& cfg);

struct LrSchedule {
    double base_lr = 0.01;
    double swa_lr = 0.001;
    int swa_start_round = 16;
    int total_rounds = 80;
};

// Piecewise-constant schedule: base_lr before the averaging phase starts,
// swa_lr from then on. Throws on out-of-range rounds.
double lr_at_round(const LrSchedule& sched, int r);

}  // namespace cafe::opt
