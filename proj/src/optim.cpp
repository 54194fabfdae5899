#include "cafe/optim.hpp"

#include <string>

#include "cafe/error.hpp"
#include "cafe/kernels.hpp"

namespace cafe::opt {

ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient, double lr) {
    if (params.size() != gradient.size()) {
        throw DimensionError("sgd_step: gradient length mismatch");
    }
    if (!(lr > 0.0)) throw ConfigError("sgd_step: lr must be > 0");
    ParamVector out = params;
    kernels::axpy(-lr, gradient, out);
    return out;
}

ParamVector sam_step(const ParamVector& params, const GradFn& grad_fn, const SamConfig& cfg) {
    if (cfg.rho < 0.0) throw ConfigError("sam_step: rho must be >= 0");
    ParamVector g = grad_fn(params);
    double gn = kernels::nrm2(g);
    if (cfg.rho == 0.0 || gn == 0.0) {
        return sgd_step(params, g, cfg.base_lr);
    }
    ParamVector perturbed = params;
    kernels::axpy(cfg.rho / gn, g, perturbed);
    ParamVector g_adv = grad_fn(perturbed);
    return sgd_step(params, g_adv, cfg.base_lr);
}

double lr_at_round(const LrSchedule& sched, int r) {
    if (sched.swa_start_round < 0 || sched.swa_start_round > sched.total_rounds) {
        throw ConfigError("lr_at_round: swa_start_round outside [0, total_rounds]");
    }
    if (r < 0 || r >= sched.total_rounds) {
        throw ConfigError("lr_at_round: round " + std::to_string(r) + " outside [0, " +
                          std::to_string(sched.total_rounds) + ")");
    }
    return r < sched.swa_start_round ? sched.base_lr : sched.swa_lr;
}

}  // namespace cafe::opt
