#include "cafe/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cafe/error.hpp"
#include "cafe/kernels.hpp"
#include "cafe/rng.hpp"

namespace cafe::curv {

namespace {

constexpr int kDenseCap = 256;

ParamVector normalized_gaussian(int dim, rng::Stream& stream) {
    ParamVector v = stream.normal_vector(static_cast<std::size_t>(dim));
    double n = kernels::nrm2(v);
    kernels::scale(v, 1.0 / n);
    return v;
}

}  // namespace

FimOperator FimOperator::from_batch(const nn::MlpSpec& spec, const ParamVector& params,
                                    const nn::Batch& batch) {
    return FimOperator{nn::per_sample_grads(spec, params, batch)};
}

ParamVector fim_matvec(const FimOperator& op, std::span<const double> v) {
    if (static_cast<int>(v.size()) != op.dim()) {
        throw DimensionError("fim_matvec: vector length " + std::to_string(v.size()) +
                             " does not match operator dim " + std::to_string(op.dim()));
    }
    ParamVector out(op.dim(), 0.0);
    double inv_n = 1.0 / op.n();
    for (int i = 0; i < op.n(); ++i) {
        auto g = op.grads.row(i);
        double c = kernels::dot(g, v) * inv_n;
        kernels::axpy(c, g, out);
    }
    return out;
}

Matrix dense_fim(const FimOperator& op) {
    int p = op.dim();
    if (p > kDenseCap) {
        throw CapabilityError("dense_fim is capped at P <= " + std::to_string(kDenseCap) +
                              ", got P = " + std::to_string(p));
    }
    Matrix f(p, p);
    double inv_n = 1.0 / op.n();
    for (int i = 0; i < op.n(); ++i) {
        auto g = op.grads.row(i);
        for (int r = 0; r < p; ++r) {
            double c = g[r] * inv_n;
            if (c == 0.0) continue;
            // fill upper triangle including the diagonal
            for (int s = r; s < p; ++s) f.at(r, s) += c * g[s];
        }
    }
    for (int r = 0; r < p; ++r) {
        for (int s = 0; s < r; ++s) f.at(r, s) = f.at(s, r);
    }
    return f;
}

SpectrumEstimate top_eig_operator(const MatVec& apply, int dim, const PowerConfig& cfg,
                                  std::uint64_t seed) {
    if (!(cfg.tol > 0.0)) throw ConfigError("power iteration tol must be > 0");
    rng::Stream stream(seed);
    ParamVector v = normalized_gaussian(dim, stream);

    double lambda_prev = 0.0;
    bool have_prev = false;
    SpectrumEstimate best;
    best.residual = std::numeric_limits<double>::infinity();

    for (int it = 1; it <= cfg.max_iter; ++it) {
        ParamVector w = apply(v);
        double wn = kernels::nrm2(w);
        if (wn == 0.0) {
            if (it == 1) {
                // Start vector hit the null space (or the operator is zero);
                // probe a few fresh directions before accepting lambda = 0.
                bool all_zero = true;
                for (int k = 0; k < 5; ++k) {
                    ParamVector probe = normalized_gaussian(dim, stream);
                    ParamVector pw = apply(probe);
                    if (kernels::nrm2(pw) != 0.0) {
                        v = std::move(probe);
                        w = std::move(pw);
                        wn = kernels::nrm2(w);
                        all_zero = false;
                        break;
                    }
                }
                if (all_zero) return SpectrumEstimate{0.0, v, it, 0.0};
            } else {
                // v is an exact eigenvector with eigenvalue 0 of the operator
                // restricted to its reachable subspace.
                return SpectrumEstimate{0.0, v, it, 0.0};
            }
        }

        double lambda = kernels::dot(v, w);
        ParamVector resid = w;
        kernels::axpy(-lambda, v, resid);
        double residual = kernels::nrm2(resid);
        double denom = std::max(1.0, std::abs(lambda));

        if (residual < best.residual) {
            best = SpectrumEstimate{lambda, v, it, residual};
        }

        bool residual_ok = residual <= cfg.tol * denom;
        bool change_ok = have_prev && std::abs(lambda - lambda_prev) <= cfg.tol * denom;
        // A near-exact eigenpair certifies convergence on its own (rank-1
        // operators land on it after a single multiply).
        bool exact = residual <= 1e-2 * cfg.tol * denom;
        if (residual_ok && (change_ok || exact)) {
            return SpectrumEstimate{lambda, v, it, residual};
        }

        lambda_prev = lambda;
        have_prev = true;
        kernels::scale(w, 1.0 / wn);
        v = std::move(w);
    }

    throw ConvergenceError("power iteration did not converge in " +
                               std::to_string(cfg.max_iter) + " iterations (best lambda " +
                               std::to_string(best.lambda) + ", residual " +
                               std::to_string(best.residual) + ")",
                           std::move(best));
}

SpectrumEstimate top_eig_power(const FimOperator& op, const PowerConfig& cfg,
                               std::uint64_t seed) {
    return top_eig_operator([&op](std::span<const double> v) { return fim_matvec(op, v); },
                            op.dim(), cfg, seed);
}

ParamVector hvp(const nn::MlpSpec& spec, const ParamVector& params, const nn::Batch& batch,
                std::span<const double> v, double h) {
    if (!(h > 0.0)) throw ConfigError("hvp step h must be > 0");
    if (v.size() != params.size()) {
        throw DimensionError("hvp: direction length does not match parameter count");
    }
    double vn = kernels::nrm2(v);
    if (vn == 0.0) return ParamVector(params.size(), 0.0);

    double s = h * std::max(1.0, kernels::nrm2(params));
    ParamVector theta_p = params;
    ParamVector theta_m = params;
    kernels::axpy(s / vn, v, theta_p);
    kernels::axpy(-s / vn, v, theta_m);

    ParamVector gp = nn::grad(spec, theta_p, batch);
    ParamVector gm = nn::grad(spec, theta_m, batch);
    ParamVector out(params.size());
    double scale = vn / (2.0 * s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) * scale;
    if (!all_finite(out)) throw NumericError("non-finite Hessian-vector product");
    return out;
}

SpectrumEstimate top_eig_hessian(const nn::MlpSpec& spec, const ParamVector& params,
                                 const nn::Batch& batch, const PowerConfig& cfg,
                                 std::uint64_t seed, double fd_step) {
    auto apply = [&](std::span<const double> v) { return hvp(spec, params, batch, v, fd_step); };
    return top_eig_operator(apply, static_cast<int>(params.size()), cfg, seed);
}

double excessive_loss_bound(const ParamVector& global_params, const ParamVector& local_params,
                            const ParamVector& g_local, double lambda_h) {
    if (global_params.size() != local_params.size() ||
        g_local.size() != local_params.size()) {
        throw DimensionError("excessive_loss_bound: length mismatch");
    }
    if (lambda_h < 0.0) throw ConfigError("excessive_loss_bound: lambda must be >= 0");
    ParamVector d = global_params;
    kernels::axpy(-1.0, local_params, d);
    double dn = kernels::nrm2(d);
    return kernels::nrm2(g_local) * dn + 0.5 * lambda_h * dn * dn;
}

GroupBoundReport group_fim_bounds(const std::vector<FimOperator>& groups,
                                  const PowerConfig& cfg, std::uint64_t seed) {
    if (groups.empty()) throw ConfigError("group_fim_bounds: need at least one group");
    int p = groups.front().dim();
    int total = 0;
    for (const auto& g : groups) {
        if (g.n() < 1) throw ConfigError("group_fim_bounds: empty group");
        if (g.dim() != p) throw DimensionError("group_fim_bounds: inconsistent dims");
        total += g.n();
    }

    GroupBoundReport rep;
    rep.alphas.reserve(groups.size());
    rep.group_lambdas.reserve(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        double alpha = static_cast<double>(groups[i].n()) / total;
        rep.alphas.push_back(alpha);
        double lam = top_eig_power(groups[i], cfg, rng::mix(seed, i + 1)).lambda;
        rep.group_lambdas.push_back(lam);
        rep.jensen_upper += alpha * lam;
    }
    rep.max_group_lambda = *std::max_element(rep.group_lambdas.begin(), rep.group_lambdas.end());

    // Pooled Fisher: concatenating the per-sample gradient rows reproduces
    // exactly the convex combination sum_i alpha_i F_i.
    FimOperator pooled;
    pooled.grads = Matrix(total, p);
    int row = 0;
    for (const auto& g : groups) {
        std::copy(g.grads.data.begin(), g.grads.data.end(), pooled.grads.row(row).begin());
        row += g.n();
    }
    rep.lambda_full = top_eig_power(pooled, cfg, rng::mix(seed, 0)).lambda;
    rep.slack_delta = rep.max_group_lambda - rep.lambda_full;
    return rep;
}

double group_disparity(std::span<const double> group_lambdas) {
    if (group_lambdas.size() < 2) {
        throw ConfigError("group_disparity: need at least 2 groups");
    }
    auto [mn, mx] = std::minmax_element(group_lambdas.begin(), group_lambdas.end());
    return *mx - *mn;
}

}  // namespace cafe::curv
