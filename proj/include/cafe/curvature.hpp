#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/nn.hpp"
#include "cafe/types.hpp"

// Empirical Fisher and Hessian spectral machinery: matrix-free operators,
// power iteration and finite-difference Hessian-vector products.

namespace cafe::curv {

// Matrix-free empirical Fisher F = (1/n) sum_i g_i g_i^T, represented by the
// per-sample gradient rows.
struct FimOperator {
    Matrix grads;  // n x P

    int n() const { return grads.rows; }
    int dim() const { return grads.cols; }

    static FimOperator from_batch(const nn::MlpSpec& spec, const ParamVector& params,
                                  const nn::Batch& batch);
};

struct PowerConfig {
    double tol = 1e-8;
    int max_iter = 1000;
};

struct SpectrumEstimate {
    double lambda = 0.0;
    ParamVector eigvec;  // unit norm
    int iterations = 0;
    double residual = 0.0;  // ||A v - lambda v||
};

// Thrown when the iteration budget runs out; carries the best estimate seen
// so callers that only need a training-time eigenvalue can keep going.
struct ConvergenceError : Error {
    ConvergenceError(const std::string& msg, SpectrumEstimate best_estimate)
        : Error(msg), best(std::move(best_estimate)) {}
    SpectrumEstimate best;
};

// F v without materializing F. Exact linear operator.
ParamVector fim_matvec(const FimOperator& op, std::span<const double> v);

// Test oracle: the explicit P x P Fisher. Capped at P <= 256.
Matrix dense_fim(const FimOperator& op);

// Power iteration for the top eigenvalue of the (PSD) Fisher. Deterministic
// given the seed. Throws ConvergenceError with the best estimate if max_iter
// is exhausted.
SpectrumEstimate top_eig_power(const FimOperator& op, const PowerConfig& cfg,
                               std::uint64_t seed);

// Same iteration over an arbitrary symmetric matrix-free operator.
using MatVec = std::function<ParamVector(std::span<const double>)>;
SpectrumEstimate top_eig_operator(const MatVec& apply, int dim, const PowerConfig& cfg,
                                  std::uint64_t seed);

// Hessian-vector product via central differences of the loss gradient:
// (grad(theta + s v^) - grad(theta - s v^)) / (2 s) rescaled by ||v||, with
// s = h * max(1, ||theta||). Exact (up to roundoff) for quadratic losses.
// v = 0 returns the zero vector.
ParamVector hvp(const nn::MlpSpec& spec, const ParamVector& params, const nn::Batch& batch,
                std::span<const double> v, double h = 1e-4);

// Top eigenvalue of the loss Hessian by power iteration over hvp. For
// indefinite Hessians this converges to the largest-magnitude eigenvalue and
// reports it with its sign (near minima, where the comparisons are made, that
// is the largest positive one).
SpectrumEstimate top_eig_hessian(const nn::MlpSpec& spec, const ParamVector& params,
                                 const nn::Batch& batch, const PowerConfig& cfg,
                                 std::uint64_t seed, double fd_step = 1e-4);

// Second-order excessive-loss bound ||g||*||d|| + 0.5*lambda*||d||^2 with
// d = global - local (the cubic remainder is truncated).
double excessive_loss_bound(const ParamVector& global_params, const ParamVector& local_params,
                            const ParamVector& g_local, double lambda_h);

struct GroupBoundReport {
    double lambda_full = 0.0;       // top eigenvalue of the pooled Fisher
    double jensen_upper = 0.0;      // sum_i alpha_i * lambda(F_i)
    double max_group_lambda = 0.0;  // max_i lambda(F_i)
    std::vector<double> alphas;     // group weights |G_i| / N, sum to 1
    double slack_delta = 0.0;       // max_group_lambda - lambda_full; may be
                                    // negative when eigenvectors align
    std::vector<double> group_lambdas;
};

// Convex-combination bounds on the pooled Fisher's top eigenvalue. The upper
// (Jensen) bound holds unconditionally; slack_delta is reported, not
// asserted.
GroupBoundReport group_fim_bounds(const std::vector<FimOperator>& groups,
                                  const PowerConfig& cfg, std::uint64_t seed);

// max_i lambda_i - min_j lambda_j over >= 2 group eigenvalues.
double group_disparity(std::span<const double> group_lambdas);

}  // namespace cafe::curv
