#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cafe/curvature.hpp"
#include "cafe/error.hpp"
#include "cafe/kernels.hpp"
#include "cafe/nn.hpp"
#include "cafe/rng.hpp"

using namespace cafe;
using curv::FimOperator;
using curv::PowerConfig;

namespace {

FimOperator random_fim(rng::Stream& stream, int n, int p, double scale = 1.0) {
    FimOperator op;
    op.grads = Matrix(n, p);
    for (double& v : op.grads.data) v = scale * stream.normal();
    return op;
}

// Dense eigensolver oracle, independent of the library's power iteration.
double top_eig_dense(const FimOperator& op) {
    int p = op.dim();
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < op.n(); ++i) {
        Eigen::Map<const Eigen::VectorXd> g(op.grads.row(i).data(), p);
        f += g * g.transpose();
    }
    f /= op.n();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f);
    return es.eigenvalues().maxCoeff();
}

nn::Batch random_batch(rng::Stream& stream, int n, int d) {
    nn::Batch b;
    b.features = Matrix(n, d);
    for (double& v : b.features.data) v = stream.normal();
    b.labels.resize(n);
    for (int& y : b.labels) y = stream.uniform() < 0.5 ? 0 : 1;
    return b;
}

double loss_quad(const nn::MlpSpec& spec, const ParamVector& w, const nn::Batch& b) {
    return nn::loss(spec, w, b);
}

}  // namespace

TEST_CASE("fim_matvec rank-1 algebra") {
    rng::Stream stream(3);
    FimOperator op = random_fim(stream, 1, 6);
    std::vector<double> g(op.grads.row(0).begin(), op.grads.row(0).end());
    double gn = kernels::nrm2(g);

    ParamVector v = g;
    kernels::scale(v, 1.0 / gn);
    ParamVector fv = curv::fim_matvec(op, v);
    CHECK(kernels::nrm2(fv) == doctest::Approx(gn * gn).epsilon(1e-12));

    // any direction orthogonal to g lands in the null space
    ParamVector u(6, 0.0);
    u[0] = g[1];
    u[1] = -g[0];
    ParamVector fu = curv::fim_matvec(op, u);
    for (double x : fu) CHECK(x == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fim_matvec is linear and matches the dense product") {
    rng::Stream stream(11);
    FimOperator op = random_fim(stream, 7, 10);

    ParamVector u = stream.normal_vector(10);
    ParamVector w = stream.normal_vector(10);
    double a = 0.7, b = -1.3;

    ParamVector combo(10);
    for (int i = 0; i < 10; ++i) combo[i] = a * u[i] + b * w[i];
    ParamVector lhs = curv::fim_matvec(op, combo);
    ParamVector fu = curv::fim_matvec(op, u);
    ParamVector fw = curv::fim_matvec(op, w);
    for (int i = 0; i < 10; ++i) {
        CHECK(lhs[i] == doctest::Approx(a * fu[i] + b * fw[i]).epsilon(1e-12));
    }

    // dense product oracle
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(10, 10);
    for (int i = 0; i < op.n(); ++i) {
        Eigen::Map<const Eigen::VectorXd> g(op.grads.row(i).data(), 10);
        f += g * g.transpose() / op.n();
    }
    Eigen::Map<const Eigen::VectorXd> uv(u.data(), 10);
    Eigen::VectorXd want = f * uv;
    for (int i = 0; i < 10; ++i) CHECK(fu[i] == doctest::Approx(want[i]).epsilon(1e-12));

    ParamVector wrong(9, 0.0);
    CHECK_THROWS_AS(curv::fim_matvec(op, wrong), DimensionError);
}

TEST_CASE("dense_fim") {
    rng::Stream stream(17);

    SUBCASE("n = 1 is the exact outer product") {
        FimOperator op = random_fim(stream, 1, 4);
        Matrix f = curv::dense_fim(op);
        auto g = op.grads.row(0);
        for (int r = 0; r < 4; ++r) {
            for (int s = 0; s < 4; ++s) CHECK(f.at(r, s) == doctest::Approx(g[r] * g[s]));
        }
    }

    SUBCASE("two orthogonal unit gradients give eigenvalues 1/2, 1/2, 0") {
        FimOperator op;
        op.grads = Matrix(2, 3);
        op.grads.at(0, 0) = 1.0;
        op.grads.at(1, 1) = 1.0;
        Matrix f = curv::dense_fim(op);
        Eigen::Map<const Eigen::MatrixXd> fm(f.data.data(), 3, 3);  // symmetric, order moot
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fm);
        CHECK(es.eigenvalues()[0] == doctest::Approx(0.0));
        CHECK(es.eigenvalues()[1] == doctest::Approx(0.5));
        CHECK(es.eigenvalues()[2] == doctest::Approx(0.5));
    }

    SUBCASE("symmetric and PSD") {
        FimOperator op = random_fim(stream, 5, 8);
        Matrix f = curv::dense_fim(op);
        for (int r = 0; r < 8; ++r) {
            for (int s = 0; s < 8; ++s) CHECK(f.at(r, s) == f.at(s, r));
        }
        for (int t = 0; t < 20; ++t) {
            ParamVector v = stream.normal_vector(8);
            ParamVector fv = curv::fim_matvec(op, v);
            CHECK(kernels::dot(v, fv) >= -1e-12);
        }
    }

    SUBCASE("capability cap") {
        FimOperator op = random_fim(stream, 1, 257);
        CHECK_THROWS_AS(curv::dense_fim(op), CapabilityError);
    }
}

TEST_CASE("power iteration on the Fisher") {
    rng::Stream stream(23);
    PowerConfig cfg;

    SUBCASE("rank-1: lambda = ||g||^2 within two iterations") {
        FimOperator op = random_fim(stream, 1, 12);
        double gn2 = kernels::dot(op.grads.row(0), op.grads.row(0));
        curv::SpectrumEstimate est = curv::top_eig_power(op, cfg, 99);
        CHECK(est.lambda == doctest::Approx(gn2).epsilon(1e-10));
        CHECK(est.iterations <= 2);
        CHECK(std::abs(kernels::nrm2(est.eigvec) - 1.0) <= 1e-10);
    }

    SUBCASE("orthogonal gradients of norms 2 and 1: lambda = 2") {
        FimOperator op;
        op.grads = Matrix(2, 5);
        op.grads.at(0, 0) = 2.0;
        op.grads.at(1, 1) = 1.0;
        curv::SpectrumEstimate est = curv::top_eig_power(op, cfg, 7);
        CHECK(est.lambda == doctest::Approx(2.0).epsilon(1e-8));
    }

    SUBCASE("random instances agree with the dense eigensolver") {
        for (int t = 0; t < 20; ++t) {
            int n = 1 + static_cast<int>(stream.below(32));
            int p = 2 + static_cast<int>(stream.below(24));
            FimOperator op = random_fim(stream, n, p);
            double want = top_eig_dense(op);
            curv::SpectrumEstimate est = curv::top_eig_power(op, cfg, 1000 + t);
            CHECK(std::abs(est.lambda - want) <= 1e-6 * std::max(1.0, want));
            CHECK(est.residual <= cfg.tol * std::max(1.0, est.lambda));
        }
    }

    SUBCASE("deterministic given seed") {
        FimOperator op = random_fim(stream, 6, 9);
        auto a = curv::top_eig_power(op, cfg, 5);
        auto b = curv::top_eig_power(op, cfg, 5);
        CHECK(a.lambda == b.lambda);
        CHECK(a.iterations == b.iterations);
    }

    SUBCASE("iteration budget exhausted carries the best estimate") {
        FimOperator op = random_fim(stream, 8, 16);
        PowerConfig tight{1e-14, 1};
        CHECK_THROWS_AS(curv::top_eig_power(op, tight, 3), curv::ConvergenceError);
        try {
            curv::top_eig_power(op, tight, 3);
        } catch (const curv::ConvergenceError& e) {
            CHECK(e.best.lambda > 0.0);
            CHECK(e.best.residual >= 0.0);
            CHECK(e.best.eigvec.size() == 16);
        }
    }

    SUBCASE("rayleigh quotient sequence is non-decreasing") {
        FimOperator op = random_fim(stream, 10, 14);
        rng::Stream vs(4242);
        ParamVector v = vs.normal_vector(14);
        kernels::scale(v, 1.0 / kernels::nrm2(v));
        double prev = -1.0;
        for (int it = 0; it < 40; ++it) {
            ParamVector w = curv::fim_matvec(op, v);
            double rq = kernels::dot(v, w);
            CHECK(rq >= prev - 1e-12);
            prev = rq;
            kernels::scale(w, 1.0 / kernels::nrm2(w));
            v = std::move(w);
        }
    }
}

TEST_CASE("hessian-vector products") {
    rng::Stream stream(31);

    SUBCASE("zero direction short-circuits") {
        nn::MlpSpec spec;
        spec.layer_widths = {2, 1};
        spec.output = nn::MlpSpec::Output::linear;
        ParamVector params = stream.normal_vector(spec.param_count());
        nn::Batch b = random_batch(stream, 4, 2);
        ParamVector z(params.size(), 0.0);
        ParamVector hv = curv::hvp(spec, params, b, z);
        for (double x : hv) CHECK(x == 0.0);
    }

    SUBCASE("linear MSE model: Hv equals the augmented Gram matrix action") {
        int n = 10, d = 3;
        nn::MlpSpec spec;
        spec.layer_widths = {d, 1};
        spec.output = nn::MlpSpec::Output::linear;
        ParamVector params = stream.normal_vector(spec.param_count());
        nn::Batch b = random_batch(stream, n, d);

        // H = (1/n) Xa^T Xa with Xa = [X 1] (weights then bias)
        Eigen::MatrixXd xa(n, d + 1);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < d; ++k) xa(i, k) = b.features.at(i, k);
            xa(i, d) = 1.0;
        }
        Eigen::MatrixXd h = xa.transpose() * xa / n;

        for (int t = 0; t < 5; ++t) {
            ParamVector v = stream.normal_vector(d + 1);
            ParamVector hv = curv::hvp(spec, params, b, v);
            Eigen::Map<const Eigen::VectorXd> vv(v.data(), d + 1);
            Eigen::VectorXd want = h * vv;
            for (int k = 0; k <= d; ++k) {
                CHECK(hv[k] == doctest::Approx(want[k]).epsilon(1e-8));
            }
        }
    }

    SUBCASE("symmetry and linearity on a random MLP") {
        nn::MlpSpec spec;
        spec.layer_widths = {3, 4, 1};
        spec.hidden = nn::MlpSpec::Hidden::tanh;
        ParamVector params = stream.normal_vector(spec.param_count());
        nn::Batch b = random_batch(stream, 6, 3);

        ParamVector u = stream.normal_vector(params.size());
        ParamVector v = stream.normal_vector(params.size());
        ParamVector hu = curv::hvp(spec, params, b, u);
        ParamVector hv = curv::hvp(spec, params, b, v);
        double uhv = kernels::dot(u, hv);
        double vhu = kernels::dot(v, hu);
        CHECK(std::abs(uhv - vhu) <= 1e-6 * std::max(1.0, std::abs(uhv)));

        ParamVector uv(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) uv[i] = 2.0 * u[i] - 0.5 * v[i];
        ParamVector huv = curv::hvp(spec, params, b, uv);
        for (std::size_t i = 0; i < u.size(); ++i) {
            double want = 2.0 * hu[i] - 0.5 * hv[i];
            CHECK(huv[i] == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("hessian top eigenvalue") {
    rng::Stream stream(37);
    PowerConfig cfg;

    SUBCASE("quadratic with diagonal Hessian diag(a, 1): lambda = a") {
        // two symmetric samples make the cross terms vanish
        double a = 3.0;
        nn::MlpSpec spec;
        spec.layer_widths = {1, 1};
        spec.output = nn::MlpSpec::Output::linear;
        nn::Batch b;
        b.features = Matrix(2, 1);
        b.features.at(0, 0) = std::sqrt(a);
        b.features.at(1, 0) = -std::sqrt(a);
        b.labels = {1, 0};
        ParamVector params{0.2, -0.1};
        curv::SpectrumEstimate est = curv::top_eig_hessian(spec, params, b, cfg, 3);
        CHECK(est.lambda == doctest::Approx(a).epsilon(1e-8));
    }

    SUBCASE("linear MSE model matches the dense Gram spectrum") {
        int n = 12, d = 4;
        nn::MlpSpec spec;
        spec.layer_widths = {d, 1};
        spec.output = nn::MlpSpec::Output::linear;
        ParamVector params = stream.normal_vector(spec.param_count());
        nn::Batch b = random_batch(stream, n, d);
        Eigen::MatrixXd xa(n, d + 1);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < d; ++k) xa(i, k) = b.features.at(i, k);
            xa(i, d) = 1.0;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xa.transpose() * xa / n);
        double want = es.eigenvalues().maxCoeff();
        curv::SpectrumEstimate est = curv::top_eig_hessian(spec, params, b, cfg, 11);
        CHECK(std::abs(est.lambda - want) <= 1e-6 * std::max(1.0, want));
    }

    SUBCASE("fisher tracks the hessian near convergence and ranks checkpoints the same") {
        // gradient-descend a tiny logistic model on overlapping classes (the
        // residuals stay alive, which is where the proxy relation holds)
        nn::MlpSpec spec;
        spec.layer_widths = {2, 1};
        ParamVector w(spec.param_count(), 0.0);
        nn::Batch b;
        int n = 60;
        b.features = Matrix(n, 2);
        b.labels.resize(n);
        rng::Stream ds(77);
        for (int i = 0; i < n; ++i) {
            int y = i % 2;
            b.features.at(i, 0) = (y ? 0.7 : -0.7) + 0.9 * ds.normal();
            b.features.at(i, 1) = (y ? 0.5 : -0.5) + 0.9 * ds.normal();
            b.labels[i] = y;
        }
        std::vector<double> lam_f, lam_h;
        for (int step = 0; step < 100; ++step) {
            if (step % 20 == 0) {
                FimOperator op = FimOperator::from_batch(spec, w, b);
                lam_f.push_back(curv::top_eig_power(op, cfg, 5).lambda);
                lam_h.push_back(curv::top_eig_hessian(spec, w, b, cfg, 5).lambda);
            }
            ParamVector g = nn::grad(spec, w, b);
            kernels::axpy(-0.5, g, w);
        }
        REQUIRE(lam_f.size() == 5);
        for (std::size_t i = 0; i < lam_f.size(); ++i) {
            CHECK(lam_f[i] > 0.0);
            CHECK(lam_h[i] > 0.0);
            double ratio = lam_f[i] / lam_h[i];
            CHECK(ratio > 0.1);
            CHECK(ratio < 10.0);
        }
        // identical ranking across checkpoints
        for (std::size_t i = 0; i < lam_f.size(); ++i) {
            for (std::size_t j = i + 1; j < lam_f.size(); ++j) {
                CHECK(((lam_f[i] < lam_f[j]) == (lam_h[i] < lam_h[j])));
            }
        }
    }
}

TEST_CASE("excessive loss bound") {
    SUBCASE("coincident models cost nothing") {
        ParamVector g{0.1, -0.2};
        ParamVector theta{1.0, 2.0};
        CHECK(curv::excessive_loss_bound(theta, theta, g, 5.0) == 0.0);
    }

    SUBCASE("1-d quadratic: equality with the measured gap") {
        // J(w, b) = mean over x in {+s, -s} of 0.5 (w x + b - y(x))^2 has
        // Hessian diag(a, 1); displace the global along w only.
        double a = 2.5, wstar = 0.7, delta = 0.3;
        double s = std::sqrt(a);
        ParamVector local{wstar, 0.0};
        ParamVector global{wstar + delta, 0.0};
        auto j = [&](const ParamVector& w) {
            double acc = 0.0;
            double ys[2] = {s * wstar, -s * wstar};
            double xs[2] = {s, -s};
            for (int i = 0; i < 2; ++i) {
                double e = w[0] * xs[i] + w[1] - ys[i];
                acc += 0.5 * e * e;
            }
            return acc / 2.0;
        };
        double measured = j(global) - j(local);
        ParamVector zero_grad{0.0, 0.0};
        double bound = curv::excessive_loss_bound(global, local, zero_grad, a);
        CHECK(measured == doctest::Approx(0.5 * a * delta * delta).epsilon(1e-12));
        CHECK(std::abs(measured - bound) <= 1e-12);
    }

    SUBCASE("random quadratics: measured gap never beats the bound") {
        rng::Stream stream(41);
        nn::MlpSpec spec;
        spec.layer_widths = {2, 1};
        spec.output = nn::MlpSpec::Output::linear;
        int n = 8;
        nn::Batch b = random_batch(stream, n, 2);
        // local optimum = least squares solution
        Eigen::MatrixXd xa(n, 3);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            xa(i, 0) = b.features.at(i, 0);
            xa(i, 1) = b.features.at(i, 1);
            xa(i, 2) = 1.0;
            y(i) = b.labels[i];
        }
        Eigen::VectorXd wopt = (xa.transpose() * xa).ldlt().solve(xa.transpose() * y);
        ParamVector local{wopt[0], wopt[1], wopt[2]};
        ParamVector g_local = nn::grad(spec, local, b);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xa.transpose() * xa / n);
        double lam = es.eigenvalues().maxCoeff();
        double base = loss_quad(spec, local, b);
        for (int t = 0; t < 100; ++t) {
            ParamVector global = local;
            for (double& v : global) v += 0.5 * stream.normal();
            double r = loss_quad(spec, global, b) - base;
            double bound = curv::excessive_loss_bound(global, local, g_local, lam);
            CHECK(r <= bound + 1e-10);
        }
    }
}

TEST_CASE("group fisher bounds") {
    rng::Stream stream(43);
    PowerConfig cfg;

    SUBCASE("single group degenerates") {
        std::vector<FimOperator> groups;
        groups.push_back(random_fim(stream, 6, 8));
        curv::GroupBoundReport rep = curv::group_fim_bounds(groups, cfg, 1);
        CHECK(rep.lambda_full == doctest::Approx(rep.jensen_upper).epsilon(1e-9));
        CHECK(rep.lambda_full == doctest::Approx(rep.max_group_lambda).epsilon(1e-9));
        CHECK(std::abs(rep.slack_delta) <= 1e-9 * std::max(1.0, rep.lambda_full));
        CHECK(rep.alphas.size() == 1);
        CHECK(rep.alphas[0] == 1.0);
    }

    SUBCASE("identical groups keep all three quantities equal") {
        FimOperator g = random_fim(stream, 5, 7);
        std::vector<FimOperator> groups{g, g, g};
        curv::GroupBoundReport rep = curv::group_fim_bounds(groups, cfg, 2);
        CHECK(rep.lambda_full == doctest::Approx(rep.jensen_upper).epsilon(1e-9));
        CHECK(rep.lambda_full == doctest::Approx(rep.max_group_lambda).epsilon(1e-9));
        double asum = 0.0;
        for (double a : rep.alphas) asum += a;
        CHECK(asum == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("two random groups verified against the dense oracle") {
        for (int t = 0; t < 10; ++t) {
            int p = 4 + static_cast<int>(stream.below(28));
            FimOperator a = random_fim(stream, 3 + static_cast<int>(stream.below(8)), p);
            FimOperator b2 = random_fim(stream, 3 + static_cast<int>(stream.below(8)), p, 2.0);
            std::vector<FimOperator> groups{a, b2};
            curv::GroupBoundReport rep = curv::group_fim_bounds(groups, cfg, 100 + t);

            double la = top_eig_dense(a), lb = top_eig_dense(b2);
            double alpha_a = static_cast<double>(a.n()) / (a.n() + b2.n());
            CHECK(rep.group_lambdas[0] == doctest::Approx(la).epsilon(1e-6));
            CHECK(rep.group_lambdas[1] == doctest::Approx(lb).epsilon(1e-6));
            CHECK(rep.jensen_upper ==
                  doctest::Approx(alpha_a * la + (1 - alpha_a) * lb).epsilon(1e-6));
            CHECK(rep.lambda_full <= rep.jensen_upper + 1e-8);
        }
    }

    SUBCASE("empty group rejected") {
        std::vector<FimOperator> groups;
        groups.push_back(random_fim(stream, 2, 4));
        groups.push_back(FimOperator{Matrix(0, 4)});
        CHECK_THROWS_AS(curv::group_fim_bounds(groups, cfg, 0), ConfigError);
    }
}

TEST_CASE("group disparity") {
    CHECK(curv::group_disparity(std::vector<double>{0.4, 0.4}) == 0.0);
    CHECK(curv::group_disparity(std::vector<double>{0.061, 0.052}) ==
          doctest::Approx(0.009).epsilon(1e-12));
    CHECK(curv::group_disparity(std::vector<double>{3.0, 1.0, 2.5}) == doctest::Approx(2.0));
    CHECK_THROWS_AS(curv::group_disparity(std::vector<double>{1.0}), ConfigError);
}
