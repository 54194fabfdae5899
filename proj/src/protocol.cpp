#include "cafe/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cafe/error.hpp"
#include "cafe/kernels.hpp"

namespace cafe::fl {

namespace {

constexpr double kReciprocalFloor = 1e-8;
constexpr double kClassifyThreshold = 0.5;
constexpr double kPenaltyFdStep = 1e-4;

nn::Batch gather(const nn::Batch& batch, const std::vector<int>& idx) {
    nn::Batch out;
    out.features = Matrix(static_cast<int>(idx.size()), batch.features.cols);
    out.labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = batch.features.row(idx[i]);
        std::copy(src.begin(), src.end(), out.features.row(static_cast<int>(i)).begin());
        out.labels.push_back(batch.labels[idx[i]]);
    }
    return out;
}

std::vector<double> softmax(std::span<const double> x) {
    double m = *std::max_element(x.begin(), x.end());
    std::vector<double> e(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = std::exp(x[i] - m);
        sum += e[i];
    }
    for (double& v : e) v /= sum;
    return e;
}

double clamp_prob(double p) { return std::clamp(p, nn::kProbClamp, 1.0 - nn::kProbClamp); }

// Training only needs the eigenvalue scale; if the iteration budget runs out
// (clustered top eigenvalues), the best estimate is good enough to proceed.
curv::SpectrumEstimate top_eig_best_effort(const curv::FimOperator& op,
                                           const curv::PowerConfig& cfg, std::uint64_t seed) {
    try {
        return curv::top_eig_power(op, cfg, seed);
    } catch (const curv::ConvergenceError& e) {
        return e.best;
    }
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// Fisher top eigenvalue over the correctly classified part of a batch;
// 0 when nothing is classified correctly.
double eval_lambda_correct(const nn::MlpSpec& spec, const ParamVector& params,
                           const nn::Batch& batch, const curv::PowerConfig& cfg,
                           std::uint64_t seed) {
    nn::Classification cls = nn::classify(spec, params, batch, kClassifyThreshold);
    std::vector<int> idx;
    for (int i = 0; i < batch.size(); ++i) {
        if (cls.correct_mask[i]) idx.push_back(i);
    }
    if (idx.empty()) return 0.0;
    nn::Batch sub = gather(batch, idx);
    curv::FimOperator op = curv::FimOperator::from_batch(spec, params, sub);
    return top_eig_best_effort(op, cfg, seed).lambda;
}

}  // namespace

void MethodConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("method: alpha must be in [0,1]");
    if (!(epsilon > 0.0)) throw ConfigError("method: epsilon must be > 0");
    if (cycle < 1) throw ConfigError("method: cycle must be >= 1");
    if (!(swa_start_fraction >= 0.0 && swa_start_fraction <= 1.0)) {
        throw ConfigError("method: swa_start_fraction must be in [0,1]");
    }
    if (epochs < 0) throw ConfigError("method: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("method: batch_size must be >= 1");
    if (total_rounds < 0) throw ConfigError("method: rounds must be >= 0");
    if (!(base_lr > 0.0) || !(swa_lr > 0.0)) throw ConfigError("method: learning rates must be > 0");
    if (sam_rho < 0.0) throw ConfigError("method: sam_rho must be >= 0");
    if (!(kd_temperature > 0.0)) throw ConfigError("method: kd_temperature must be > 0");
    if (!(kd_mix >= 0.0 && kd_mix <= 1.0)) throw ConfigError("method: kd_mix must be in [0,1]");
    if (!(curvature.tol > 0.0)) throw ConfigError("method: curvature_tol must be > 0");
    if (curvature.max_iter < 1) throw ConfigError("method: curvature_max_iter must be >= 1");
}

bool MethodConfig::uses_sam() const {
    if (optimizer == Optimizer::sgd) return false;
    if (optimizer == Optimizer::sam) return true;
    return method == Method::cafe || method == Method::fedsam || method == Method::fedswa;
}

bool MethodConfig::uses_penalty() const {
    // With alpha = 1 the penalty term has zero weight; skipping it keeps the
    // update identical to the plain objective.
    return method == Method::cafe && alpha < 1.0;
}

bool MethodConfig::swa_enabled() const {
    if (swa == SwaMode::on) return true;
    if (swa == SwaMode::off) return false;
    return method == Method::cafe || method == Method::fedswa;
}

Weighting MethodConfig::effective_weighting() const {
    if (weighting != Weighting::method_default) return weighting;
    return method == Method::cafe ? Weighting::sharpness : Weighting::data_size;
}

int MethodConfig::swa_start_round() const {
    return static_cast<int>(std::llround(swa_start_fraction * total_rounds));
}

int MethodConfig::effective_kd_warmup() const {
    if (kd_warmup_rounds >= 0) return kd_warmup_rounds;
    return static_cast<int>(std::llround(0.2 * total_rounds));
}

PenaltyResult penalty_lambda_and_grad(const nn::MlpSpec& spec, const ParamVector& params,
                                      const nn::Batch& batch, const curv::PowerConfig& cfg,
                                      std::uint64_t seed) {
    nn::Classification cls = nn::classify(spec, params, batch, kClassifyThreshold);
    std::vector<int> idx;
    for (int i = 0; i < batch.size(); ++i) {
        if (cls.correct_mask[i]) idx.push_back(i);
    }
    PenaltyResult res;
    res.grad_penalty.assign(params.size(), 0.0);
    res.n_correct = static_cast<int>(idx.size());
    if (idx.empty()) return res;

    nn::Batch sub = gather(batch, idx);
    Matrix grads = nn::per_sample_grads(spec, params, sub);
    curv::FimOperator op{grads};
    curv::SpectrumEstimate est = top_eig_best_effort(op, cfg, seed);
    res.lambda_correct = est.lambda;

    // lambda(theta) = (1/N_c) sum_i (g_i(theta) . v)^2 with v frozen;
    // d lambda = (2/N_c) sum_i (g_i . v) H_i v. The per-sample H_i v come
    // from one central difference of the per-sample gradients along v.
    const ParamVector& v = est.eigvec;
    double s = kPenaltyFdStep * std::max(1.0, kernels::nrm2(params));
    ParamVector theta_p = params;
    ParamVector theta_m = params;
    kernels::axpy(s, v, theta_p);
    kernels::axpy(-s, v, theta_m);
    Matrix gp = nn::per_sample_grads(spec, theta_p, sub);
    Matrix gm = nn::per_sample_grads(spec, theta_m, sub);

    int n_c = res.n_correct;
    double scale = 1.0 / (n_c * s);  // (2/N_c) * 1/(2s)
    for (int i = 0; i < n_c; ++i) {
        double ci = kernels::dot(grads.row(i), v) * scale;
        if (ci == 0.0) continue;
        kernels::axpy(ci, gp.row(i), res.grad_penalty);
        kernels::axpy(-ci, gm.row(i), res.grad_penalty);
    }
    if (!all_finite(res.grad_penalty)) {
        throw NumericError("non-finite curvature penalty gradient");
    }
    return res;
}

double client_local_loss(double ce_loss, double lambda_correct, int n_correct, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
    double penalty = n_correct > 0 ? lambda_correct / n_correct : 0.0;
    return alpha * ce_loss + (1.0 - alpha) * penalty;
}

TrainReturn train_client(const ClientState& client, const ParamVector& global_params,
                         const nn::MlpSpec& spec, const MethodConfig& cfg,
                         const RoundContext& ctx) {
    try {
        if (cfg.epochs == 0) {
            TrainReturn ret;
            ret.params = global_params;
            ret.eval_loss = nn::loss(spec, global_params, client.eval);
            ret.eval_lambda = eval_lambda_correct(spec, global_params, client.eval,
                                                  cfg.curvature, rng::mix(ctx.rng_seed, 0xE7A1u));
            return ret;
        }

        ParamVector theta = global_params;
        int n = client.train.size();

        // Teacher probabilities for distillation come from the incoming
        // global model and stay fixed for the whole local phase.
        std::vector<double> teacher;
        if (ctx.kd_active) {
            teacher = nn::forward(spec, global_params, client.train.features);
        }

        ParamVector best_params;
        double best_loss = std::numeric_limits<double>::infinity();

        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng::Stream shuffle_stream(rng::mix(ctx.rng_seed, 0x5u, epoch));
            shuffle_stream.shuffle(order);

            int batch_index = 0;
            for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
                int end = std::min(n, start + cfg.batch_size);
                std::vector<int> idx(order.begin() + start, order.begin() + end);
                nn::Batch sub = gather(client.train, idx);

                if (ctx.kd_active) {
                    // Distillation: output deltas carry both the hard-label
                    // and the softened-teacher terms.
                    std::vector<double> q = nn::forward(spec, theta, sub.features);
                    std::vector<double> deltas(q.size());
                    double inv_b = 1.0 / static_cast<double>(q.size());
                    for (std::size_t i = 0; i < q.size(); ++i) {
                        double qc = clamp_prob(q[i]);
                        double pc = clamp_prob(teacher[idx[i]]);
                        double q_t = sigmoid(logit(qc) / cfg.kd_temperature);
                        double p_t = sigmoid(logit(pc) / cfg.kd_temperature);
                        double hard = qc - sub.labels[i];
                        double soft = (q_t - p_t) / cfg.kd_temperature;
                        deltas[i] = (cfg.kd_mix * hard + (1.0 - cfg.kd_mix) * soft) * inv_b;
                    }
                    ParamVector g =
                        nn::grad_from_output_delta(spec, theta, sub.features, deltas);
                    theta = opt::sgd_step(theta, g, ctx.lr);
                    continue;
                }

                // Penalty gradient is evaluated once at the base point and
                // held fixed through the SAM perturbation.
                ParamVector penalty_term;
                bool penalized = false;
                if (cfg.uses_penalty()) {
                    PenaltyResult pen = penalty_lambda_and_grad(
                        spec, theta, sub, cfg.curvature,
                        rng::mix(ctx.rng_seed, 0x9E417ull + epoch, batch_index));
                    if (pen.n_correct > 0) {
                        penalty_term = std::move(pen.grad_penalty);
                        kernels::scale(penalty_term, (1.0 - cfg.alpha) / pen.n_correct);
                        penalized = true;
                    }
                }

                opt::GradFn grad_fn = [&](const ParamVector& p) {
                    ParamVector g = nn::grad(spec, p, sub);
                    if (cfg.uses_penalty()) {
                        kernels::scale(g, cfg.alpha);
                        if (penalized) kernels::axpy(1.0, penalty_term, g);
                    }
                    return g;
                };

                if (cfg.uses_sam()) {
                    theta = opt::sam_step(theta, grad_fn, {cfg.sam_rho, ctx.lr});
                } else {
                    theta = opt::sgd_step(theta, grad_fn(theta), ctx.lr);
                }
            }

            double eval_loss = nn::loss(spec, theta, client.eval);
            if (eval_loss < best_loss) {
                best_loss = eval_loss;
                best_params = theta;
            }
        }

        TrainReturn ret;
        ret.params = std::move(best_params);
        ret.eval_loss = best_loss;
        ret.eval_lambda = eval_lambda_correct(spec, ret.params, client.eval, cfg.curvature,
                                              rng::mix(ctx.rng_seed, 0xE7A1u));
        return ret;
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw NumericError("client " + std::to_string(client.id) + ": " + e.what());
    }
}

AggregationWeights aggregation_weights(std::span<const double> eval_losses,
                                       std::span<const double> eval_lambdas, double epsilon) {
    if (eval_losses.empty() || eval_losses.size() != eval_lambdas.size()) {
        throw DimensionError("aggregation_weights: input size mismatch");
    }
    std::size_t n = eval_losses.size();
    std::vector<double> L(n), T(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(eval_losses[i]) || !std::isfinite(eval_lambdas[i])) {
            throw NumericError("aggregation_weights: non-finite input");
        }
        L[i] = epsilon + 1.0 / std::max(eval_losses[i], kReciprocalFloor);
        T[i] = epsilon + 1.0 / std::max(eval_lambdas[i], kReciprocalFloor);
    }
    std::vector<double> sl = softmax(L);
    std::vector<double> st = softmax(T);
    std::vector<double> prod(n);
    for (std::size_t i = 0; i < n; ++i) prod[i] = sl[i] * st[i];
    return AggregationWeights{softmax(prod)};
}

ParamVector aggregate(const std::vector<ParamVector>& models, const AggregationWeights& w) {
    if (models.empty() || models.size() != w.weights.size()) {
        throw DimensionError("aggregate: model/weight count mismatch");
    }
    std::size_t p = models.front().size();
    ParamVector out(p, 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (models[i].size() != p) throw DimensionError("aggregate: parameter length mismatch");
        kernels::axpy(w.weights[i], models[i], out);
    }
    return out;
}

ParamVector swa_update(const ParamVector& g_swa, const ParamVector& g_round, int n_models) {
    if (n_models < 0) throw ConfigError("swa_update: n_models must be >= 0");
    if (n_models == 0) return g_round;
    if (g_swa.size() != g_round.size()) throw DimensionError("swa_update: length mismatch");
    ParamVector out(g_round.size());
    double inv = 1.0 / (n_models + 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (n_models * g_swa[i] + g_round[i]) * inv;
    }
    return out;
}

double kd_distill_loss(std::span<const double> student_probs,
                       std::span<const double> teacher_probs, std::span<const int> hard_labels,
                       double temperature, double mix) {
    if (student_probs.size() != teacher_probs.size() ||
        student_probs.size() != hard_labels.size() || student_probs.empty()) {
        throw DimensionError("kd_distill_loss: input size mismatch");
    }
    if (!(temperature > 0.0)) throw ConfigError("kd_distill_loss: temperature must be > 0");
    if (!(mix >= 0.0 && mix <= 1.0)) throw ConfigError("kd_distill_loss: mix must be in [0,1]");
    double total = 0.0;
    for (std::size_t i = 0; i < student_probs.size(); ++i) {
        double q = clamp_prob(student_probs[i]);
        double p = clamp_prob(teacher_probs[i]);
        double ce = hard_labels[i] ? -std::log(q) : -std::log(1.0 - q);
        double q_t = sigmoid(logit(q) / temperature);
        double p_t = sigmoid(logit(p) / temperature);
        double kl = p_t * std::log(p_t / q_t) + (1.0 - p_t) * std::log((1.0 - p_t) / (1.0 - q_t));
        total += mix * ce + (1.0 - mix) * kl;
    }
    return total / static_cast<double>(student_probs.size());
}

std::vector<int> sample_clients(std::span<const double> participation_probs,
                                rng::Stream& stream) {
    for (double p : participation_probs) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError("sample_clients: probabilities must be in [0,1]");
        }
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<int> ids;
        for (std::size_t i = 0; i < participation_probs.size(); ++i) {
            if (stream.uniform() < participation_probs[i]) ids.push_back(static_cast<int>(i));
        }
        if (!ids.empty()) return ids;
    }
    throw ConfigError("sample_clients: 100 consecutive empty draws");
}

namespace {

struct EvalPool {
    nn::Batch batch;  // union of all client eval sets (with group tags)
};

EvalPool build_eval_pool(const std::vector<ClientState>& clients) {
    int total = 0;
    int dim = clients.front().eval.features.cols;
    for (const auto& c : clients) total += c.eval.size();
    EvalPool pool;
    pool.batch.features = Matrix(total, dim);
    pool.batch.labels.reserve(total);
    pool.batch.groups.reserve(total);
    int row = 0;
    for (const auto& c : clients) {
        for (int i = 0; i < c.eval.size(); ++i) {
            auto src = c.eval.features.row(i);
            std::copy(src.begin(), src.end(), pool.batch.features.row(row).begin());
            pool.batch.labels.push_back(c.eval.labels[i]);
            pool.batch.groups.push_back(c.eval.groups.empty() ? 0 : c.eval.groups[i]);
            ++row;
        }
    }
    return pool;
}

void fill_global_eval(RoundReport& rep, const nn::MlpSpec& spec, const ParamVector& served,
                      const EvalPool& pool, const curv::PowerConfig& pcfg,
                      std::uint64_t seed) {
    nn::Classification cls = nn::classify(spec, served, pool.batch, kClassifyThreshold);
    std::vector<fair::PredictionRecord> records(pool.batch.size());
    for (int i = 0; i < pool.batch.size(); ++i) {
        records[i] = {pool.batch.labels[i], cls.predictions[i], pool.batch.groups[i]};
    }
    fair::MetricsReport metrics = fair::compute_metrics(records);
    rep.f1 = metrics.f1;
    rep.accuracy = metrics.accuracy;
    rep.per_group = std::move(metrics.per_group);
    rep.eo_gap = metrics.eo_gap;
    rep.eo_gap_signed = metrics.eo_gap_signed;

    // Per-group Fisher top eigenvalue of the served model over the pooled
    // eval data (all group samples, no correctness filter).
    std::map<int, std::vector<int>> by_group;
    for (int i = 0; i < pool.batch.size(); ++i) by_group[pool.batch.groups[i]].push_back(i);
    for (const auto& [g, idx] : by_group) {
        nn::Batch sub = gather(pool.batch, idx);
        curv::FimOperator op = curv::FimOperator::from_batch(spec, served, sub);
        rep.group_lambdas[g] =
            top_eig_best_effort(op, pcfg,
                                rng::mix(seed, 0x9A0Bu, static_cast<std::uint64_t>(g)))
                .lambda;
    }
    if (rep.group_lambdas.size() >= 2) {
        std::vector<double> lams;
        for (const auto& [g, l] : rep.group_lambdas) lams.push_back(l);
        rep.group_lambda_disparity = curv::group_disparity(lams);
    } else {
        rep.group_lambda_disparity = 0.0;
    }
}

}  // namespace

ExperimentResult run_experiment(const std::vector<ClientState>& clients,
                                const nn::MlpSpec& spec, const MethodConfig& cfg,
                                std::uint64_t seed,
                                std::span<const double> participation) {
    cfg.validate();
    spec.validate();
    if (clients.empty()) throw ConfigError("run_experiment: need at least one client");
    if (!participation.empty() && participation.size() != clients.size()) {
        throw ConfigError("run_experiment: participation probabilities must match client count");
    }

    ExperimentResult result;
    ParamVector global = nn::init_params(spec, rng::mix(seed, 0x1417u));
    if (cfg.total_rounds == 0) {
        result.final_global = std::move(global);
        return result;
    }

    const bool swa_on = cfg.swa_enabled();
    const int swa_start = cfg.swa_start_round();
    const int kd_warmup = cfg.effective_kd_warmup();
    opt::LrSchedule sched{cfg.base_lr, cfg.swa_lr, swa_on ? swa_start : cfg.total_rounds,
                          cfg.total_rounds};

    ParamVector g_swa;
    bool swa_started = false;
    int swa_count = 0;

    EvalPool pool = build_eval_pool(clients);

    for (int r = 0; r < cfg.total_rounds; ++r) {
        // Averaging bookkeeping runs on the round's incoming global.
        if (swa_on && r >= swa_start) {
            if (!swa_started) {
                g_swa = global;
                swa_started = true;
                swa_count = 1;
            } else if (r % cfg.cycle == 0) {
                g_swa = swa_update(g_swa, global, swa_count);
                ++swa_count;
            }
        }
        double lr = opt::lr_at_round(sched, r);

        std::vector<int> active(clients.size());
        std::iota(active.begin(), active.end(), 0);
        if (!participation.empty()) {
            rng::Stream part_stream(rng::mix(seed, 0xBE12u, static_cast<std::uint64_t>(r)));
            active = sample_clients(participation, part_stream);
        }

        bool kd_active = cfg.method == Method::kd_fedavg && r >= kd_warmup;

        std::vector<TrainReturn> returns;
        returns.reserve(active.size());
        for (int ci : active) {
            RoundContext ctx;
            ctx.lr = lr;
            ctx.rng_seed = rng::mix(clients[ci].rng_seed, rng::mix(seed, r), clients[ci].id);
            ctx.kd_active = kd_active;
            returns.push_back(train_client(clients[ci], global, spec, cfg, ctx));
        }

        AggregationWeights weights;
        switch (cfg.effective_weighting()) {
            case Weighting::sharpness: {
                std::vector<double> losses, lambdas;
                for (const auto& t : returns) {
                    losses.push_back(t.eval_loss);
                    lambdas.push_back(t.eval_lambda);
                }
                weights = aggregation_weights(losses, lambdas, cfg.epsilon);
                break;
            }
            case Weighting::data_size: {
                double total = 0.0;
                for (int ci : active) total += clients[ci].train.size();
                for (int ci : active) weights.weights.push_back(clients[ci].train.size() / total);
                break;
            }
            default: {
                weights.weights.assign(active.size(), 1.0 / active.size());
                break;
            }
        }

        std::vector<ParamVector> models;
        models.reserve(returns.size());
        for (auto& t : returns) models.push_back(t.params);
        global = aggregate(models, weights);

        const ParamVector& served = (swa_on && swa_started) ? g_swa : global;

        RoundReport rep;
        rep.round = r;
        rep.lr = lr;
        rep.swa_active = swa_started;
        for (std::size_t k = 0; k < active.size(); ++k) {
            rep.clients.push_back(ClientRoundStat{clients[active[k]].id, returns[k].eval_loss,
                                                  returns[k].eval_lambda, weights.weights[k]});
        }
        fill_global_eval(rep, spec, served, pool, cfg.curvature,
                         rng::mix(seed, 0x60Du, static_cast<std::uint64_t>(r)));
        result.reports.push_back(std::move(rep));
    }

    result.final_global = (swa_on && swa_started) ? g_swa : global;
    return result;
}

}  // namespace cafe::fl
