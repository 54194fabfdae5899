#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "cafe/curvature.hpp"
#include "cafe/metrics.hpp"
#include "cafe/nn.hpp"
#include "cafe/optim.hpp"
#include "cafe/rng.hpp"
#include "cafe/synth.hpp"
#include "cafe/types.hpp"

// Federated round machinery: curvature-penalized local training,
// sharpness-aware aggregation, cyclic weight averaging and the reference
// baselines (fedavg, fedsam, fedswa, kd_fedavg).

namespace cafe::fl {

using ClientState = data::ClientData;

enum class Method { cafe, fedavg, fedsam, fedswa, kd_fedavg };

// Per-axis overrides; method_default resolves to the method's own choice.
enum class Optimizer { method_default, sgd, sam };
enum class Weighting { method_default, sharpness, data_size, uniform };
enum class SwaMode { method_default, on, off };

struct MethodConfig {
    Method method = Method::cafe;
    double alpha = 0.92;     // balance between classification loss and penalty
    double epsilon = 0.005;  // additive constant in the aggregation scores
    int cycle = 5;           // averaging cycle length
    double swa_start_fraction = 0.2;
    int epochs = 3;      // E
    int batch_size = 32; // B
    int total_rounds = 80;
    double base_lr = 0.01;
    double swa_lr = 0.001;
    double sam_rho = 0.05;
    int kd_warmup_rounds = -1;  // -1: 20% of total_rounds
    double kd_temperature = 2.0;
    double kd_mix = 0.5;
    Optimizer optimizer = Optimizer::method_default;
    Weighting weighting = Weighting::method_default;
    SwaMode swa = SwaMode::method_default;
    curv::PowerConfig curvature{};

    void validate() const;

    bool uses_sam() const;
    bool uses_penalty() const;
    bool swa_enabled() const;
    Weighting effective_weighting() const;
    int swa_start_round() const;
    int effective_kd_warmup() const;
};

struct TrainReturn {
    ParamVector params;
    double eval_loss = 0.0;
    double eval_lambda = 0.0;
};

struct AggregationWeights {
    std::vector<double> weights;  // nonnegative, sum to 1
};

struct PenaltyResult {
    double lambda_correct = 0.0;  // top Fisher eigenvalue over correct samples
    ParamVector grad_penalty;     // d lambda / d theta, eigenvector held fixed
    int n_correct = 0;
};

// Curvature penalty over the batch's correctly classified samples. Returns
// the raw top eigenvalue (the 1/N_correct factor is applied where the local
// loss is assembled) and its parameter gradient
//   (2/N_c) * sum_i (g_i . v) H_i v,
// with H_i v from per-sample central differences of the gradients and the
// top eigenvector v held fixed (first-order exact at simple eigenvalues).
// No correct samples: everything zero, caller skips the term.
PenaltyResult penalty_lambda_and_grad(const nn::MlpSpec& spec, const ParamVector& params,
                                      const nn::Batch& batch, const curv::PowerConfig& cfg,
                                      std::uint64_t seed);

// alpha * ce + (1 - alpha) * lambda / n_correct (second term 0 when
// n_correct == 0).
double client_local_loss(double ce_loss, double lambda_correct, int n_correct, double alpha);

struct RoundContext {
    double lr = 0.01;
    std::uint64_t rng_seed = 0;
    bool kd_active = false;  // distill from the incoming global this round
};

// Local training: E epochs of mini-batch updates on the method's objective,
// evaluated on the client's eval split after each epoch; returns the best
// epoch by eval loss. The eval eigenvalue is computed over the full eval
// set's correctly classified samples.
TrainReturn train_client(const ClientState& client, const ParamVector& global_params,
                         const nn::MlpSpec& spec, const MethodConfig& cfg,
                         const RoundContext& ctx);

// W = S(S(L) . S(T)) with L = {eps + 1/loss}, T = {eps + 1/lambda} and S the
// softmax. Losses/eigenvalues are floored at 1e-8 before the reciprocal.
AggregationWeights aggregation_weights(std::span<const double> eval_losses,
                                       std::span<const double> eval_lambdas, double epsilon);

// Convex combination of parameter vectors.
ParamVector aggregate(const std::vector<ParamVector>& models, const AggregationWeights& w);

// Running mean: (n_models * g_swa + g_round) / (n_models + 1); n_models = 0
// returns g_round.
ParamVector swa_update(const ParamVector& g_swa, const ParamVector& g_round, int n_models);

// mix * CE(hard labels) + (1-mix) * KL(teacher_softened || student_softened),
// probabilities softened through the logit at the given temperature.
double kd_distill_loss(std::span<const double> student_probs,
                       std::span<const double> teacher_probs, std::span<const int> hard_labels,
                       double temperature, double mix);

// Independent Bernoulli participation draw; empty draws are retried (at most
// 100 times) before failing.
std::vector<int> sample_clients(std::span<const double> participation_probs,
                                rng::Stream& stream);

struct ClientRoundStat {
    int id;
    double eval_loss;
    double eval_lambda;
    double weight;
};

struct RoundReport {
    int round = 0;
    std::vector<ClientRoundStat> clients;
    double f1 = 0.0;
    double accuracy = 0.0;
    double eo_gap = 0.0;         // NaN if undefined for this round's eval pool
    double eo_gap_signed = 0.0;
    std::map<int, fair::GroupMetrics> per_group;
    std::map<int, double> group_lambdas;  // served model's Fisher top eigenvalue per group
    double group_lambda_disparity = 0.0;
    double lr = 0.0;
    bool swa_active = false;
};

struct ExperimentResult {
    std::vector<RoundReport> reports;
    ParamVector final_global;
};

// Full round loop. participation empty = every client in every round;
// otherwise one inclusion probability per client. Deterministic given seed.
ExperimentResult run_experiment(const std::vector<ClientState>& clients,
                                const nn::MlpSpec& spec, const MethodConfig& cfg,
                                std::uint64_t seed,
                                std::span<const double> participation = {});

}  // namespace cafe::fl
