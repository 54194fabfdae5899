#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cafe/types.hpp"

// Minimal fully-connected network with exact analytic gradients. All
// arithmetic is double precision; every operation is a pure function of its
// inputs and safe to call concurrently.

namespace cafe::nn {

struct MlpSpec {
    enum class Hidden { relu, tanh };
    enum class Output { sigmoid_binary, linear };

    std::vector<int> layer_widths;  // input dim first, output dim (1) last
    Hidden hidden = Hidden::relu;
    Output output = Output::sigmoid_binary;

    int input_dim() const { return layer_widths.front(); }
    int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }

    // P = sum over layers of (in*out + out).
    int param_count() const;

    // Throws ConfigError on malformed widths. The output layer must have
    // width 1 (scalar prediction per sample).
    void validate() const;
};

struct Batch {
    Matrix features;              // n x input_dim
    std::vector<int> labels;      // 0/1, length n
    std::vector<int> groups;      // optional tags, length n or empty; never read
                                  // by training code, only by the metrics module
    int size() const { return features.rows; }
};

// Probability clamp applied inside the cross-entropy loss so log() stays
// finite. The gradient path uses the exact sigmoid composite (p - y) and is
// unaffected by the clamp.
inline constexpr double kProbClamp = 1e-12;

// Model output per sample: sigmoid probability or raw linear output.
// Throws DimensionError on shape mismatch.
std::vector<double> forward(const MlpSpec& spec, const ParamVector& params,
                            const Matrix& features);

// Mean loss: binary cross-entropy for sigmoid output, squared error
// 0.5*(pred - y)^2 for linear output (so the gradient is the plain residual).
double loss(const MlpSpec& spec, const ParamVector& params, const Batch& batch);

// Gradient of the mean loss. Throws NumericError naming the layer if a
// non-finite intermediate shows up.
ParamVector grad(const MlpSpec& spec, const ParamVector& params, const Batch& batch);

// One gradient row per sample (of that sample's own loss, no 1/n factor).
// The arithmetic mean of the rows equals grad().
Matrix per_sample_grads(const MlpSpec& spec, const ParamVector& params, const Batch& batch);

struct Classification {
    std::vector<int> predictions;   // 0/1
    std::vector<int> correct_mask;  // 1 iff prediction == label
};

// Threshold rule: probability >= threshold predicts class 1.
Classification classify(const MlpSpec& spec, const ParamVector& params, const Batch& batch,
                        double threshold);

// Backpropagates caller-supplied per-sample output deltas dLoss/dz (z = the
// output pre-activation) through the network. Used for distillation losses
// whose output delta is not the plain (p - y) residual.
ParamVector grad_from_output_delta(const MlpSpec& spec, const ParamVector& params,
                                   const Matrix& features, std::span<const double> deltas);

// Deterministic random initialization: Gaussian weights scaled by
// 1/sqrt(fan_in), zero biases.
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed);

}  // namespace cafe::nn
