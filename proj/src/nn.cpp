#include "cafe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cafe/error.hpp"
#include "cafe/kernels.hpp"
#include "cafe/rng.hpp"

namespace cafe::nn {

namespace {

double stable_sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Parameter block offsets for layer l: weights (out x in, row-major), then bias.
struct LayerView {
    const double* w;  // out*in
    const double* b;  // out
    int in, out;
};

LayerView layer_view(const MlpSpec& spec, const ParamVector& params, int l) {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k) {
        off += static_cast<std::size_t>(spec.layer_widths[k]) * spec.layer_widths[k + 1] +
               spec.layer_widths[k + 1];
    }
    LayerView v;
    v.in = spec.layer_widths[l];
    v.out = spec.layer_widths[l + 1];
    v.w = params.data() + off;
    v.b = v.w + static_cast<std::size_t>(v.in) * v.out;
    return v;
}

struct MutableLayerView {
    double* w;
    double* b;
    int in, out;
};

MutableLayerView layer_view(const MlpSpec& spec, ParamVector& params, int l) {
    LayerView c = layer_view(spec, static_cast<const ParamVector&>(params), l);
    return {const_cast<double*>(c.w), const_cast<double*>(c.b), c.in, c.out};
}

struct Cache {
    std::vector<Matrix> z;  // pre-activations per layer, n x out
    std::vector<Matrix> a;  // post-activations per layer (output layer: transformed)
};

void check_shapes(const MlpSpec& spec, const ParamVector& params, const Matrix& features) {
    spec.validate();
    if (features.cols != spec.input_dim()) {
        throw DimensionError("feature dim " + std::to_string(features.cols) +
                             " does not match model input dim " +
                             std::to_string(spec.input_dim()));
    }
    if (static_cast<int>(params.size()) != spec.param_count()) {
        throw DimensionError("parameter vector length " + std::to_string(params.size()) +
                             " does not match spec P=" + std::to_string(spec.param_count()));
    }
}

void check_batch(const MlpSpec& spec, const ParamVector& params, const Batch& batch) {
    check_shapes(spec, params, batch.features);
    if (batch.size() < 1) throw DimensionError("batch is empty");
    if (static_cast<int>(batch.labels.size()) != batch.size()) {
        throw DimensionError("label count does not match feature rows");
    }
    for (int y : batch.labels) {
        if (y != 0 && y != 1) throw DimensionError("labels must be 0/1");
    }
}

Cache forward_cache(const MlpSpec& spec, const ParamVector& params, const Matrix& features) {
    int n = features.rows;
    int L = spec.num_layers();
    Cache c;
    c.z.reserve(L);
    c.a.reserve(L);
    const Matrix* prev = &features;
    for (int l = 0; l < L; ++l) {
        LayerView lv = layer_view(spec, params, l);
        Matrix z(n, lv.out);
        for (int i = 0; i < n; ++i) {
            auto x = prev->row(i);
            auto zi = z.row(i);
            for (int j = 0; j < lv.out; ++j) {
                std::span<const double> wj{lv.w + static_cast<std::size_t>(j) * lv.in,
                                           static_cast<std::size_t>(lv.in)};
                zi[j] = kernels::dot(wj, x) + lv.b[j];
            }
        }
        if (!all_finite(z.data)) {
            throw NumericError("non-finite pre-activation in layer " + std::to_string(l));
        }
        Matrix a(n, lv.out);
        bool last = (l == L - 1);
        for (std::size_t i = 0; i < z.data.size(); ++i) {
            double v = z.data[i];
            if (last) {
                a.data[i] = (spec.output == MlpSpec::Output::sigmoid_binary)
                                ? clamp_prob(stable_sigmoid(v))
                                : v;
            } else {
                a.data[i] = (spec.hidden == MlpSpec::Hidden::relu) ? std::max(0.0, v)
                                                                   : std::tanh(v);
            }
        }
        c.z.push_back(std::move(z));
        c.a.push_back(std::move(a));
        prev = &c.a.back();
    }
    return c;
}

// Backpropagates output deltas for the sample range [i0, i1) and adds the
// resulting parameter gradient into out (length P).
void backward_accumulate(const MlpSpec& spec, const ParamVector& params, const Matrix& features,
                         const Cache& cache, std::span<const double> out_delta, int i0, int i1,
                         std::span<double> out) {
    int L = spec.num_layers();
    int n = i1 - i0;

    // delta for the current layer, n x out
    Matrix delta(n, spec.layer_widths[L]);
    for (int i = 0; i < n; ++i) delta.at(i, 0) = out_delta[i0 + i];

    // Gradient offsets per layer.
    std::vector<std::size_t> offsets(L);
    {
        std::size_t off = 0;
        for (int l = 0; l < L; ++l) {
            offsets[l] = off;
            off += static_cast<std::size_t>(spec.layer_widths[l]) * spec.layer_widths[l + 1] +
                   spec.layer_widths[l + 1];
        }
    }

    for (int l = L - 1; l >= 0; --l) {
        LayerView lv = layer_view(spec, params, l);
        const Matrix& a_prev_full = (l == 0) ? features : cache.a[l - 1];

        double* gw = out.data() + offsets[l];
        double* gb = gw + static_cast<std::size_t>(lv.in) * lv.out;
        for (int i = 0; i < n; ++i) {
            auto x = a_prev_full.row(i0 + i);
            auto d = delta.row(i);
            for (int j = 0; j < lv.out; ++j) {
                if (d[j] == 0.0) continue;
                kernels::axpy(d[j], x,
                              {gw + static_cast<std::size_t>(j) * lv.in,
                               static_cast<std::size_t>(lv.in)});
                gb[j] += d[j];
            }
        }

        if (l == 0) break;

        Matrix delta_prev(n, lv.in);
        for (int i = 0; i < n; ++i) {
            auto d = delta.row(i);
            auto dp = delta_prev.row(i);
            for (int j = 0; j < lv.out; ++j) {
                if (d[j] == 0.0) continue;
                std::span<const double> wj{lv.w + static_cast<std::size_t>(j) * lv.in,
                                           static_cast<std::size_t>(lv.in)};
                kernels::axpy(d[j], wj, dp);
            }
            // multiply by activation derivative of the previous layer
            auto zp = cache.z[l - 1].row(i0 + i);
            auto ap = cache.a[l - 1].row(i0 + i);
            for (int k = 0; k < lv.in; ++k) {
                if (spec.hidden == MlpSpec::Hidden::relu) {
                    dp[k] = (zp[k] > 0.0) ? dp[k] : 0.0;
                } else {
                    dp[k] *= 1.0 - ap[k] * ap[k];
                }
            }
        }
        delta = std::move(delta_prev);
    }
}

// dLoss_i/dz at the output for sample i (no 1/n factor).
std::vector<double> output_residuals(const Cache& cache, const std::vector<int>& labels) {
    const Matrix& out = cache.a.back();
    std::vector<double> r(out.rows);
    for (int i = 0; i < out.rows; ++i) r[i] = out.at(i, 0) - labels[i];
    return r;
}

}  // namespace

int MlpSpec::param_count() const {
    int p = 0;
    for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
        p += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
    }
    return p;
}

void MlpSpec::validate() const {
    if (layer_widths.size() < 2) {
        throw ConfigError("layer_widths needs at least input and output entries");
    }
    for (int w : layer_widths) {
        if (w < 1) throw ConfigError("layer widths must be >= 1");
    }
    if (layer_widths.back() != 1) {
        throw ConfigError("output layer width must be 1 (scalar prediction)");
    }
}

std::vector<double> forward(const MlpSpec& spec, const ParamVector& params,
                            const Matrix& features) {
    check_shapes(spec, params, features);
    Cache c = forward_cache(spec, params, features);
    const Matrix& out = c.a.back();
    std::vector<double> y(out.rows);
    for (int i = 0; i < out.rows; ++i) y[i] = out.at(i, 0);
    return y;
}

double loss(const MlpSpec& spec, const ParamVector& params, const Batch& batch) {
    check_batch(spec, params, batch);
    std::vector<double> out = forward(spec, params, batch.features);
    double total = 0.0;
    for (int i = 0; i < batch.size(); ++i) {
        if (spec.output == MlpSpec::Output::sigmoid_binary) {
            double p = clamp_prob(out[i]);
            total += batch.labels[i] ? -std::log(p) : -std::log(1.0 - p);
        } else {
            double e = out[i] - batch.labels[i];
            total += 0.5 * e * e;
        }
    }
    return total / batch.size();
}

ParamVector grad(const MlpSpec& spec, const ParamVector& params, const Batch& batch) {
    check_batch(spec, params, batch);
    Cache cache = forward_cache(spec, params, batch.features);
    std::vector<double> deltas = output_residuals(cache, batch.labels);
    double inv_n = 1.0 / batch.size();
    for (double& d : deltas) d *= inv_n;
    ParamVector g(spec.param_count(), 0.0);
    backward_accumulate(spec, params, batch.features, cache, deltas, 0, batch.size(), g);
    if (!all_finite(g)) throw NumericError("non-finite gradient");
    return g;
}

Matrix per_sample_grads(const MlpSpec& spec, const ParamVector& params, const Batch& batch) {
    check_batch(spec, params, batch);
    Cache cache = forward_cache(spec, params, batch.features);
    std::vector<double> deltas = output_residuals(cache, batch.labels);
    Matrix g(batch.size(), spec.param_count());
    for (int i = 0; i < batch.size(); ++i) {
        backward_accumulate(spec, params, batch.features, cache, deltas, i, i + 1, g.row(i));
    }
    if (!all_finite(g.data)) throw NumericError("non-finite per-sample gradient");
    return g;
}

Classification classify(const MlpSpec& spec, const ParamVector& params, const Batch& batch,
                        double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("classification threshold must be in (0,1)");
    }
    check_batch(spec, params, batch);
    std::vector<double> out = forward(spec, params, batch.features);
    Classification c;
    c.predictions.resize(batch.size());
    c.correct_mask.resize(batch.size());
    for (int i = 0; i < batch.size(); ++i) {
        c.predictions[i] = out[i] >= threshold ? 1 : 0;
        c.correct_mask[i] = (c.predictions[i] == batch.labels[i]) ? 1 : 0;
    }
    return c;
}

ParamVector grad_from_output_delta(const MlpSpec& spec, const ParamVector& params,
                                   const Matrix& features, std::span<const double> deltas) {
    check_shapes(spec, params, features);
    if (static_cast<int>(deltas.size()) != features.rows) {
        throw DimensionError("delta count does not match feature rows");
    }
    Cache cache = forward_cache(spec, params, features);
    ParamVector g(spec.param_count(), 0.0);
    backward_accumulate(spec, params, features, cache, deltas, 0, features.rows, g);
    if (!all_finite(g)) throw NumericError("non-finite gradient");
    return g;
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParamVector p(spec.param_count(), 0.0);
    rng::Stream stream(seed);
    for (int l = 0; l < spec.num_layers(); ++l) {
        MutableLayerView lv = layer_view(spec, p, l);
        double s = 1.0 / std::sqrt(static_cast<double>(lv.in));
        for (int j = 0; j < lv.out * lv.in; ++j) lv.w[j] = s * stream.normal();
        // biases stay zero
    }
    return p;
}

}  // namespace cafe::nn
