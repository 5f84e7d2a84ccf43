#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "heliomc/common.hpp"
#include "heliomc/dataset.hpp"
#include "heliomc/rng.hpp"

namespace heliomc {

// Standard self-normalizing constants.
inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kLn10 = 2.302585092994045684;

enum class Activation : std::uint8_t { selu = 0, identity = 1 };

inline std::string activation_name(Activation a) { return a == Activation::selu ? "selu" : "identity"; }

inline Activation activation_from_name(const std::string& s) {
    if (s == "selu") return Activation::selu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "'");
}

inline double selu(double x) {
    return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

// Derivative w.r.t. the pre-activation; at the kink we take the x <= 0 branch.
inline double selu_deriv(double x) {
    return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
}

inline double activate(Activation a, double x) { return a == Activation::selu ? selu(x) : x; }
inline double activate_deriv(Activation a, double x) { return a == Activation::selu ? selu_deriv(x) : 1.0; }

// Fully connected network. Hidden layers use `activation`, the output layer
// is always linear. The input/output affine maps hold the standardization
// constants learned at training time; hand-built models keep the identity
// maps, so `forward` is then the bare network function.
struct MlpModel {
    std::vector<std::size_t> layer_dims;  // [n_in, hidden..., n_out]
    std::vector<Mat> weights;             // weights[l]: layer_dims[l+1] x layer_dims[l]
    std::vector<Vec> biases;
    Activation activation = Activation::selu;
    Vec input_center, input_half;    // standardized input = (x - center) / half
    Vec output_offset, output_scale; // output = raw * scale + offset

    std::size_t n_layers() const { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < n_layers(); ++l) n += weights[l].data.size() + biases[l].size();
        return n;
    }
};

inline MlpModel make_mlp(std::vector<std::size_t> dims, Activation act = Activation::selu) {
    if (dims.size() < 2) throw DimensionError("mlp needs at least an input and an output layer");
    for (auto d : dims)
        if (d == 0) throw DimensionError("mlp layer dimension must be positive");
    MlpModel m;
    m.layer_dims = std::move(dims);
    m.activation = act;
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        m.weights.emplace_back(m.layer_dims[l + 1], m.layer_dims[l], 0.0);
        m.biases.emplace_back(m.layer_dims[l + 1], 0.0);
    }
    m.input_center.assign(m.input_dim(), 0.0);
    m.input_half.assign(m.input_dim(), 1.0);
    m.output_offset.assign(m.output_dim(), 0.0);
    m.output_scale.assign(m.output_dim(), 1.0);
    return m;
}

// LeCun init: per-layer Gaussian with std 1/sqrt(fan_in).
inline void init_lecun(MlpModel& m, Rng& rng) {
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        double sd = 1.0 / std::sqrt(static_cast<double>(m.layer_dims[l]));
        for (double& w : m.weights[l].data) w = sd * rng.normal();
        for (double& b : m.biases[l]) b = 0.0;
    }
}

inline void validate_model(const MlpModel& m) {
    if (m.layer_dims.size() < 2 || m.n_layers() != m.layer_dims.size() - 1 || m.biases.size() != m.n_layers())
        throw DimensionError("mlp layer bookkeeping inconsistent");
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        if (m.weights[l].rows != m.layer_dims[l + 1] || m.weights[l].cols != m.layer_dims[l])
            throw DimensionError("weight matrix " + std::to_string(l) + " has wrong shape");
        if (m.biases[l].size() != m.layer_dims[l + 1])
            throw DimensionError("bias vector " + std::to_string(l) + " has wrong length");
        if (!all_finite(m.weights[l].data) || !all_finite(m.biases[l]))
            throw NumericError("non-finite parameter in layer " + std::to_string(l));
    }
    if (m.input_center.size() != m.input_dim() || m.input_half.size() != m.input_dim() ||
        m.output_offset.size() != m.output_dim() || m.output_scale.size() != m.output_dim())
        throw DimensionError("standardization constants have wrong length");
    if (!all_finite(m.input_center) || !all_finite(m.input_half) || !all_finite(m.output_offset) ||
        !all_finite(m.output_scale))
        throw NumericError("non-finite standardization constant");
}

struct ForwardCache {
    Vec std_input;          // standardized input
    std::vector<Vec> pre;   // pre-activations z_l = W_l a_l + b_l
    std::vector<Vec> post;  // activations a_{l+1}; last entry is the raw linear output
};

inline void forward_cached(const MlpModel& m, const Vec& input, ForwardCache& c) {
    if (input.size() != m.input_dim())
        throw DimensionError("forward: input length " + std::to_string(input.size()) + " != " +
                             std::to_string(m.input_dim()));
    c.std_input.resize(m.input_dim());
    for (std::size_t i = 0; i < input.size(); ++i)
        c.std_input[i] = (input[i] - m.input_center[i]) / m.input_half[i];
    c.pre.resize(m.n_layers());
    c.post.resize(m.n_layers());
    const Vec* a = &c.std_input;
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        std::size_t n_out = m.layer_dims[l + 1];
        c.pre[l].resize(n_out);
        c.post[l].resize(n_out);
        for (std::size_t j = 0; j < n_out; ++j) {
            double z = dot(m.weights[l].row(j), a->data(), a->size()) + m.biases[l][j];
            c.pre[l][j] = z;
            c.post[l][j] = (l + 1 < m.n_layers()) ? activate(m.activation, z) : z;
        }
        a = &c.post[l];
    }
}

inline Vec forward(const MlpModel& m, const Vec& input) {
    ForwardCache c;
    forward_cached(m, input, c);
    Vec out(m.output_dim());
    const Vec& raw = c.post.back();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = raw[j] * m.output_scale[j] + m.output_offset[j];
    return out;
}

// d(cotangent . forward)/d(input), reverse mode through the cached pass.
inline Vec grad_input_cached(const MlpModel& m, const ForwardCache& c, const Vec& cotangent) {
    if (cotangent.size() != m.output_dim())
        throw DimensionError("grad_input: cotangent length " + std::to_string(cotangent.size()) + " != " +
                             std::to_string(m.output_dim()));
    Vec g(m.output_dim());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = cotangent[j] * m.output_scale[j];
    Vec g_prev;
    for (std::size_t l = m.n_layers(); l-- > 0;) {
        // g holds d/d(pre-activation) of layer l at this point for the output
        // layer; hidden layers need the activation derivative first.
        if (l + 1 < m.n_layers())
            for (std::size_t j = 0; j < g.size(); ++j) g[j] *= activate_deriv(m.activation, c.pre[l][j]);
        g_prev.assign(m.layer_dims[l], 0.0);
        for (std::size_t j = 0; j < g.size(); ++j)
            axpy(g[j], m.weights[l].row(j), g_prev.data(), g_prev.size());
        g = std::move(g_prev);
    }
    for (std::size_t i = 0; i < g.size(); ++i) g[i] /= m.input_half[i];
    return g;
}

inline Vec grad_input(const MlpModel& m, const Vec& input, const Vec& cotangent) {
    ForwardCache c;
    forward_cached(m, input, c);
    return grad_input_cached(m, c, cotangent);
}

// ---------------------------------------------------------------------------
// Training

struct ParamGrads {
    std::vector<Mat> w;
    std::vector<Vec> b;

    static ParamGrads like(const MlpModel& m) {
        ParamGrads g;
        for (std::size_t l = 0; l < m.n_layers(); ++l) {
            g.w.emplace_back(m.weights[l].rows, m.weights[l].cols, 0.0);
            g.b.emplace_back(m.biases[l].size(), 0.0);
        }
        return g;
    }
    void zero() {
        for (auto& m : w) m.fill(0.0);
        for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
    }
};

namespace detail {
inline void check_grad_shapes(const MlpModel& m, const ParamGrads& g) {
    if (g.w.size() != m.n_layers() || g.b.size() != m.n_layers())
        throw DimensionError("gradient layer count mismatch");
    for (std::size_t l = 0; l < m.n_layers(); ++l)
        if (g.w[l].rows != m.weights[l].rows || g.w[l].cols != m.weights[l].cols ||
            g.b[l].size() != m.biases[l].size())
            throw DimensionError("gradient shape mismatch at layer " + std::to_string(l));
}
}  // namespace detail

// Scratch space reused across minibatches.
struct BatchWorkspace {
    Mat a0;                    // standardized inputs, B x n_in
    std::vector<Mat> pre;      // B x dims[l+1]
    std::vector<Mat> post;     // B x dims[l+1]
    Mat delta;                 // gradient w.r.t. current pre-activations
    Mat delta_prev;
};

namespace detail {

// Forward + backward over one contiguous shard of the batch, accumulating
// into `out`. `inv` is 1/(full_batch * n_out) so shards normalize against
// the whole batch. Returns the shard's (already inv-scaled) data loss. No L2.
inline double backprop_shard(const MlpModel& m, const Mat& inputs, const Mat& targets,
                             const std::size_t* idx, std::size_t batch, double inv,
                             ParamGrads& out, BatchWorkspace& ws) {
    const std::size_t L = m.n_layers();
    ws.a0 = Mat(batch, m.input_dim());
    for (std::size_t i = 0; i < batch; ++i) {
        const double* src = inputs.row(idx[i]);
        double* dst = ws.a0.row(i);
        for (std::size_t j = 0; j < inputs.cols; ++j)
            dst[j] = (src[j] - m.input_center[j]) / m.input_half[j];
    }

    ws.pre.resize(L);
    ws.post.resize(L);
    const Mat* a = &ws.a0;
    for (std::size_t l = 0; l < L; ++l) {
        std::size_t n_out = m.layer_dims[l + 1];
        ws.pre[l] = Mat(batch, n_out);
        ws.post[l] = Mat(batch, n_out);
        for (std::size_t i = 0; i < batch; ++i) {
            const double* ai = a->row(i);
            double* zi = ws.pre[l].row(i);
            double* pi = ws.post[l].row(i);
            for (std::size_t j = 0; j < n_out; ++j) {
                double z = dot(m.weights[l].row(j), ai, a->cols) + m.biases[l][j];
                zi[j] = z;
                pi[j] = (l + 1 < L) ? activate(m.activation, z) : z;
            }
        }
        a = &ws.post[l];
    }

    // Loss and output-side gradient, both in model-output space.
    const std::size_t n_out = m.output_dim();
    double loss = 0.0;
    ws.delta = Mat(batch, n_out);
    for (std::size_t i = 0; i < batch; ++i) {
        const double* raw = ws.post[L - 1].row(i);
        const double* t = targets.row(idx[i]);
        double* d = ws.delta.row(i);
        for (std::size_t j = 0; j < n_out; ++j) {
            double pred = raw[j] * m.output_scale[j] + m.output_offset[j];
            double r = pred - t[j];
            loss += std::abs(r);
            double s = (r > 0.0) ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
            d[j] = s * inv * m.output_scale[j];  // d loss / d raw output
        }
    }
    loss *= inv;

    for (std::size_t l = L; l-- > 0;) {
        const Mat& act_in = (l == 0) ? ws.a0 : ws.post[l - 1];
        Mat& dz = ws.delta;
        // accumulate parameter gradients
        for (std::size_t i = 0; i < batch; ++i) {
            const double* di = dz.row(i);
            const double* ai = act_in.row(i);
            for (std::size_t j = 0; j < m.layer_dims[l + 1]; ++j) {
                if (di[j] != 0.0) axpy(di[j], ai, out.w[l].row(j), act_in.cols);
                out.b[l][j] += di[j];
            }
        }
        if (l == 0) break;
        // gradient w.r.t. previous layer's activations, then pre-activations
        ws.delta_prev = Mat(batch, m.layer_dims[l], 0.0);
        for (std::size_t i = 0; i < batch; ++i) {
            const double* di = dz.row(i);
            double* dp = ws.delta_prev.row(i);
            for (std::size_t j = 0; j < m.layer_dims[l + 1]; ++j)
                if (di[j] != 0.0) axpy(di[j], m.weights[l].row(j), dp, m.layer_dims[l]);
            const double* zi = ws.pre[l - 1].row(i);
            for (std::size_t k = 0; k < m.layer_dims[l]; ++k) dp[k] *= activate_deriv(m.activation, zi[k]);
        }
        std::swap(ws.delta, ws.delta_prev);
    }
    return loss;
}

inline double add_l2(const MlpModel& m, double l2, ParamGrads& out) {
    double wsum = 0.0;
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        const Vec& wd = m.weights[l].data;
        Vec& gd = out.w[l].data;
        for (std::size_t k = 0; k < wd.size(); ++k) {
            wsum += wd[k] * wd[k];
            gd[k] += 2.0 * l2 * wd[k];
        }
    }
    return l2 * wsum;
}

}  // namespace detail

// MAE loss over the batch plus l2 * sum(weights^2); gradients are exact
// subgradients with sign(0) = 0. Rows of (inputs, targets) are selected by
// idx; accumulation order is fixed by the index order, so training is
// deterministic.
inline double grad_params_batch(const MlpModel& m, const Mat& inputs, const Mat& targets,
                                const std::size_t* idx, std::size_t batch, double l2,
                                ParamGrads& out, BatchWorkspace& ws) {
    if (batch == 0) throw NumericError("grad_params: empty batch");
    if (inputs.cols != m.input_dim() || targets.cols != m.output_dim())
        throw DimensionError("grad_params: dataset width does not match model");
    if (inputs.rows != targets.rows) throw DimensionError("grad_params: inputs/targets row mismatch");
    detail::check_grad_shapes(m, out);
    const double inv = 1.0 / (static_cast<double>(batch) * static_cast<double>(m.output_dim()));
    double loss = detail::backprop_shard(m, inputs, targets, idx, batch, inv, out, ws);
    if (l2 > 0.0) loss += detail::add_l2(m, l2, out);
    return loss;
}

inline std::pair<double, ParamGrads> grad_params(const MlpModel& m, const Mat& inputs, const Mat& targets,
                                                 double l2) {
    if (inputs.rows == 0) throw NumericError("grad_params: empty batch");
    std::vector<std::size_t> idx(inputs.rows);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    ParamGrads g = ParamGrads::like(m);
    BatchWorkspace ws;
    double loss = grad_params_batch(m, inputs, targets, idx.data(), idx.size(), l2, g, ws);
    return {loss, std::move(g)};
}

// Per-thread shard buffers for data-parallel batches. Shard boundaries are a
// pure function of (batch, n_threads) and partial gradients are reduced in
// shard order, so a config pins the result bit for bit regardless of thread
// scheduling.
struct ShardedBackprop {
    std::vector<ParamGrads> partials;
    std::vector<BatchWorkspace> workspaces;
    std::vector<double> losses;

    explicit ShardedBackprop(const MlpModel& m, std::size_t n_threads) {
        for (std::size_t t = 0; t < n_threads; ++t) {
            partials.push_back(ParamGrads::like(m));
            workspaces.emplace_back();
            losses.push_back(0.0);
        }
    }

    double run(const MlpModel& m, const Mat& inputs, const Mat& targets, const std::size_t* idx,
               std::size_t batch, double l2, ParamGrads& out) {
        const std::size_t n_threads = std::min(partials.size(), batch);
        const double inv = 1.0 / (static_cast<double>(batch) * static_cast<double>(m.output_dim()));
        std::vector<std::thread> threads;
        std::size_t base = batch / n_threads, extra = batch % n_threads, lo = 0;
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (std::size_t t = 0; t < n_threads; ++t) {
            std::size_t count = base + (t < extra ? 1 : 0);
            spans.emplace_back(lo, count);
            lo += count;
        }
        for (std::size_t t = 0; t < n_threads; ++t) {
            partials[t].zero();
            threads.emplace_back([&, t] {
                losses[t] = detail::backprop_shard(m, inputs, targets, idx + spans[t].first,
                                                   spans[t].second, inv, partials[t], workspaces[t]);
            });
        }
        for (auto& th : threads) th.join();
        double loss = 0.0;
        for (std::size_t t = 0; t < n_threads; ++t) {  // fixed reduction order
            loss += losses[t];
            for (std::size_t l = 0; l < m.n_layers(); ++l) {
                axpy(1.0, partials[t].w[l].data, out.w[l].data);
                axpy(1.0, partials[t].b[l], out.b[l]);
            }
        }
        if (l2 > 0.0) loss += detail::add_l2(m, l2, out);
        return loss;
    }
};

struct AdamState {
    std::size_t step = 0;
    ParamGrads first_moment, second_moment;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double l2_weight = 1e-6;

    static AdamState for_model(const MlpModel& m, double lr = 1e-4, double l2 = 1e-6) {
        AdamState s;
        s.first_moment = ParamGrads::like(m);
        s.second_moment = ParamGrads::like(m);
        s.learning_rate = lr;
        s.l2_weight = l2;
        return s;
    }
};

namespace detail {
inline void adam_update_span(double* param, double* mo, double* vo, const double* g, std::size_t n,
                             double lr, double b1, double b2, double eps, double c1, double c2) {
    for (std::size_t k = 0; k < n; ++k) {
        mo[k] = b1 * mo[k] + (1.0 - b1) * g[k];
        vo[k] = b2 * vo[k] + (1.0 - b2) * g[k] * g[k];
        double mhat = mo[k] / c1;
        double vhat = vo[k] / c2;
        param[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}
}  // namespace detail

// One bias-corrected Adam update.
inline void adam_step(AdamState& s, MlpModel& m, const ParamGrads& g) {
    detail::check_grad_shapes(m, g);
    detail::check_grad_shapes(m, s.first_moment);
    s.step += 1;
    double t = static_cast<double>(s.step);
    double c1 = 1.0 - std::pow(s.beta1, t);
    double c2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
        detail::adam_update_span(m.weights[l].data.data(), s.first_moment.w[l].data.data(),
                                 s.second_moment.w[l].data.data(), g.w[l].data.data(),
                                 m.weights[l].data.size(), s.learning_rate, s.beta1, s.beta2, s.epsilon, c1, c2);
        detail::adam_update_span(m.biases[l].data(), s.first_moment.b[l].data(),
                                 s.second_moment.b[l].data(), g.b[l].data(), m.biases[l].size(),
                                 s.learning_rate, s.beta1, s.beta2, s.epsilon, c1, c2);
    }
}

// ReduceLROnPlateau: after `patience` consecutive non-improving observations
// the rate is multiplied by `factor` (clamped at min_lr) and the counter
// resets.
struct PlateauScheduler {
    double lr;
    std::size_t patience;
    double factor;
    double min_lr;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bad = 0;

    PlateauScheduler(double lr0, std::size_t patience_, double factor_, double min_lr_)
        : lr(lr0), patience(patience_), factor(factor_), min_lr(min_lr_) {
        if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("plateau factor must be in (0,1)");
    }

    double update(double observed_loss) {
        if (observed_loss < best) {
            best = observed_loss;
            bad = 0;
        } else if (++bad >= patience) {
            lr = std::max(lr * factor, min_lr);
            bad = 0;
        }
        return lr;
    }
};

struct TrainConfig {
    std::vector<std::size_t> hidden_dims{256, 256};
    std::size_t batch_size = 128;
    std::size_t max_epochs = 200;
    std::size_t patience_early_stop = 20;
    std::size_t plateau_patience = 10;
    double plateau_factor = 0.5;
    double min_lr = 1e-7;
    double learning_rate = 1e-4;
    double l2_weight = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t rng_seed = 0;
    // batch-level data parallelism; part of the reproducibility key, since
    // the shard reduction order depends on it
    std::size_t n_threads = 1;
    bool verbose = false;
};

struct EpochRecord {
    double train_loss;
    double test_loss;
    double learning_rate;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_test_loss = std::numeric_limits<double>::infinity();
};

struct TrainResult {
    MlpModel model;
    TrainHistory history;
};

namespace detail {

inline double test_mae(const MlpModel& m, const Mat& inputs, const Mat& targets,
                       const std::vector<std::size_t>& idx) {
    ForwardCache c;
    Vec x(m.input_dim());
    double loss = 0.0;
    for (std::size_t i : idx) {
        x.assign(inputs.row(i), inputs.row(i) + inputs.cols);
        forward_cached(m, x, c);
        const Vec& raw = c.post.back();
        const double* t = targets.row(i);
        for (std::size_t j = 0; j < m.output_dim(); ++j)
            loss += std::abs(raw[j] * m.output_scale[j] + m.output_offset[j] - t[j]);
    }
    return loss / (static_cast<double>(idx.size()) * static_cast<double>(m.output_dim()));
}

}  // namespace detail

// Minibatch Adam on MAE with early stopping on the test split. Returns the
// snapshot with the lowest test loss. Everything is keyed off config.rng_seed.
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
    if (cfg.batch_size == 0 || cfg.max_epochs == 0) throw ConfigError("batch_size and max_epochs must be positive");
    if (!(cfg.plateau_factor > 0.0 && cfg.plateau_factor < 1.0))
        throw ConfigError("plateau_factor must be strictly between 0 and 1");
    if (ds.size() == 0) throw NumericError("train: empty dataset");

    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        (ds.split[i] == static_cast<std::uint8_t>(Split::train) ? train_idx : test_idx).push_back(i);
    if (train_idx.empty() || test_idx.empty())
        throw NumericError("train: dataset must contain both train and test rows");

    std::vector<std::size_t> dims;
    dims.push_back(ds.inputs.cols);
    for (auto h : cfg.hidden_dims) dims.push_back(h);
    dims.push_back(ds.targets.cols);
    MlpModel model = make_mlp(dims, Activation::selu);

    // Input standardization over the training-domain box; fall back to the
    // observed range when the sidecar box is absent.
    Vec lo = ds.meta.box_lower, hi = ds.meta.box_upper;
    if (lo.size() != ds.inputs.cols || hi.size() != ds.inputs.cols) {
        lo.assign(ds.inputs.cols, std::numeric_limits<double>::infinity());
        hi.assign(ds.inputs.cols, -std::numeric_limits<double>::infinity());
        for (std::size_t i : train_idx)
            for (std::size_t j = 0; j < ds.inputs.cols; ++j) {
                lo[j] = std::min(lo[j], ds.inputs(i, j));
                hi[j] = std::max(hi[j], ds.inputs(i, j));
            }
    }
    for (std::size_t j = 0; j < ds.inputs.cols; ++j) {
        model.input_center[j] = 0.5 * (lo[j] + hi[j]);
        double half = 0.5 * (hi[j] - lo[j]);
        model.input_half[j] = half > 0.0 ? half : 1.0;
    }
    // Center targets per output bin (scale stays 1, so the loss is still the
    // plain MAE in target space).
    for (std::size_t j = 0; j < ds.targets.cols; ++j) {
        double s = 0.0;
        for (std::size_t i : train_idx) s += ds.targets(i, j);
        model.output_offset[j] = s / static_cast<double>(train_idx.size());
        model.output_scale[j] = 1.0;
    }

    Rng rng(cfg.rng_seed);
    init_lecun(model, rng);

    AdamState adam = AdamState::for_model(model, cfg.learning_rate, cfg.l2_weight);
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.epsilon = cfg.adam_epsilon;
    PlateauScheduler sched(cfg.learning_rate, cfg.plateau_patience, cfg.plateau_factor, cfg.min_lr);

    TrainHistory hist;
    MlpModel best = model;
    std::size_t epochs_without_improvement = 0;
    ParamGrads grads = ParamGrads::like(model);
    BatchWorkspace ws;
    const std::size_t n_threads = std::max<std::size_t>(1, cfg.n_threads);
    ShardedBackprop sharded(model, n_threads);
    std::vector<std::size_t> order = train_idx;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double train_loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t b = std::min(cfg.batch_size, order.size() - start);
            grads.zero();
            double loss = n_threads > 1
                              ? sharded.run(model, ds.inputs, ds.targets, order.data() + start, b,
                                            adam.l2_weight, grads)
                              : grad_params_batch(model, ds.inputs, ds.targets, order.data() + start, b,
                                                  adam.l2_weight, grads, ws);
            if (!std::isfinite(loss))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            adam.learning_rate = sched.lr;
            adam_step(adam, model, grads);
            train_loss_sum += loss;
            ++n_batches;
        }
        double train_loss = train_loss_sum / static_cast<double>(n_batches);
        double test_loss = detail::test_mae(model, ds.inputs, ds.targets, test_idx);
        if (!std::isfinite(test_loss))
            throw NumericError("train: non-finite test loss at epoch " + std::to_string(epoch));
        hist.epochs.push_back({train_loss, test_loss, sched.lr});
        sched.update(test_loss);

        if (test_loss < hist.best_test_loss) {
            hist.best_test_loss = test_loss;
            hist.best_epoch = epoch;
            best = model;
            epochs_without_improvement = 0;
        } else if (++epochs_without_improvement >= cfg.patience_early_stop) {
            break;
        }
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %zu  train %.6g  test %.6g  lr %.3g\n", epoch, train_loss,
                         test_loss, sched.lr);
    }
    validate_model(best);
    return {std::move(best), std::move(hist)};
}

// ---------------------------------------------------------------------------
// Surrogate contract: the network predicts log10(flux); callers de-log to get
// linear flux. The exponent is clamped so far extrapolations stay finite.

inline constexpr double kDelogClamp = 60.0;

inline double delog10(double y) {
    return std::pow(10.0, std::clamp(y, -kDelogClamp, kDelogClamp));
}

// d(delog10)/dy; zero in the clamped region.
inline double delog10_deriv(double y, double value) {
    return (y > -kDelogClamp && y < kDelogClamp) ? kLn10 * value : 0.0;
}

inline Vec predict_linear_flux(const MlpModel& m, const Vec& input) {
    Vec y = forward(m, input);
    for (double& v : y) v = delog10(v);
    return y;
}

// Mean per-bin relative error of de-logged predictions on one split.
inline Vec per_bin_relative_error(const MlpModel& m, const Dataset& ds, Split split = Split::test) {
    if (!ds.meta.targets_log10) throw NumericError("per_bin_relative_error expects log10 targets");
    Vec err(ds.targets.cols, 0.0);
    std::size_t n = 0;
    Vec x(ds.inputs.cols);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] != static_cast<std::uint8_t>(split)) continue;
        x.assign(ds.inputs.row(i), ds.inputs.row(i) + ds.inputs.cols);
        Vec pred = forward(m, x);
        for (std::size_t j = 0; j < err.size(); ++j) {
            double truth = delog10(ds.targets(i, j));
            err[j] += std::abs(delog10(pred[j]) - truth) / truth;
        }
        ++n;
    }
    if (n == 0) throw NumericError("per_bin_relative_error: split has no rows");
    for (double& e : err) e /= static_cast<double>(n);
    return err;
}

}  // namespace heliomc
