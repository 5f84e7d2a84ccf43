#pragma once

#include <array>
#include <cmath>
#include <string>

#include "heliomc/common.hpp"
#include "heliomc/forward_model.hpp"
#include "heliomc/mlp.hpp"

namespace heliomc {

inline constexpr std::size_t kNumSampled = 5;
// Positions of the sampled parameters inside the surrogate's 8-vector input.
inline constexpr std::size_t kSampledOffset = 3;

// The five free parameters: DC normalization plus the four rigidity slopes.
struct SampledParams {
    double k0_par = 2.0;
    double a_par = 0.8;
    double b_par = 1.0;
    double a_perp = 0.8;
    double b_perp = 1.0;

    std::array<double, kNumSampled> to_array() const { return {k0_par, a_par, b_par, a_perp, b_perp}; }
    static SampledParams from_array(const std::array<double, kNumSampled>& a) {
        return {a[0], a[1], a[2], a[3], a[4]};
    }
    static SampledParams from_vec(const Vec& v) {
        if (v.size() != kNumSampled) throw DimensionError("SampledParams needs 5 values");
        return {v[0], v[1], v[2], v[3], v[4]};
    }
    Vec to_vec() const { return {k0_par, a_par, b_par, a_perp, b_perp}; }
    static const std::array<std::string, kNumSampled>& names() {
        static const std::array<std::string, kNumSampled> n = {"k0_par", "a_par", "b_par", "a_perp", "b_perp"};
        return n;
    }
};

// Everything held fixed during inference: the three heliospheric drivers and
// the observed spectrum (sigma required).
struct FixedContext {
    double alpha = 30.0;
    double i_hmf = 5.0;
    double v_sw = 450.0;
    FluxSpectrum observed;
};

inline void validate_context(const FixedContext& ctx) {
    if (!ctx.observed.sigma) throw NumericError("observed spectrum has no per-bin sigma");
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        if (!((*ctx.observed.sigma)[i] > 0.0)) throw NumericError("observed sigma must be strictly positive");
        if (!(ctx.observed.flux[i] > 0.0)) throw NumericError("observed flux must be strictly positive");
    }
}

// Plateau prior over the training box with a one-sided quadratic decay in
// every direction outside; C1 everywhere.
struct PriorBox {
    std::array<double, kNumSampled> lower{};
    std::array<double, kNumSampled> upper{};
    double plateau_log_value = std::log(1e6);
    std::array<double, kNumSampled> decay_scale{};

    // Restrict a training-domain box to the sampled dims; decay scales
    // default to decay_frac of each box width.
    static PriorBox from_domain_box(const DomainBox& box, double decay_frac = 0.02) {
        PriorBox p;
        for (std::size_t i = 0; i < kNumSampled; ++i) {
            p.lower[i] = box.lower[kSampledOffset + i];
            p.upper[i] = box.upper[kSampledOffset + i];
            p.decay_scale[i] = decay_frac * (p.upper[i] - p.lower[i]);
        }
        p.validate();
        return p;
    }

    // Recover the training box from the standardization constants stored in a
    // trained surrogate.
    static PriorBox from_model(const MlpModel& m, double decay_frac = 0.02) {
        if (m.input_dim() != kNumInputs) throw DimensionError("surrogate must have 8 inputs");
        PriorBox p;
        for (std::size_t i = 0; i < kNumSampled; ++i) {
            double c = m.input_center[kSampledOffset + i];
            double h = m.input_half[kSampledOffset + i];
            p.lower[i] = c - h;
            p.upper[i] = c + h;
            p.decay_scale[i] = decay_frac * 2.0 * h;
        }
        p.validate();
        return p;
    }

    void validate() const {
        for (std::size_t i = 0; i < kNumSampled; ++i) {
            if (!(lower[i] < upper[i])) throw ConfigError("prior box must have lower < upper");
            if (!(decay_scale[i] > 0.0)) throw ConfigError("prior decay scale must be positive");
        }
    }

    std::array<double, kNumSampled> center() const {
        std::array<double, kNumSampled> c;
        for (std::size_t i = 0; i < kNumSampled; ++i) c[i] = 0.5 * (lower[i] + upper[i]);
        return c;
    }
};

// The 8-vector in the surrogate's input order.
inline Vec embed(const SampledParams& z, const FixedContext& ctx) {
    return {ctx.alpha, ctx.i_hmf, ctx.v_sw, z.k0_par, z.a_par, z.b_par, z.a_perp, z.b_perp};
}

inline double chi_squared(const FluxSpectrum& obs, const Vec& pred) {
    if (!obs.sigma) throw NumericError("chi_squared: observed spectrum has no sigma");
    if (pred.size() != kNumRigidityBins) throw DimensionError("chi_squared: prediction must have 32 bins");
    double acc = 0.0;
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        if (!std::isfinite(pred[i])) throw NumericError("chi_squared: non-finite prediction");
        double t = (obs.flux[i] - pred[i]) / (*obs.sigma)[i];
        acc += t * t;
    }
    return acc;
}

inline double log_likelihood(const SampledParams& z, const FixedContext& ctx, const MlpModel& model) {
    if (model.input_dim() != kNumInputs || model.output_dim() != kNumRigidityBins)
        throw DimensionError("surrogate must map 8 inputs to 32 outputs");
    Vec pred = forward(model, embed(z, ctx));
    for (double& v : pred) v = delog10(v);
    return -0.5 * chi_squared(ctx.observed, pred);
}

inline double log_prior(const SampledParams& z, const PriorBox& box) {
    auto a = z.to_array();
    double penalty = 0.0;
    for (std::size_t i = 0; i < kNumSampled; ++i) {
        double d = std::max({box.lower[i] - a[i], 0.0, a[i] - box.upper[i]});
        double t = d / box.decay_scale[i];
        penalty += t * t;
    }
    return box.plateau_log_value - penalty;
}

inline Vec log_prior_grad(const SampledParams& z, const PriorBox& box) {
    auto a = z.to_array();
    Vec g(kNumSampled, 0.0);
    for (std::size_t i = 0; i < kNumSampled; ++i) {
        double s2 = box.decay_scale[i] * box.decay_scale[i];
        if (a[i] > box.upper[i])
            g[i] = -2.0 * (a[i] - box.upper[i]) / s2;
        else if (a[i] < box.lower[i])
            g[i] = 2.0 * (box.lower[i] - a[i]) / s2;
    }
    return g;
}

struct PosteriorEval {
    double log_posterior = 0.0;
    double log_likelihood = 0.0;
    double log_prior = 0.0;
    Vec grad;  // d log_posterior / dz, length 5
};

// Differentiable surrogate log-posterior over the five sampled parameters.
struct SurrogatePosterior {
    const MlpModel* model = nullptr;
    FixedContext ctx;
    PriorBox prior;

    SurrogatePosterior(const MlpModel& m, FixedContext c, PriorBox p)
        : model(&m), ctx(std::move(c)), prior(p) {
        if (m.input_dim() != kNumInputs || m.output_dim() != kNumRigidityBins)
            throw DimensionError("surrogate must map 8 inputs to 32 outputs");
        validate_context(ctx);
    }

    double eval(const SampledParams& z) const { return log_likelihood(z, ctx, *model) + log_prior(z, prior); }

    PosteriorEval eval_with_grad(const SampledParams& z) const {
        ForwardCache cache;
        forward_cached(*model, embed(z, ctx), cache);
        const Vec& raw = cache.post.back();
        Vec pred(kNumRigidityBins), cot(kNumRigidityBins);
        const auto& sigma = *ctx.observed.sigma;
        double chi2 = 0.0;
        for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
            double y = raw[i] * model->output_scale[i] + model->output_offset[i];
            pred[i] = delog10(y);
            double t = (ctx.observed.flux[i] - pred[i]) / sigma[i];
            chi2 += t * t;
            // d(-chi2/2)/d pred = (obs - pred)/sigma^2, chained through delog.
            cot[i] = (ctx.observed.flux[i] - pred[i]) / (sigma[i] * sigma[i]) * delog10_deriv(y, pred[i]);
        }
        Vec g8 = grad_input_cached(*model, cache, cot);
        PosteriorEval out;
        out.log_likelihood = -0.5 * chi2;
        out.log_prior = log_prior(z, prior);
        out.log_posterior = out.log_likelihood + out.log_prior;
        out.grad.assign(g8.begin() + kSampledOffset, g8.begin() + kSampledOffset + kNumSampled);
        Vec pg = log_prior_grad(z, prior);
        for (std::size_t i = 0; i < kNumSampled; ++i) out.grad[i] += pg[i];
        return out;
    }
};

// Affine map between raw sampled parameters and the box-standardized
// coordinates the NN was trained in: u = (z - center) / half.
struct BoxStandardizer {
    std::array<double, kNumSampled> center{};
    std::array<double, kNumSampled> half{};

    static BoxStandardizer from_model(const MlpModel& m) {
        if (m.input_dim() != kNumInputs) throw DimensionError("surrogate must have 8 inputs");
        BoxStandardizer s;
        for (std::size_t i = 0; i < kNumSampled; ++i) {
            s.center[i] = m.input_center[kSampledOffset + i];
            s.half[i] = m.input_half[kSampledOffset + i];
            if (!(s.half[i] > 0.0)) throw NumericError("standardizer half-width must be positive");
        }
        return s;
    }

    static BoxStandardizer from_prior(const PriorBox& p) {
        BoxStandardizer s;
        for (std::size_t i = 0; i < kNumSampled; ++i) {
            s.center[i] = 0.5 * (p.lower[i] + p.upper[i]);
            s.half[i] = 0.5 * (p.upper[i] - p.lower[i]);
        }
        return s;
    }

    Vec to_unit(const Vec& z) const {
        if (z.size() != kNumSampled) throw DimensionError("standardizer expects 5 values");
        Vec u(kNumSampled);
        for (std::size_t i = 0; i < kNumSampled; ++i) u[i] = (z[i] - center[i]) / half[i];
        return u;
    }
    Vec from_unit(const Vec& u) const {
        if (u.size() != kNumSampled) throw DimensionError("standardizer expects 5 values");
        Vec z(kNumSampled);
        for (std::size_t i = 0; i < kNumSampled; ++i) z[i] = center[i] + half[i] * u[i];
        return z;
    }
};

}  // namespace heliomc
