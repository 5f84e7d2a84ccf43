#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "heliomc/common.hpp"
#include "heliomc/diagnostics.hpp"
#include "heliomc/forward_model.hpp"
#include "heliomc/mlp.hpp"
#include "heliomc/posterior.hpp"
#include "heliomc/rng.hpp"
#include "heliomc/samplers.hpp"

namespace heliomc {
namespace selftest {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline double central_diff(const std::function<double(const Vec&)>& f, Vec x, std::size_t i, double h) {
    double x0 = x[i];
    x[i] = x0 + h;
    double fp = f(x);
    x[i] = x0 - h;
    double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

inline Target gaussian_target(Vec sigmas) {
    auto sig = std::make_shared<Vec>(std::move(sigmas));
    Target t;
    t.value = [sig](const Vec& q) {
        double v = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) v -= 0.5 * q[i] * q[i] / ((*sig)[i] * (*sig)[i]);
        return v;
    };
    t.value_grad = [sig](const Vec& q) {
        TargetEval e;
        e.grad.resize(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
            double s2 = (*sig)[i] * (*sig)[i];
            e.value -= 0.5 * q[i] * q[i] / s2;
            e.grad[i] = -q[i] / s2;
        }
        return e;
    };
    return t;
}

inline std::string fmt(const char* format, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), format, a, b);
    return buf;
}

}  // namespace detail

inline CheckResult check_selu() {
    bool ok = selu(0.0) == 0.0;
    ok = ok && std::abs(selu(1.0) - kSeluLambda) < 1e-15;
    // continuity across the kink
    for (double eps : {1e-6, 1e-9, 1e-12}) ok = ok && std::abs(selu(eps) - selu(-eps)) < 10.0 * eps;
    // strict monotonicity on a grid
    double prev = selu(-10.0);
    for (double x = -9.9; x < 10.0; x += 0.1) {
        double cur = selu(x);
        ok = ok && cur > prev;
        prev = cur;
    }
    return {"selu continuity and monotonicity", ok, ""};
}

// grad_input and grad_params vs central finite differences on a random
// [8,16,16,32] model, skipping components near the SELU kink.
inline CheckResult check_mlp_gradients() {
    Rng rng(42);
    MlpModel m = make_mlp({8, 16, 16, 32});
    init_lecun(m, rng);
    double max_rel = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        Vec x = rng.normal_vec(8);
        Vec cot = rng.normal_vec(32);
        Vec g = grad_input(m, x, cot);
        auto f = [&](const Vec& xx) { return heliomc::dot(cot.data(), forward(m, xx).data(), cot.size()); };
        for (std::size_t i = 0; i < 8; ++i) {
            double fd = detail::central_diff(f, x, i, 1e-5);
            double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-8});
            max_rel = std::max(max_rel, std::abs(g[i] - fd) / scale);
        }
    }
    // parameter gradients on a small batch
    Mat X(6, 8), Y(6, 32);
    Rng rng2(43);
    for (double& v : X.data) v = rng2.normal();
    for (double& v : Y.data) v = rng2.normal();
    auto [loss0, grads] = grad_params(m, X, Y, 1e-6);
    (void)loss0;
    Rng pick(44);
    for (int k = 0; k < 40; ++k) {
        std::size_t l = pick.bounded(m.n_layers());
        std::size_t idx = pick.bounded(m.weights[l].data.size());
        double orig = m.weights[l].data[idx];
        double h = 1e-5;
        m.weights[l].data[idx] = orig + h;
        double fp = grad_params(m, X, Y, 1e-6).first;
        m.weights[l].data[idx] = orig - h;
        double fm = grad_params(m, X, Y, 1e-6).first;
        m.weights[l].data[idx] = orig;
        double fd = (fp - fm) / (2.0 * h);
        double an = grads.w[l].data[idx];
        double scale = std::max({std::abs(fd), std::abs(an), 1e-8});
        max_rel = std::max(max_rel, std::abs(an - fd) / scale);
    }
    bool ok = max_rel < 1e-4;
    return {"mlp gradients vs finite differences", ok, detail::fmt("max rel err %.3g", max_rel)};
}

// log-posterior gradient vs finite differences on a random small surrogate.
inline CheckResult check_posterior_gradient() {
    Rng rng(7);
    MlpModel m = make_mlp({8, 16, 32});
    init_lecun(m, rng);
    for (double& w : m.weights[1].data) w *= 0.2;  // keep predictions moderate
    FixedContext ctx;
    ctx.observed.sigma.emplace();
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        ctx.observed.flux[i] = 1.0 + 0.1 * rng.uniform();
        (*ctx.observed.sigma)[i] = 0.05 * ctx.observed.flux[i];
    }
    PriorBox box;
    box.lower = {0.5, 0.3, 0.3, 0.3, 0.3};
    box.upper = {5.0, 1.5, 2.0, 1.5, 2.0};
    for (std::size_t i = 0; i < kNumSampled; ++i) box.decay_scale[i] = 0.02 * (box.upper[i] - box.lower[i]);
    SurrogatePosterior post(m, ctx, box);

    auto f = [&](const Vec& z) { return post.eval(SampledParams::from_vec(z)); };
    double max_rel = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Vec z(kNumSampled);
        for (std::size_t i = 0; i < kNumSampled; ++i) z[i] = rng.uniform(box.lower[i], box.upper[i]);
        Vec g = post.eval_with_grad(SampledParams::from_vec(z)).grad;
        for (std::size_t i = 0; i < kNumSampled; ++i) {
            double fd = detail::central_diff(f, z, i, 1e-5);
            double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
            max_rel = std::max(max_rel, std::abs(g[i] - fd) / scale);
        }
    }
    bool ok = max_rel < 1e-3;
    return {"log-posterior gradient vs finite differences", ok, detail::fmt("max rel err %.3g", max_rel)};
}

// leapfrog, momentum flip, leapfrog returns the start; 100 random triples.
inline CheckResult check_leapfrog_reversibility() {
    Rng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t d = 1 + rng.bounded(5);
        Vec sig(d);
        for (double& s : sig) s = rng.uniform(0.4, 2.5);
        Target t = detail::gaussian_target(sig);
        PhaseState s0 = make_phase_state(t, rng.normal_vec(d), rng.normal_vec(d));
        double step = rng.uniform(0.01, 0.25);
        PhaseState s1 = leapfrog(s0, step, t);
        for (double& p : s1.momentum) p = -p;
        PhaseState s2 = leapfrog(s1, step, t);
        for (std::size_t i = 0; i < d; ++i) {
            worst = std::max(worst, std::abs(s2.position[i] - s0.position[i]));
            worst = std::max(worst, std::abs(-s2.momentum[i] - s0.momentum[i]));
        }
    }
    bool ok = worst <= 1e-10;
    return {"leapfrog reversibility", ok, detail::fmt("max |delta| %.3g", worst)};
}

// Max Hamiltonian error over a fixed trajectory length scales as step^2:
// halving the step should shrink it by roughly 4x.
inline CheckResult check_energy_step_scaling() {
    Target t = detail::gaussian_target(Vec(5, 1.0));
    Rng rng(13);
    Vec q0 = rng.normal_vec(5), p0 = rng.normal_vec(5);
    auto max_energy_error = [&](double step, int n_steps) {
        PhaseState s = make_phase_state(t, q0, p0);
        double h0 = hamiltonian(s);
        double worst = 0.0;
        for (int i = 0; i < n_steps; ++i) {
            s = leapfrog(s, step, t);
            worst = std::max(worst, std::abs(hamiltonian(s) - h0));
        }
        return worst;
    };
    double e1 = max_energy_error(0.2, 32);   // trajectory length 6.4
    double e2 = max_energy_error(0.1, 64);
    double ratio = e1 / e2;
    bool ok = ratio >= 3.0 && ratio <= 5.0;
    return {"energy error halving ratio in [3,5]", ok, detail::fmt("ratio %.3f", ratio)};
}

// Short NUTS + RWMH runs on a 2-D Gaussian recover moments.
inline CheckResult check_gaussian_samplers() {
    Vec sig = {1.0, 2.0};
    Target t = detail::gaussian_target(sig);
    std::string detail_msg;
    bool ok = true;
    for (SamplerKind kind : {SamplerKind::nuts, SamplerKind::rwmh}) {
        ChainConfig cfg;
        cfg.sampler = kind;
        cfg.seed = (kind == SamplerKind::nuts) ? 17 : 18;
        if (kind == SamplerKind::nuts) {
            cfg.burn_in = 500;
            cfg.n_samples = 4000;
            cfg.thin = 1;
        } else {
            cfg.burn_in = 2000;
            cfg.n_samples = 30000;
            cfg.thin = 1;
            cfg.rwmh_scale = 1.2;
        }
        Chain chain = run_chain(cfg, t, Vec{0.5, -0.5});
        for (std::size_t j = 0; j < 2; ++j) {
            Vec col(chain.samples.rows);
            for (std::size_t i = 0; i < col.size(); ++i) col[i] = chain.samples(i, j);
            double ess = effective_sample_size(col);
            double mu = mean(col);
            double var = variance(col);
            double se = std::sqrt(var / ess);
            if (std::abs(mu) > 4.0 * se) {
                ok = false;
                detail_msg += sampler_name(kind) + " mean off in dim " + std::to_string(j) + "; ";
            }
            if (std::abs(var - sig[j] * sig[j]) > 0.10 * sig[j] * sig[j]) {
                ok = false;
                detail_msg += sampler_name(kind) + " variance off in dim " + std::to_string(j) + "; ";
            }
        }
    }
    return {"gaussian sampler moment recovery", ok, detail_msg};
}

inline CheckResult check_acf_ess_basics() {
    Rng rng(23);
    Vec iid(4000);
    for (double& v : iid) v = rng.normal();
    AcfSeries acf = autocorrelation(iid, 50);
    bool ok = acf.values[0] == 1.0;
    for (double v : acf.values) ok = ok && std::abs(v) <= 1.0;
    double ess = effective_sample_size(iid);
    ok = ok && ess > 0.0 && ess <= static_cast<double>(iid.size());
    // strongly correlated series must also stay inside (0, N]
    Vec ar(4000);
    ar[0] = rng.normal();
    for (std::size_t i = 1; i < ar.size(); ++i) ar[i] = 0.95 * ar[i - 1] + rng.normal();
    double ess_ar = effective_sample_size(ar);
    ok = ok && ess_ar > 0.0 && ess_ar <= static_cast<double>(ar.size());
    return {"acf(0)=1 and ess in (0,N]", ok, ""};
}

// Multiplying every sigma by a power of two rescales chi-squared exactly.
inline CheckResult check_chi_squared_scaling() {
    Rng rng(29);
    FluxSpectrum obs;
    obs.sigma.emplace();
    Vec pred(kNumRigidityBins);
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        obs.flux[i] = rng.uniform(0.5, 5.0);
        (*obs.sigma)[i] = rng.uniform(0.05, 0.5);
        pred[i] = rng.uniform(0.5, 5.0);
    }
    double base = chi_squared(obs, pred);
    FluxSpectrum scaled = obs;
    for (double& s : *scaled.sigma) s *= 2.0;
    bool ok = chi_squared(scaled, pred) == base / 4.0;
    for (double& s : *scaled.sigma) s *= 2.0;  // now 4x
    ok = ok && chi_squared(scaled, pred) == base / 16.0;
    return {"chi-squared sigma-scaling exact", ok, ""};
}

inline CheckResult check_prior_continuity() {
    PriorBox box;
    box.lower = {0.5, 0.3, 0.3, 0.3, 0.3};
    box.upper = {5.0, 1.5, 2.0, 1.5, 2.0};
    for (std::size_t i = 0; i < kNumSampled; ++i) box.decay_scale[i] = 0.02 * (box.upper[i] - box.lower[i]);
    double worst = 0.0;
    auto c = box.center();
    for (std::size_t i = 0; i < kNumSampled; ++i) {
        for (double face : {box.lower[i], box.upper[i]}) {
            auto z = c;
            z[i] = face;
            double at = log_prior(SampledParams::from_array(z), box);
            double eps = 1e-9 * (box.upper[i] - box.lower[i]);
            z[i] = face + eps;
            double out = log_prior(SampledParams::from_array(z), box);
            z[i] = face - eps;
            double in = log_prior(SampledParams::from_array(z), box);
            worst = std::max({worst, std::abs(at - out), std::abs(at - in)});
        }
    }
    bool ok = worst <= 1e-12;
    return {"prior continuity at box faces", ok, detail::fmt("max gap %.3g", worst)};
}

inline std::vector<CheckResult> run_all_checks() {
    return {
        check_selu(),
        check_mlp_gradients(),
        check_posterior_gradient(),
        check_leapfrog_reversibility(),
        check_energy_step_scaling(),
        check_gaussian_samplers(),
        check_acf_ess_basics(),
        check_chi_squared_scaling(),
        check_prior_continuity(),
    };
}

inline bool run(std::ostream& os) {
    bool all_ok = true;
    for (const CheckResult& r : run_all_checks()) {
        os << (r.passed ? "[ok]   " : "[FAIL] ") << r.name;
        if (!r.detail.empty()) os << "  (" << r.detail << ")";
        os << "\n";
        all_ok = all_ok && r.passed;
    }
    return all_ok;
}

}  // namespace selftest
}  // namespace heliomc
