#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "heliomc/common.hpp"
#include "heliomc/rng.hpp"

namespace heliomc {

struct TargetEval {
    double value = 0.0;
    Vec grad;
};

// Log target density. `value` is enough for RWMH; NUTS needs `value_grad`.
struct Target {
    std::function<double(const Vec&)> value;
    std::function<TargetEval(const Vec&)> value_grad;
};

struct PhaseState {
    Vec position;
    Vec momentum;
    double log_target = 0.0;
    Vec grad;
};

inline bool state_finite(const PhaseState& s) {
    return std::isfinite(s.log_target) && all_finite(s.position) && all_finite(s.momentum) && all_finite(s.grad);
}

inline PhaseState make_phase_state(const Target& t, Vec position, Vec momentum) {
    PhaseState s;
    s.position = std::move(position);
    s.momentum = std::move(momentum);
    TargetEval e = t.value_grad(s.position);
    s.log_target = e.value;
    s.grad = std::move(e.grad);
    return s;
}

// Identity-mass Hamiltonian: -log pi(q) + |p|^2 / 2.
inline double hamiltonian(const PhaseState& s) {
    return -s.log_target + 0.5 * dot(s.momentum.data(), s.momentum.data(), s.momentum.size());
}

// One kick-drift-kick step; the returned state carries a fresh value and
// gradient. Non-finite results are left in place for the caller's divergence
// handling (state_finite).
inline PhaseState leapfrog(const PhaseState& s, double step, const Target& target) {
    if (!(step > 0.0) && !(step < 0.0)) throw NumericError("leapfrog: step must be nonzero");
    PhaseState n;
    n.momentum = s.momentum;
    axpy(0.5 * step, s.grad.data(), n.momentum.data(), n.momentum.size());
    n.position = s.position;
    axpy(step, n.momentum.data(), n.position.data(), n.position.size());
    TargetEval e = target.value_grad(n.position);
    n.log_target = e.value;
    n.grad = std::move(e.grad);
    if (all_finite(n.grad) && n.grad.size() == n.momentum.size())
        axpy(0.5 * step, n.grad.data(), n.momentum.data(), n.momentum.size());
    return n;
}

// Hoffman-Gelman dual averaging for the leapfrog step size.
struct DualAvgState {
    double mu = 0.0;            // shrinkage point, log(10 * initial step)
    double log_step = 0.0;
    double log_step_avg = 0.0;
    double h_avg = 0.0;
    std::size_t iteration = 0;
    double target_accept = 0.8;
    double gamma = 0.05;
    double t0 = 10.0;
    double kappa = 0.75;

    static DualAvgState init(double initial_step, double target_accept = 0.8) {
        if (!(initial_step > 0.0)) throw NumericError("dual averaging needs a positive initial step");
        DualAvgState s;
        s.mu = std::log(10.0 * initial_step);
        s.log_step = std::log(initial_step);
        s.log_step_avg = std::log(initial_step);
        s.target_accept = target_accept;
        return s;
    }

    double step() const { return std::exp(log_step); }
    double adapted_step() const { return std::exp(log_step_avg); }
};

inline DualAvgState dual_avg_update(DualAvgState s, double accept_stat) {
    accept_stat = std::clamp(accept_stat, 0.0, 1.0);
    s.iteration += 1;
    double m = static_cast<double>(s.iteration);
    double w = 1.0 / (m + s.t0);
    s.h_avg = (1.0 - w) * s.h_avg + w * (s.target_accept - accept_stat);
    s.log_step = s.mu - std::sqrt(m) / s.gamma * s.h_avg;
    double eta = std::pow(m, -s.kappa);
    s.log_step_avg = eta * s.log_step + (1.0 - eta) * s.log_step_avg;
    return s;
}

// Step-size search: double or halve until the one-step acceptance crosses 1/2.
inline double find_reasonable_step(const Target& target, const Vec& init, Rng& rng) {
    PhaseState s = make_phase_state(target, init, rng.normal_vec(init.size()));
    if (!std::isfinite(s.log_target)) throw NumericError("step-size search: non-finite log target at init");
    double step = 1.0;
    double h0 = hamiltonian(s);
    auto log_ratio = [&](double eps) {
        PhaseState n = leapfrog(s, eps, target);
        if (!state_finite(n)) return -std::numeric_limits<double>::infinity();
        return h0 - hamiltonian(n);
    };
    double r = log_ratio(step);
    // shrink first if the very first try blew up
    int guard = 0;
    while (!std::isfinite(r) && guard++ < 60) {
        step *= 0.5;
        r = log_ratio(step);
    }
    double dir = (r > std::log(0.5)) ? 1.0 : -1.0;
    guard = 0;
    while (dir * r > -dir * std::log(2.0) && guard++ < 60) {
        step *= std::pow(2.0, dir);
        r = log_ratio(step);
        if (!std::isfinite(r)) r = -std::numeric_limits<double>::infinity();
    }
    if (!(step > 0.0) || !std::isfinite(step)) throw NumericError("step-size search failed");
    return step;
}

inline constexpr double kDivergenceThreshold = 1000.0;  // energy-error units

struct NutsStats {
    double accept_stat = 0.0;
    int depth = 0;
    std::size_t n_leapfrog = 0;
    bool divergent = false;
    double energy = 0.0;
};

namespace detail {

struct NutsPoint {
    Vec q;
    double logp = 0.0;
    Vec grad;
};

struct NutsTree {
    PhaseState leftmost, rightmost;
    NutsPoint proposal;
    double log_sum_w = -std::numeric_limits<double>::infinity();
    double sum_accept = 0.0;
    std::size_t n_leapfrog = 0;
    bool turning = false;
    bool divergent = false;
};

inline bool uturn(const PhaseState& minus, const PhaseState& plus) {
    const std::size_t d = minus.position.size();
    Vec dq(d);
    for (std::size_t i = 0; i < d; ++i) dq[i] = plus.position[i] - minus.position[i];
    return dot(dq.data(), minus.momentum.data(), d) < 0.0 || dot(dq.data(), plus.momentum.data(), d) < 0.0;
}

// Builds a subtree of 2^depth leapfrog states growing from `from` in
// direction dir; multinomial sampling of the proposal within the subtree.
inline NutsTree build_tree(int depth, double dir, const PhaseState& from, double h0, double step,
                           const Target& target, Rng& rng) {
    if (depth == 0) {
        NutsTree t;
        PhaseState s = leapfrog(from, dir * step, target);
        t.n_leapfrog = 1;
        if (!state_finite(s)) {
            t.divergent = true;
            t.leftmost = t.rightmost = from;  // ends unused once divergent
            return t;
        }
        double h = hamiltonian(s);
        double log_w = h0 - h;
        if (log_w < -kDivergenceThreshold) t.divergent = true;
        t.sum_accept = std::min(1.0, std::exp(std::min(0.0, log_w)));
        t.log_sum_w = log_w;
        t.proposal = {s.position, s.log_target, s.grad};
        t.leftmost = t.rightmost = std::move(s);
        return t;
    }
    NutsTree first = build_tree(depth - 1, dir, from, h0, step, target, rng);
    if (first.divergent || first.turning) return first;
    const PhaseState& edge = (dir > 0) ? first.rightmost : first.leftmost;
    NutsTree second = build_tree(depth - 1, dir, edge, h0, step, target, rng);

    NutsTree t;
    t.n_leapfrog = first.n_leapfrog + second.n_leapfrog;
    t.sum_accept = first.sum_accept + second.sum_accept;
    t.divergent = second.divergent;
    t.log_sum_w = logaddexp(first.log_sum_w, second.log_sum_w);
    if (t.divergent) {
        t.proposal = std::move(first.proposal);
        t.leftmost = (dir > 0) ? std::move(first.leftmost) : std::move(second.leftmost);
        t.rightmost = (dir > 0) ? std::move(second.rightmost) : std::move(first.rightmost);
        return t;
    }
    // multinomial pick between the two halves
    double p_second = std::exp(second.log_sum_w - t.log_sum_w);
    t.proposal = (rng.uniform() < p_second) ? std::move(second.proposal) : std::move(first.proposal);
    t.leftmost = (dir > 0) ? std::move(first.leftmost) : std::move(second.leftmost);
    t.rightmost = (dir > 0) ? std::move(second.rightmost) : std::move(first.rightmost);
    t.turning = second.turning || uturn(t.leftmost, t.rightmost);
    return t;
}

}  // namespace detail

// One No-U-Turn transition (multinomial variant, biased progressive sampling
// across doublings). `point` is updated in place.
inline NutsStats nuts_step(detail::NutsPoint& point, double step, const Target& target, Rng& rng,
                           int max_tree_depth) {
    if (!(step > 0.0)) throw NumericError("nuts_step: step must be positive");
    if (!std::isfinite(point.logp)) throw NumericError("nuts_step: non-finite initial log target");
    NutsStats stats;

    PhaseState current;
    current.position = point.q;
    current.momentum = rng.normal_vec(point.q.size());
    current.log_target = point.logp;
    current.grad = point.grad;
    double h0 = hamiltonian(current);
    stats.energy = h0;

    PhaseState leftmost = current, rightmost = current;
    detail::NutsPoint proposal = point;
    double log_sum_w = 0.0;  // weight of the initial point: h0 - h0
    double sum_accept = 0.0;

    for (int depth = 0; depth < max_tree_depth; ++depth) {
        double dir = (rng.uniform() < 0.5) ? 1.0 : -1.0;
        const PhaseState& edge = (dir > 0) ? rightmost : leftmost;
        detail::NutsTree sub = detail::build_tree(depth, dir, edge, h0, step, target, rng);
        stats.n_leapfrog += sub.n_leapfrog;
        sum_accept += sub.sum_accept;
        if (sub.divergent) {
            stats.divergent = true;
            break;
        }
        if (sub.turning) break;
        stats.depth = depth + 1;
        // biased progressive: favor the new subtree
        if (std::log(std::max(rng.uniform(), 1e-300)) < sub.log_sum_w - log_sum_w) proposal = sub.proposal;
        log_sum_w = logaddexp(log_sum_w, sub.log_sum_w);
        if (dir > 0)
            rightmost = std::move(sub.rightmost);
        else
            leftmost = std::move(sub.leftmost);
        if (detail::uturn(leftmost, rightmost)) break;
    }
    stats.accept_stat = stats.n_leapfrog > 0 ? sum_accept / static_cast<double>(stats.n_leapfrog) : 0.0;
    point = std::move(proposal);
    return stats;
}

// Random-walk Metropolis step with isotropic normal proposals; returns
// whether the proposal was accepted. q/logp are updated in place.
inline bool rwmh_step(Vec& q, double& logp, double scale,
                      const std::function<double(const Vec&)>& log_target, Rng& rng) {
    if (!(scale > 0.0)) throw NumericError("rwmh_step: scale must be positive");
    Vec prop = q;
    for (double& x : prop) x += scale * rng.normal();
    double lp = log_target(prop);
    if (!std::isfinite(lp)) return false;
    double delta = lp - logp;
    if (delta >= 0.0 || std::log(std::max(rng.uniform(), 1e-300)) < delta) {
        q = std::move(prop);
        logp = lp;
        return true;
    }
    return false;
}

enum class SamplerKind : std::uint8_t { nuts = 0, rwmh = 1 };

inline std::string sampler_name(SamplerKind k) { return k == SamplerKind::nuts ? "nuts" : "rwmh"; }
inline SamplerKind sampler_from_name(const std::string& s) {
    if (s == "nuts") return SamplerKind::nuts;
    if (s == "rwmh") return SamplerKind::rwmh;
    throw ConfigError("unknown sampler '" + s + "' (expected nuts or rwmh)");
}

struct ChainConfig {
    std::size_t n_samples = 1000;  // stored samples
    std::size_t burn_in = 5000;    // raw steps discarded (NUTS adapts here)
    std::size_t thin = 10;         // store every thin-th raw step
    std::uint64_t seed = 0;
    SamplerKind sampler = SamplerKind::nuts;
    double rwmh_scale = 1e-2;
    bool rwmh_autotune = false;
    int max_tree_depth = 10;
    double target_accept = 0.8;
    double init_step = 0.0;  // 0 = search for one
};

struct ChainStats {
    std::size_t raw_steps = 0;       // post burn-in steps taken
    std::size_t burn_in_steps = 0;
    double accept_rate = 0.0;        // mean accept_stat (NUTS) / accept fraction (RWMH)
    std::size_t divergences = 0;     // sampling phase
    std::size_t divergences_adapt = 0;
    double step_size = 0.0;          // frozen step (NUTS) / final scale (RWMH)
    double mean_tree_depth = 0.0;
    std::size_t max_depth_hits = 0;
    std::size_t n_grad_evals = 0;
    std::size_t n_value_evals = 0;
    Vec adapt_trace;                 // step size (or scale) per burn-in step
};

struct Chain {
    Mat samples;  // n_samples x dim
    Vec log_targets;
    std::vector<std::size_t> raw_step_index;  // 1-based raw step numbering incl. burn-in
    ChainConfig config;
    ChainStats stats;
};

// Burn-in (with adaptation), then n_samples * thin raw steps storing every
// thin-th. Fully reproducible from config.seed.
inline Chain run_chain(const ChainConfig& cfg, const Target& target, const Vec& init) {
    if (cfg.thin < 1) throw ConfigError("chain thin must be >= 1");
    if (cfg.n_samples == 0) throw ConfigError("chain n_samples must be positive");
    if (cfg.sampler == SamplerKind::nuts && !target.value_grad)
        throw ConfigError("NUTS requires a gradient-capable target");
    if (!target.value && !target.value_grad) throw ConfigError("target has no evaluators");

    auto grad_count = std::make_shared<std::size_t>(0);
    auto value_count = std::make_shared<std::size_t>(0);
    Target counted;
    if (target.value)
        counted.value = [value_count, &target](const Vec& q) {
            ++*value_count;
            return target.value(q);
        };
    else
        counted.value = [value_count, &target](const Vec& q) {
            ++*value_count;
            return target.value_grad(q).value;
        };
    if (target.value_grad)
        counted.value_grad = [grad_count, &target](const Vec& q) {
            ++*grad_count;
            return target.value_grad(q);
        };

    Chain chain;
    chain.config = cfg;
    chain.stats.burn_in_steps = cfg.burn_in;
    const std::size_t dim = init.size();
    const std::size_t raw_total = cfg.n_samples * cfg.thin;
    chain.samples = Mat(cfg.n_samples, dim);
    chain.log_targets.resize(cfg.n_samples);
    chain.raw_step_index.resize(cfg.n_samples);
    Rng rng(cfg.seed);

    if (cfg.sampler == SamplerKind::nuts) {
        detail::NutsPoint point;
        point.q = init;
        TargetEval e0 = counted.value_grad(point.q);
        point.logp = e0.value;
        point.grad = std::move(e0.grad);
        if (!std::isfinite(point.logp)) throw NumericError("run_chain: non-finite log target at init");

        double step0 = cfg.init_step > 0.0 ? cfg.init_step : find_reasonable_step(counted, point.q, rng);
        DualAvgState da = DualAvgState::init(step0, cfg.target_accept);
        chain.stats.adapt_trace.reserve(cfg.burn_in);
        for (std::size_t i = 0; i < cfg.burn_in; ++i) {
            NutsStats st = nuts_step(point, da.step(), counted, rng, cfg.max_tree_depth);
            chain.stats.divergences_adapt += st.divergent;
            da = dual_avg_update(da, st.accept_stat);
            chain.stats.adapt_trace.push_back(da.step());
        }
        if (cfg.burn_in >= 50 && chain.stats.divergences_adapt == cfg.burn_in)
            throw NumericError("run_chain: every adaptation step diverged (step size " +
                               std::to_string(da.step()) + "); target may be ill-conditioned");
        double step = cfg.burn_in > 0 ? da.adapted_step() : step0;
        chain.stats.step_size = step;

        double accept_sum = 0.0, depth_sum = 0.0;
        for (std::size_t i = 0; i < raw_total; ++i) {
            NutsStats st = nuts_step(point, step, counted, rng, cfg.max_tree_depth);
            accept_sum += st.accept_stat;
            depth_sum += st.depth;
            chain.stats.divergences += st.divergent;
            chain.stats.max_depth_hits += (st.depth == cfg.max_tree_depth);
            if ((i + 1) % cfg.thin == 0) {
                std::size_t s = (i + 1) / cfg.thin - 1;
                std::copy(point.q.begin(), point.q.end(), chain.samples.row(s));
                chain.log_targets[s] = point.logp;
                chain.raw_step_index[s] = cfg.burn_in + i + 1;
            }
        }
        chain.stats.accept_rate = accept_sum / static_cast<double>(raw_total);
        chain.stats.mean_tree_depth = depth_sum / static_cast<double>(raw_total);
    } else {
        Vec q = init;
        double logp = counted.value(q);
        if (!std::isfinite(logp)) throw NumericError("run_chain: non-finite log target at init");
        double scale = cfg.rwmh_scale;
        chain.stats.adapt_trace.reserve(cfg.burn_in);
        std::size_t block_accepts = 0, block_size = 0;
        for (std::size_t i = 0; i < cfg.burn_in; ++i) {
            block_accepts += rwmh_step(q, logp, scale, counted.value, rng);
            ++block_size;
            if (cfg.rwmh_autotune && block_size == 100) {
                double rate = static_cast<double>(block_accepts) / 100.0;
                scale *= std::exp(rate - 0.25);  // nudge toward 25% acceptance
                block_accepts = block_size = 0;
            }
            chain.stats.adapt_trace.push_back(scale);
        }
        chain.stats.step_size = scale;
        std::size_t accepted = 0;
        for (std::size_t i = 0; i < raw_total; ++i) {
            accepted += rwmh_step(q, logp, scale, counted.value, rng);
            if ((i + 1) % cfg.thin == 0) {
                std::size_t s = (i + 1) / cfg.thin - 1;
                std::copy(q.begin(), q.end(), chain.samples.row(s));
                chain.log_targets[s] = logp;
                chain.raw_step_index[s] = cfg.burn_in + i + 1;
            }
        }
        chain.stats.accept_rate = static_cast<double>(accepted) / static_cast<double>(raw_total);
    }
    chain.stats.raw_steps = raw_total;
    chain.stats.n_grad_evals = *grad_count;
    chain.stats.n_value_evals = *value_count;
    return chain;
}

}  // namespace heliomc
