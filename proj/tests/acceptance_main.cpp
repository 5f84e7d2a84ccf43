// Acceptance suite: runs every criterion end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
//
// The surrogate trained for criterion 1 is reused by criteria 2, 4, 5 and 6.
// Set HELIOMC_ACCEPT_CACHE=1 to reuse a previously trained surrogate from the
// working directory (development convenience; the default always trains).

#include <sys/wait.h>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "heliomc/config.hpp"
#include "heliomc/diagnostics.hpp"
#include "heliomc/forward_model.hpp"
#include "heliomc/io.hpp"
#include "heliomc/mlp.hpp"
#include "heliomc/model_io.hpp"
#include "heliomc/posterior.hpp"
#include "heliomc/rng.hpp"
#include "heliomc/samplers.hpp"
#include "heliomc/selftest.hpp"

using namespace heliomc;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool passed, const std::string& detail) {
    std::printf("[%s] criterion %d: %s  --  %s\n", passed ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!passed) ++g_failures;
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

Vec chain_column(const Chain& c, std::size_t j) {
    Vec v(c.samples.rows);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = c.samples(i, j);
    return v;
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces

struct AcceptanceContext {
    Dataset dataset;
    MlpModel model;
    double train_seconds = 0.0;
    SampledParams z_true{2.2, 0.8, 1.1, 0.9, 1.3};
    double ctx_alpha = 30.0, ctx_i_hmf = 5.0, ctx_v_sw = 450.0;

    FixedContext make_observation(std::uint64_t noise_seed) const {
        HelioParams full;
        full.alpha = ctx_alpha;
        full.i_hmf = ctx_i_hmf;
        full.v_sw = ctx_v_sw;
        full.k0_par = z_true.k0_par;
        full.a_par = z_true.a_par;
        full.b_par = z_true.b_par;
        full.a_perp = z_true.a_perp;
        full.b_perp = z_true.b_perp;
        FluxSpectrum truth = solve_flux_exact(full);
        Rng rng(noise_seed);
        FixedContext ctx;
        ctx.alpha = ctx_alpha;
        ctx.i_hmf = ctx_i_hmf;
        ctx.v_sw = ctx_v_sw;
        ctx.observed = synthesize_observation(truth, 0.03, rng);
        return ctx;
    }

    FluxSpectrum true_flux() const {
        HelioParams full;
        full.alpha = ctx_alpha;
        full.i_hmf = ctx_i_hmf;
        full.v_sw = ctx_v_sw;
        full.k0_par = z_true.k0_par;
        full.a_par = z_true.a_par;
        full.b_par = z_true.b_par;
        full.a_perp = z_true.a_perp;
        full.b_perp = z_true.b_perp;
        return solve_flux_exact(full);
    }
};

Target make_unit_target(const SurrogatePosterior& post, const BoxStandardizer& std_map) {
    Target t;
    t.value = [&post, std_map](const Vec& u) {
        return post.eval(SampledParams::from_vec(std_map.from_unit(u)));
    };
    t.value_grad = [&post, std_map](const Vec& u) {
        PosteriorEval pe = post.eval_with_grad(SampledParams::from_vec(std_map.from_unit(u)));
        TargetEval e;
        e.value = pe.log_posterior;
        e.grad.resize(kNumSampled);
        for (std::size_t i = 0; i < kNumSampled; ++i) e.grad[i] = pe.grad[i] * std_map.half[i];
        return e;
    };
    return t;
}

// ---------------------------------------------------------------------------
// Criterion 1: surrogate accuracy on a 10^5-sample oracle dataset.

void criterion_1(AcceptanceContext& actx) {
    const char* cache_env = std::getenv("HELIOMC_ACCEPT_CACHE");
    const bool use_cache = cache_env && std::string(cache_env) == "1";
    const std::string cache_model = "acceptance_surrogate.hmlp";
    const std::string cache_dataset = "acceptance_dataset.csv";

    double t0 = now_seconds();
    bool cached = false;
    if (use_cache && fs::exists(cache_model) && fs::exists(cache_dataset)) {
        actx.model = load_model(cache_model);
        actx.dataset = read_dataset_csv(cache_dataset);
        cached = true;
    } else {
        actx.dataset = generate_dataset(100000, DomainBox::defaults(), 12345, 0.02);
        TrainConfig cfg;  // the training recipe: MAE, Adam(1e-4), batch 128, L2 1e-6
        cfg.max_epochs = 250;
        cfg.patience_early_stop = 25;
        cfg.rng_seed = 777;
        cfg.n_threads = 2;
        TrainResult r = train(actx.dataset, cfg);
        actx.model = std::move(r.model);
        if (use_cache) {
            save_model(actx.model, cache_model);
            write_dataset_csv(cache_dataset, actx.dataset);
        }
    }
    actx.train_seconds = now_seconds() - t0;

    Vec err = per_bin_relative_error(actx.model, actx.dataset, Split::test);
    double worst = 0.0, mean_err = 0.0;
    for (double e : err) {
        worst = std::max(worst, e);
        mean_err += e;
    }
    mean_err /= static_cast<double>(err.size());
    bool accuracy_ok = worst <= 0.03;

    // signed relative residuals of every test prediction (sample x bin) vs
    // each input: |Pearson r| < 0.1 catches bias drifting across the box
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < actx.dataset.size(); ++i)
        if (actx.dataset.split[i] == static_cast<std::uint8_t>(Split::test)) test_idx.push_back(i);
    Vec residual;
    residual.reserve(test_idx.size() * kNumRigidityBins);
    std::vector<Vec> input_cols(kNumInputs);
    for (auto& c : input_cols) c.reserve(test_idx.size() * kNumRigidityBins);
    Vec x(kNumInputs);
    for (std::size_t i : test_idx) {
        x.assign(actx.dataset.inputs.row(i), actx.dataset.inputs.row(i) + kNumInputs);
        Vec pred = forward(actx.model, x);
        for (std::size_t j = 0; j < kNumRigidityBins; ++j) {
            double truth = delog10(actx.dataset.targets(i, j));
            residual.push_back((delog10(pred[j]) - truth) / truth);
            for (std::size_t k = 0; k < kNumInputs; ++k) input_cols[k].push_back(x[k]);
        }
    }
    double worst_r = 0.0;
    for (std::size_t k = 0; k < kNumInputs; ++k)
        worst_r = std::max(worst_r, std::abs(pearson_r(residual, input_cols[k])));
    bool corr_ok = worst_r < 0.1;
    bool runtime_ok = cached || actx.train_seconds <= 2200.0;

    report(1, "surrogate accuracy",
           accuracy_ok && corr_ok && runtime_ok,
           fmt("worst bin %.3f%% (<=3%%), mean %.3f%%, max |pearson r| %.3f (<0.1), %s%.0f s",
               100.0 * worst, 100.0 * mean_err, worst_r, cached ? "cached, " : "", actx.train_seconds));
}

// ---------------------------------------------------------------------------
// Criterion 2: log-posterior gradient vs finite differences, 100 points.

void criterion_2(const AcceptanceContext& actx) {
    double t0 = now_seconds();
    FixedContext ctx = actx.make_observation(555);
    PriorBox prior = PriorBox::from_model(actx.model);
    SurrogatePosterior post(actx.model, ctx, prior);
    auto f = [&](Vec z) { return post.eval(SampledParams::from_vec(z)); };
    Rng rng(556);
    double max_rel = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Vec z(kNumSampled);
        for (std::size_t i = 0; i < kNumSampled; ++i)
            z[i] = rng.uniform(prior.lower[i] + 0.05 * (prior.upper[i] - prior.lower[i]),
                               prior.upper[i] - 0.05 * (prior.upper[i] - prior.lower[i]));
        Vec g = post.eval_with_grad(SampledParams::from_vec(z)).grad;
        for (std::size_t i = 0; i < kNumSampled; ++i) {
            Vec zp = z, zm = z;
            zp[i] += 1e-5;
            zm[i] -= 1e-5;
            double fd = (f(zp) - f(zm)) / 2e-5;
            double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
            max_rel = std::max(max_rel, std::abs(g[i] - fd) / scale);
        }
    }
    report(2, "gradient correctness", max_rel < 1e-3,
           fmt("max rel err %.3g (<1e-3) over 100 interior points, %.1f s", max_rel, now_seconds() - t0));
}

// ---------------------------------------------------------------------------
// Criterion 3: sampler correctness on the 5-D diag(1,4,9,16,25) Gaussian.

void criterion_3() {
    double t0 = now_seconds();
    Vec sigmas = {1.0, 2.0, 3.0, 4.0, 5.0};
    auto sig = std::make_shared<Vec>(sigmas);
    Target target;
    target.value = [sig](const Vec& q) {
        double v = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) v -= 0.5 * q[i] * q[i] / ((*sig)[i] * (*sig)[i]);
        return v;
    };
    target.value_grad = [sig](const Vec& q) {
        TargetEval e;
        e.grad.resize(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
            double s2 = (*sig)[i] * (*sig)[i];
            e.value -= 0.5 * q[i] * q[i] / s2;
            e.grad[i] = -q[i] / s2;
        }
        return e;
    };

    bool ok = true;
    std::string detail;
    for (SamplerKind kind : {SamplerKind::nuts, SamplerKind::rwmh}) {
        ChainConfig cfg;
        cfg.sampler = kind;
        cfg.thin = 1;
        if (kind == SamplerKind::nuts) {
            cfg.burn_in = 2000;
            cfg.n_samples = 16000;
            cfg.seed = 301;
        } else {
            cfg.burn_in = 50000;
            cfg.n_samples = 200000;
            cfg.thin = 10;  // 2M raw steps
            cfg.rwmh_scale = 1e-3;
            cfg.rwmh_autotune = true;  // tuned toward 25% during burn-in
            cfg.seed = 302;
        }
        Chain chain = run_chain(cfg, target, Vec(5, 0.5));
        double min_ess = 1e18;
        for (std::size_t j = 0; j < 5; ++j) {
            Vec col = chain_column(chain, j);
            double ess = effective_sample_size(col);
            min_ess = std::min(min_ess, ess);
            double mu = mean(col);
            double var = variance(col);
            double se = std::sqrt(var / ess);
            double truth = sigmas[j] * sigmas[j];
            if (std::abs(mu) > 4.0 * se) {
                ok = false;
                detail += fmt("%s mean dim %d off (|%.3g| > 4se %.3g); ", sampler_name(kind).c_str(),
                              static_cast<int>(j), std::abs(mu), 4.0 * se);
            }
            if (std::abs(var - truth) > 0.10 * truth) {
                ok = false;
                detail += fmt("%s var dim %d off (%.3g vs %.3g); ", sampler_name(kind).c_str(),
                              static_cast<int>(j), var, truth);
            }
        }
        if (min_ess < 5000.0) {
            ok = false;
            detail += fmt("%s min ESS %.0f < 5000; ", sampler_name(kind).c_str(), min_ess);
        } else {
            detail += fmt("%s min ESS %.0f; ", sampler_name(kind).c_str(), min_ess);
        }
    }
    report(3, "sampler correctness on the 5-D gaussian", ok,
           detail + fmt("%.1f s", now_seconds() - t0));
}

// ---------------------------------------------------------------------------
// Criterion 4: NUTS vs un-thinned RWMH efficiency on the surrogate posterior.

void criterion_4(const AcceptanceContext& actx, Chain& nuts_chain_out, std::size_t& grad_count_out,
                 std::size_t& value_count_out) {
    double t0 = now_seconds();
    FixedContext ctx = actx.make_observation(42001);
    PriorBox prior = PriorBox::from_model(actx.model);
    SurrogatePosterior post(actx.model, ctx, prior);
    BoxStandardizer std_map = BoxStandardizer::from_model(actx.model);
    Target base = make_unit_target(post, std_map);

    // independent counters to cross-check the chain's evaluation ledger
    auto grad_calls = std::make_shared<std::size_t>(0);
    auto value_calls = std::make_shared<std::size_t>(0);
    Target counted;
    counted.value = [base, value_calls](const Vec& u) {
        ++*value_calls;
        return base.value(u);
    };
    counted.value_grad = [base, grad_calls](const Vec& u) {
        ++*grad_calls;
        return base.value_grad(u);
    };

    Vec init = std_map.to_unit(actx.z_true.to_vec());

    ChainConfig nuts_cfg;
    nuts_cfg.sampler = SamplerKind::nuts;
    nuts_cfg.burn_in = 1000;
    nuts_cfg.n_samples = 2000;
    nuts_cfg.thin = 1;
    nuts_cfg.seed = 401;
    Chain nuts_chain = run_chain(nuts_cfg, counted, init);
    grad_count_out = *grad_calls;
    value_count_out = *value_calls;

    ChainConfig rw_cfg;
    rw_cfg.sampler = SamplerKind::rwmh;
    rw_cfg.rwmh_scale = 1e-2;  // standardized coordinates
    rw_cfg.burn_in = 20000;
    rw_cfg.n_samples = 100000;
    rw_cfg.thin = 1;  // un-thinned
    rw_cfg.seed = 402;
    Chain rw_chain = run_chain(rw_cfg, base, init);

    // k0_par is column 0 (raw coordinates after mapping; ACF is affine-invariant)
    Vec nuts_k0 = chain_column(nuts_chain, 0);
    Vec rw_k0 = chain_column(rw_chain, 0);
    double nuts_lag1 = autocorrelation(nuts_k0, 1).values[1];
    double rw_lag100 = autocorrelation(rw_k0, 100).values[100];
    double nuts_eff = effective_sample_size(nuts_k0) / static_cast<double>(nuts_k0.size());
    double rw_eff = effective_sample_size(rw_k0) / static_cast<double>(rw_k0.size());
    double ratio = nuts_eff / rw_eff;
    bool accept_ok = rw_chain.stats.accept_rate >= 0.15 && rw_chain.stats.accept_rate <= 0.35;
    bool ok = nuts_lag1 <= rw_lag100 && ratio >= 20.0 && accept_ok;

    report(4, "NUTS vs RWMH autocorrelation efficiency", ok,
           fmt("nuts lag-1 acf %.3f <= rwmh lag-100 acf %.3f; ESS/sample ratio %.0f (>=20); "
               "rwmh accept %.2f (25%%+-10%%); %.1f s",
               nuts_lag1, rw_lag100, ratio, rw_chain.stats.accept_rate, now_seconds() - t0));

    nuts_chain_out = std::move(nuts_chain);
}

// ---------------------------------------------------------------------------
// Criterion 5: end-to-end parameter recovery with known ground truth.

void criterion_5(const AcceptanceContext& actx) {
    double t0 = now_seconds();
    PriorBox prior = PriorBox::from_model(actx.model);
    BoxStandardizer std_map = BoxStandardizer::from_model(actx.model);
    const std::array<std::uint64_t, 3> seeds = {501, 502, 503};
    auto truth = actx.z_true.to_array();

    // track parameters k0_par (0), a_perp (3), b_perp (4)
    const std::array<std::size_t, 3> tracked = {0, 3, 4};
    std::array<int, 3> in68 = {0, 0, 0}, in95 = {0, 0, 0};
    bool widths_ok = true;
    bool band_ok = true;
    std::string detail;

    for (std::size_t r = 0; r < seeds.size(); ++r) {
        FixedContext ctx = actx.make_observation(seeds[r]);
        SurrogatePosterior post(actx.model, ctx, prior);
        Target target = make_unit_target(post, std_map);
        ChainConfig cfg;
        cfg.sampler = SamplerKind::nuts;
        cfg.burn_in = 5000;  // desk-scale defaults
        cfg.n_samples = 1000;
        cfg.thin = 10;
        cfg.seed = seeds[r] * 7 + 1;
        auto center = prior.center();
        Vec init(center.begin(), center.end());
        Chain chain = run_chain(cfg, target, std_map.to_unit(init));
        for (std::size_t i = 0; i < chain.samples.rows; ++i) {
            double* row = chain.samples.row(i);
            for (std::size_t j = 0; j < kNumSampled; ++j)
                row[j] = std_map.center[j] + std_map.half[j] * row[j];
        }

        std::vector<CredibleInterval> ci68(kNumSampled), ci95(kNumSampled);
        for (std::size_t j = 0; j < kNumSampled; ++j) {
            Vec col = chain_column(chain, j);
            ci68[j] = credible_interval_1d(col, 0.683);
            ci95[j] = credible_interval_1d(col, 0.95);
        }
        for (std::size_t k = 0; k < tracked.size(); ++k) {
            std::size_t j = tracked[k];
            if (truth[j] >= ci68[j].lo && truth[j] <= ci68[j].hi) ++in68[k];
            if (truth[j] >= ci95[j].lo && truth[j] <= ci95[j].hi) ++in95[k];
        }
        // parallel slopes must be less constrained than perpendicular ones
        if (!(ci68[1].width() > ci68[3].width())) widths_ok = false;
        if (!(ci68[2].width() > ci68[4].width())) widths_ok = false;

        if (r == 0) {
            // noise-free truth inside the 95% predictive band in >= 28/32 bins
            PredictiveBand band = posterior_predictive(chain, actx.model, ctx);
            FluxSpectrum truth_flux = actx.true_flux();
            int covered = 0;
            for (std::size_t b = 0; b < kNumRigidityBins; ++b)
                covered += (truth_flux.flux[b] >= band.lo95[b] && truth_flux.flux[b] <= band.hi95[b]);
            band_ok = covered >= 28;
            detail += fmt("band coverage %d/32; ", covered);
        }
    }

    bool coverage_ok = true;
    const std::array<std::string, 3> names = {"k0_par", "a_perp", "b_perp"};
    for (std::size_t k = 0; k < tracked.size(); ++k) {
        if (in68[k] < 1) coverage_ok = false;
        if (in95[k] < 3) coverage_ok = false;
        detail += names[k] + fmt(" 68%%:%d/3 95%%:%d/3; ", in68[k], in95[k]);
    }
    report(5, "end-to-end parameter recovery", coverage_ok && widths_ok && band_ok,
           detail + fmt("parallel wider than perpendicular: %s; %.0f s", widths_ok ? "yes" : "NO",
                        now_seconds() - t0));
}

// ---------------------------------------------------------------------------
// Criterion 6: surrogate latency + exact evaluation-count ledger.

void criterion_6(const AcceptanceContext& actx, const Chain& nuts_chain, std::size_t grad_count,
                 std::size_t value_count) {
    FixedContext ctx = actx.make_observation(606);
    PriorBox prior = PriorBox::from_model(actx.model);
    SurrogatePosterior post(actx.model, ctx, prior);

    // single-threaded likelihood latency
    SampledParams z = actx.z_true;
    double acc = 0.0;
    double t0 = now_seconds();
    const int n_eval = 2000;
    for (int i = 0; i < n_eval; ++i) acc += post.eval(z);
    double per_eval_ms = (now_seconds() - t0) / n_eval * 1e3;
    bool latency_ok = per_eval_ms <= 5.0;
    (void)acc;

    // ledger from criterion 4's NUTS run must match the configured run and
    // the independent call counters exactly
    bool ledger_ok = nuts_chain.samples.rows == nuts_chain.config.n_samples &&
                     nuts_chain.stats.raw_steps == nuts_chain.config.n_samples * nuts_chain.config.thin &&
                     nuts_chain.stats.n_grad_evals == grad_count &&
                     nuts_chain.stats.n_value_evals == value_count;
    for (std::size_t i = 0; i < nuts_chain.raw_step_index.size(); ++i) {
        if (nuts_chain.raw_step_index[i] !=
            nuts_chain.config.burn_in + (i + 1) * nuts_chain.config.thin) {
            ledger_ok = false;
            break;
        }
    }

    // the `diagnose` subcommand must print the same ledger
    bool cli_ok = true;
    std::string cli_detail;
    const char* cli = std::getenv("HELIOMC_CLI");
    if (cli) {
        fs::path dir = fs::temp_directory_path() / "heliomc_acceptance_c6";
        fs::create_directories(dir);
        std::vector<std::string> names(SampledParams::names().begin(), SampledParams::names().end());
        write_chain_csv((dir / "chain.csv").string(), nuts_chain, names);
        save_model(actx.model, (dir / "model.hmlp").string());
        FixedContext obs_ctx = actx.make_observation(42001);  // same observation as criterion 4
        write_observed_csv((dir / "obs.csv").string(), obs_ctx.observed);
        std::string cmd = std::string(cli) + " diagnose --chain " + (dir / "chain.csv").string() +
                          " --model " + (dir / "model.hmlp").string() + " --observed " +
                          (dir / "obs.csv").string() + " --out-dir " + (dir / "out").string() + " > " +
                          (dir / "diag.txt").string() + " 2>&1";
        int rc = std::system(cmd.c_str());
        cli_ok = WIFEXITED(rc) && WEXITSTATUS(rc) == 0;
        if (cli_ok) {
            std::ifstream f(dir / "diag.txt");
            std::stringstream ss;
            ss << f.rdbuf();
            std::string out = ss.str();
            auto has = [&](const std::string& s) { return out.find(s) != std::string::npos; };
            cli_ok = has(fmt("stored samples:       %.0f", static_cast<double>(nuts_chain.samples.rows))) &&
                     has(fmt("raw steps:            %.0f", static_cast<double>(nuts_chain.stats.raw_steps))) &&
                     has(fmt("gradient evaluations: %.0f", static_cast<double>(grad_count)));
        }
        if (!cli_ok) cli_detail = "CLI diagnose ledger mismatch; ";
    } else {
        cli_detail = "HELIOMC_CLI unset, CLI ledger not exercised; ";
    }

    report(6, "surrogate throughput and evaluation ledger", latency_ok && ledger_ok && cli_ok,
           cli_detail + fmt("likelihood eval %.3f ms (<=5 ms); ledger stored %.0f, grad evals %.0f",
                            per_eval_ms, static_cast<double>(nuts_chain.samples.rows),
                            static_cast<double>(grad_count)));
}

// ---------------------------------------------------------------------------
// Criterion 7: numerical invariant suite.

void criterion_7() {
    double t0 = now_seconds();
    auto results = heliomc::selftest::run_all_checks();
    bool ok = true;
    std::string detail;
    for (const auto& r : results) {
        if (!r.passed) {
            ok = false;
            detail += r.name + "; ";
        }
    }
    double elapsed = now_seconds() - t0;
    if (elapsed > 60.0) {
        ok = false;
        detail += "selftest exceeded 60 s; ";
    }
    report(7, "numerical invariant suite", ok,
           detail + fmt("%zu checks, %.1f s", results.size(), elapsed));
}

}  // namespace

int main() {
    std::printf("heliomc acceptance suite\n");
    AcceptanceContext actx;
    try {
        criterion_1(actx);
        criterion_2(actx);
        criterion_3();
        Chain nuts_chain;
        std::size_t grads = 0, values = 0;
        criterion_4(actx, nuts_chain, grads, values);
        criterion_5(actx);
        criterion_6(actx, nuts_chain, grads, values);
        criterion_7();
    } catch (const std::exception& e) {
        std::printf("[FAIL] acceptance suite aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%s\n", g_failures == 0 ? "acceptance: all criteria passed" : "acceptance: FAILURES");
    return g_failures == 0 ? 0 : 1;
}
