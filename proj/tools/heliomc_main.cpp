// heliomc: train a neural surrogate of the cosmic-ray modulation model and
// sample heliospheric transport parameters from its posterior.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "heliomc/config.hpp"
#include "heliomc/dataset.hpp"
#include "heliomc/diagnostics.hpp"
#include "heliomc/forward_model.hpp"
#include "heliomc/io.hpp"
#include "heliomc/mlp.hpp"
#include "heliomc/model_io.hpp"
#include "heliomc/posterior.hpp"
#include "heliomc/samplers.hpp"
#include "heliomc/selftest.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

using namespace heliomc;

namespace fs = std::filesystem;

void require_exists(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw IoError(what + " not found: " + path);
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.paths.out_dir);
    return (fs::path(cfg.paths.out_dir) / name).string();
}

int cmd_gen_data(const RunConfig& cfg) {
    Dataset ds = generate_dataset(cfg.dataset_n, cfg.oracle.box, cfg.dataset_seed, cfg.oracle.p_fail, cfg.oracle);
    write_dataset_csv(cfg.paths.dataset, ds);
    std::printf("wrote %zu rows (%zu train / %zu test, %zu unstable solves dropped) to %s\n", ds.size(),
                ds.n_train(), ds.n_test(), ds.meta.n_failed, cfg.paths.dataset.c_str());
    return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
    require_exists(cfg.paths.dataset, "dataset");
    Dataset ds = read_dataset_csv(cfg.paths.dataset);
    TrainResult result = train(ds, cfg.train);
    save_model(result.model, cfg.paths.model);
    write_history_csv(out_path(cfg, "train_history.csv"), result.history);
    std::printf("trained %zu epochs, best epoch %zu, best test MAE %.6g\n", result.history.epochs.size(),
                result.history.best_epoch, result.history.best_test_loss);

    Vec err = per_bin_relative_error(result.model, ds, Split::test);
    double mean_err = 0.0, max_err = 0.0;
    std::printf("per-bin relative test error:\n");
    for (std::size_t i = 0; i < err.size(); ++i) {
        std::printf("  R=%8.4f GV  %.4f%%\n", rigidity_grid().values[i], 100.0 * err[i]);
        mean_err += err[i];
        max_err = std::max(max_err, err[i]);
    }
    std::printf("mean %.4f%%  worst bin %.4f%%\n", 100.0 * mean_err / err.size(), 100.0 * max_err);
    std::printf("model written to %s\n", cfg.paths.model.c_str());
    return kExitOk;
}

SurrogatePosterior make_posterior(const RunConfig& cfg, const MlpModel& model, FluxSpectrum observed) {
    FixedContext ctx;
    ctx.alpha = cfg.ctx_alpha;
    ctx.i_hmf = cfg.ctx_i_hmf;
    ctx.v_sw = cfg.ctx_v_sw;
    ctx.observed = std::move(observed);
    return SurrogatePosterior(model, std::move(ctx), prior_from_config(cfg, model));
}

// Target over box-standardized coordinates; chains run there and positions
// are mapped back to raw parameters for storage.
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

int cmd_sample(const RunConfig& cfg) {
    require_exists(cfg.paths.model, "model");
    require_exists(cfg.paths.observed, "observed spectrum");
    MlpModel model = load_model(cfg.paths.model);
    SurrogatePosterior post = make_posterior(cfg, model, read_observed_csv(cfg.paths.observed));
    BoxStandardizer std_map = BoxStandardizer::from_model(model);
    Target target = make_unit_target(post, std_map);

    Vec init_raw = cfg.init_sampled;
    if (init_raw.empty()) {
        auto c = post.prior.center();
        init_raw.assign(c.begin(), c.end());
    }
    Vec init = std_map.to_unit(init_raw);

    std::vector<std::string> names(SampledParams::names().begin(), SampledParams::names().end());
    for (std::size_t c = 0; c < cfg.n_chains; ++c) {
        ChainConfig ch = cfg.chain;
        ch.seed = cfg.n_chains == 1 ? cfg.chain.seed : Rng::substream(cfg.chain.seed, c).next_u64();
        Chain chain = run_chain(ch, target, init);
        // map positions back to raw parameter space
        for (std::size_t i = 0; i < chain.samples.rows; ++i) {
            double* row = chain.samples.row(i);
            for (std::size_t j = 0; j < kNumSampled; ++j)
                row[j] = std_map.center[j] + std_map.half[j] * row[j];
        }
        std::string name = cfg.n_chains == 1 ? std::string("chain.csv") : "chain_" + std::to_string(c) + ".csv";
        std::string path;
        if (cfg.paths.chain.empty()) {
            path = out_path(cfg, name);
        } else if (cfg.n_chains == 1) {
            path = cfg.paths.chain;
        } else {
            fs::path p(cfg.paths.chain);
            path = (p.parent_path() / (p.stem().string() + "_" + std::to_string(c) + p.extension().string()))
                       .string();
        }
        write_chain_csv(path, chain, names);
        std::printf("%s: %zu samples, accept %.3f, divergences %zu, step %.4g -> %s\n",
                    sampler_name(ch.sampler).c_str(), chain.samples.rows, chain.stats.accept_rate,
                    chain.stats.divergences, chain.stats.step_size, path.c_str());
    }
    return kExitOk;
}

int cmd_diagnose(const RunConfig& cfg) {
    std::string chain_path = cfg.paths.chain.empty()
                                 ? (fs::path(cfg.paths.out_dir) / "chain.csv").string()
                                 : cfg.paths.chain;
    require_exists(chain_path, "chain");
    require_exists(cfg.paths.model, "model");
    require_exists(cfg.paths.observed, "observed spectrum");
    Chain chain = read_chain_csv(chain_path);
    MlpModel model = load_model(cfg.paths.model);
    FluxSpectrum observed = read_observed_csv(cfg.paths.observed);
    FixedContext ctx;
    ctx.alpha = cfg.ctx_alpha;
    ctx.i_hmf = cfg.ctx_i_hmf;
    ctx.v_sw = cfg.ctx_v_sw;
    ctx.observed = observed;
    validate_context(ctx);

    PosteriorSummary summary = summarize(chain, model, ctx);
    std::vector<std::string> names(SampledParams::names().begin(), SampledParams::names().end());
    write_summary_outputs(cfg.paths.out_dir, summary, chain, names, observed);

    std::printf("posterior summary (68.3%% equal-tailed intervals):\n");
    for (std::size_t j = 0; j < names.size(); ++j)
        std::printf("  %-7s  map %.5g  mean %.5g  peak %.5g  ci [%.5g, %.5g]\n", names[j].c_str(),
                    summary.map_point[j], summary.means[j], summary.marginal_maxima[j], summary.ci_1d[j].lo,
                    summary.ci_1d[j].hi);
    std::printf("evaluation ledger:\n");
    std::printf("  stored samples:       %zu\n", chain.samples.rows);
    std::printf("  burn-in steps:        %zu\n", chain.stats.burn_in_steps);
    std::printf("  raw steps:            %zu\n", chain.stats.raw_steps);
    std::printf("  gradient evaluations: %zu\n", chain.stats.n_grad_evals);
    std::printf("  value evaluations:    %zu\n", chain.stats.n_value_evals);
    std::printf("  divergences:          %zu\n", chain.stats.divergences);
    std::printf("outputs written to %s\n", cfg.paths.out_dir.c_str());
    return kExitOk;
}

int cmd_predict(const RunConfig& cfg, const HelioParams& params, double sigma_frac) {
    require_exists(cfg.paths.model, "model");
    MlpModel model = load_model(cfg.paths.model);
    if (auto bad = detail::validity_violation(params, cfg.oracle.box))
        throw DomainError("predict: " + *bad);
    auto arr = params.to_array();
    Vec in(arr.begin(), arr.end());
    Vec flux = predict_linear_flux(model, in);
    std::printf("rigidity_gv,flux%s\n", sigma_frac > 0.0 ? ",sigma" : "");
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        if (sigma_frac > 0.0)
            std::printf("%.17g,%.17g,%.17g\n", rigidity_grid().values[i], flux[i], sigma_frac * flux[i]);
        else
            std::printf("%.17g,%.17g\n", rigidity_grid().values[i], flux[i]);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"surrogate-likelihood HMC for heliospheric GCR transport"};
    app.require_subcommand(1);

    std::string config_path;

    auto* gen = app.add_subcommand("gen-data", "generate an oracle dataset");
    std::optional<std::size_t> gen_n;
    std::optional<std::uint64_t> gen_seed;
    std::optional<double> gen_pfail;
    std::optional<std::string> gen_out;
    gen->add_option("--config", config_path, "run configuration file (JSON)");
    gen->add_option("--n", gen_n, "number of parameter draws");
    gen->add_option("--seed", gen_seed, "dataset RNG seed");
    gen->add_option("--p-fail", gen_pfail, "simulated solver failure probability");
    gen->add_option("--out", gen_out, "dataset CSV path");

    auto* tr = app.add_subcommand("train", "train the surrogate on a dataset");
    std::optional<std::string> tr_dataset, tr_model;
    std::optional<std::size_t> tr_epochs;
    std::optional<std::uint64_t> tr_seed;
    tr->add_option("--config", config_path, "run configuration file (JSON)");
    tr->add_option("--dataset", tr_dataset, "dataset CSV path");
    tr->add_option("--model-out", tr_model, "output model path");
    tr->add_option("--epochs", tr_epochs, "max training epochs");
    tr->add_option("--seed", tr_seed, "training RNG seed");
    tr->add_flag("--verbose", "print per-epoch progress");

    auto* sa = app.add_subcommand("sample", "sample the surrogate posterior");
    std::optional<std::string> sa_model, sa_observed, sa_outdir, sa_sampler;
    std::optional<std::size_t> sa_n, sa_burn, sa_thin, sa_chains;
    std::optional<std::uint64_t> sa_seed;
    std::optional<double> sa_scale;
    sa->add_option("--config", config_path, "run configuration file (JSON)");
    sa->add_option("--model", sa_model, "trained model path");
    sa->add_option("--observed", sa_observed, "observed-spectrum CSV");
    sa->add_option("--out-dir", sa_outdir, "output directory");
    sa->add_option("--sampler", sa_sampler, "nuts or rwmh");
    sa->add_option("--n-samples", sa_n, "stored samples per chain");
    sa->add_option("--burn-in", sa_burn, "burn-in raw steps");
    sa->add_option("--thin", sa_thin, "store every thin-th raw step");
    sa->add_option("--seed", sa_seed, "chain RNG seed");
    sa->add_option("--rwmh-scale", sa_scale, "RWMH proposal scale (standardized coords)");
    sa->add_option("--chains", sa_chains, "number of independent chains");

    auto* di = app.add_subcommand("diagnose", "summarize a chain and emit plot data");
    std::optional<std::string> di_chain, di_model, di_observed, di_outdir;
    di->add_option("--config", config_path, "run configuration file (JSON)");
    di->add_option("--chain", di_chain, "chain CSV path");
    di->add_option("--model", di_model, "trained model path");
    di->add_option("--observed", di_observed, "observed-spectrum CSV");
    di->add_option("--out-dir", di_outdir, "output directory");

    auto* pr = app.add_subcommand("predict", "evaluate the surrogate at given parameters");
    HelioParams pr_params;
    double pr_sigma_frac = 0.0;
    std::optional<std::string> pr_model;
    pr->add_option("--config", config_path, "run configuration file (JSON)");
    pr->add_option("--model", pr_model, "trained model path");
    pr->add_option("--alpha", pr_params.alpha, "tilt angle [deg]");
    pr->add_option("--i-hmf", pr_params.i_hmf, "HMF intensity [nT]");
    pr->add_option("--v-sw", pr_params.v_sw, "solar wind speed [km/s]");
    pr->add_option("--k0-par", pr_params.k0_par, "parallel DC normalization");
    pr->add_option("--a-par", pr_params.a_par, "parallel DC slope below the break");
    pr->add_option("--b-par", pr_params.b_par, "parallel DC slope above the break");
    pr->add_option("--a-perp", pr_params.a_perp, "perpendicular DC slope below the break");
    pr->add_option("--b-perp", pr_params.b_perp, "perpendicular DC slope above the break");
    pr->add_option("--sigma-frac", pr_sigma_frac, "also print sigma = frac * flux per bin");

    auto* st = app.add_subcommand("selftest", "run the numerical invariant suite");
    (void)st;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_run_config(config_path);

        if (gen->parsed()) {
            if (gen_n) cfg.dataset_n = *gen_n;
            if (gen_seed) cfg.dataset_seed = *gen_seed;
            if (gen_pfail) cfg.oracle.p_fail = *gen_pfail;
            if (gen_out) cfg.paths.dataset = *gen_out;
            validate_run_config(cfg);
            return cmd_gen_data(cfg);
        }
        if (tr->parsed()) {
            if (tr_dataset) cfg.paths.dataset = *tr_dataset;
            if (tr_model) cfg.paths.model = *tr_model;
            if (tr_epochs) cfg.train.max_epochs = *tr_epochs;
            if (tr_seed) cfg.train.rng_seed = *tr_seed;
            if (tr->count("--verbose") > 0) cfg.train.verbose = true;
            validate_run_config(cfg);
            return cmd_train(cfg);
        }
        if (sa->parsed()) {
            if (sa_model) cfg.paths.model = *sa_model;
            if (sa_observed) cfg.paths.observed = *sa_observed;
            if (sa_outdir) cfg.paths.out_dir = *sa_outdir;
            if (sa_sampler) {
                cfg.chain.sampler = sampler_from_name(*sa_sampler);
                if (cfg.chain.sampler == SamplerKind::rwmh && !sa_thin && !cfg.chain_thin_explicit)
                    cfg.chain.thin = 1;
            }
            if (sa_n) cfg.chain.n_samples = *sa_n;
            if (sa_burn) cfg.chain.burn_in = *sa_burn;
            if (sa_thin) cfg.chain.thin = *sa_thin;
            if (sa_seed) cfg.chain.seed = *sa_seed;
            if (sa_scale) cfg.chain.rwmh_scale = *sa_scale;
            if (sa_chains) cfg.n_chains = *sa_chains;
            validate_run_config(cfg);
            return cmd_sample(cfg);
        }
        if (di->parsed()) {
            if (di_chain) cfg.paths.chain = *di_chain;
            if (di_model) cfg.paths.model = *di_model;
            if (di_observed) cfg.paths.observed = *di_observed;
            if (di_outdir) cfg.paths.out_dir = *di_outdir;
            validate_run_config(cfg);
            return cmd_diagnose(cfg);
        }
        if (pr->parsed()) {
            if (pr_model) cfg.paths.model = *pr_model;
            return cmd_predict(cfg, pr_params, pr_sigma_frac);
        }
        if (st->parsed()) {
            bool ok = heliomc::selftest::run(std::cout);
            std::printf("selftest: %s\n", ok ? "all checks passed" : "FAILURES");
            return ok ? kExitOk : kExitNumeric;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    }
    return kExitUsage;
}
