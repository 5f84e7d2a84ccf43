#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "heliomc/common.hpp"
#include "heliomc/forward_model.hpp"
#include "heliomc/mlp.hpp"
#include "heliomc/posterior.hpp"
#include "heliomc/samplers.hpp"

namespace heliomc {

// One run configuration drives every subcommand; CLI flags override fields.
struct RunConfig {
    struct Paths {
        std::string dataset = "dataset.csv";
        std::string model = "surrogate.hmlp";
        std::string observed = "observed.csv";
        std::string out_dir = ".";
        std::string chain;  // set by `sample`, consumed by `diagnose`
    } paths;

    OracleConfig oracle;  // includes the sampling box and p_fail
    std::size_t dataset_n = 100000;
    std::uint64_t dataset_seed = 1;

    TrainConfig train;

    ChainConfig chain;
    bool chain_thin_explicit = false;  // thin given in the config file
    std::size_t n_chains = 1;

    double prior_decay_frac = 0.02;
    double prior_plateau_log = std::log(1e6);
    std::optional<std::array<double, kNumSampled>> prior_lower, prior_upper;

    double ctx_alpha = 30.0;
    double ctx_i_hmf = 5.0;
    double ctx_v_sw = 450.0;

    Vec init_sampled;  // optional chain start (raw coordinates); empty = box center
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field " + path + key + " has the wrong type");
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& path,
                           std::initializer_list<const char*> known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown config field " + path + it.key());
    }
}

inline void check_positive(double v, const std::string& field) {
    if (!(v > 0.0)) throw ConfigError("config field " + field + " must be positive");
}

}  // namespace detail

inline void validate_run_config(const RunConfig& c) {
    using detail::check_positive;
    if (c.dataset_n < 100) throw ConfigError("config field dataset.n must be at least 100");
    if (!(c.oracle.p_fail >= 0.0 && c.oracle.p_fail < 1.0))
        throw ConfigError("config field oracle.p_fail must be in [0,1)");
    check_positive(c.oracle.lis_norm, "oracle.lis_norm");
    check_positive(c.oracle.break_gv, "oracle.break_gv");
    if (!(c.oracle.phi0_gv >= 0.0)) throw ConfigError("config field oracle.phi0_gv must be non-negative");
    for (std::size_t i = 0; i < kNumInputs; ++i)
        if (!(c.oracle.box.upper[i] > c.oracle.box.lower[i]))
            throw ConfigError("config field oracle.box: upper must exceed lower in every dimension");
    if (c.train.batch_size == 0) throw ConfigError("config field train.batch_size must be positive");
    if (c.train.max_epochs == 0) throw ConfigError("config field train.max_epochs must be positive");
    if (c.train.n_threads == 0 || c.train.n_threads > 64)
        throw ConfigError("config field train.threads must be in [1,64]");
    if (!(c.train.plateau_factor > 0.0 && c.train.plateau_factor < 1.0))
        throw ConfigError("config field train.plateau_factor must be strictly between 0 and 1");
    check_positive(c.train.learning_rate, "train.learning_rate");
    check_positive(c.train.min_lr, "train.min_lr");
    if (c.train.l2_weight < 0.0) throw ConfigError("config field train.l2_weight must be non-negative");
    if (c.chain.thin < 1) throw ConfigError("config field chain.thin must be >= 1");
    if (c.chain.n_samples == 0) throw ConfigError("config field chain.n_samples must be positive");
    check_positive(c.chain.rwmh_scale, "chain.rwmh_scale");
    if (c.chain.max_tree_depth < 1 || c.chain.max_tree_depth > 16)
        throw ConfigError("config field chain.max_tree_depth must be in [1,16]");
    if (!(c.chain.target_accept > 0.0 && c.chain.target_accept < 1.0))
        throw ConfigError("config field chain.target_accept must be in (0,1)");
    if (c.n_chains == 0) throw ConfigError("config field chain.chains must be positive");
    if (!(c.prior_decay_frac > 0.0)) throw ConfigError("config field prior.decay_frac must be positive");
    if (!(c.ctx_alpha >= 0.0 && c.ctx_alpha <= 90.0))
        throw ConfigError("config field context.alpha must be in [0,90]");
    check_positive(c.ctx_i_hmf, "context.i_hmf");
    check_positive(c.ctx_v_sw, "context.v_sw");
    if (!c.init_sampled.empty() && c.init_sampled.size() != kNumSampled)
        throw ConfigError("config field chain.init must have 5 entries");
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::read_field;
    using detail::reject_unknown;
    RunConfig c;
    reject_unknown(j, "", {"paths", "oracle", "dataset", "train", "chain", "prior", "context"});

    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        reject_unknown(p, "paths.", {"dataset", "model", "observed", "out_dir", "chain"});
        read_field(p, "paths.", "dataset", c.paths.dataset);
        read_field(p, "paths.", "model", c.paths.model);
        read_field(p, "paths.", "observed", c.paths.observed);
        read_field(p, "paths.", "out_dir", c.paths.out_dir);
        read_field(p, "paths.", "chain", c.paths.chain);
    }
    if (j.contains("oracle")) {
        const auto& o = j.at("oracle");
        reject_unknown(o, "oracle.",
                       {"lis_norm", "lis_index", "break_gv", "w_par", "w_perp", "phi0_gv", "p_fail",
                        "box_lower", "box_upper"});
        read_field(o, "oracle.", "lis_norm", c.oracle.lis_norm);
        read_field(o, "oracle.", "lis_index", c.oracle.lis_index);
        read_field(o, "oracle.", "break_gv", c.oracle.break_gv);
        read_field(o, "oracle.", "w_par", c.oracle.w_par);
        read_field(o, "oracle.", "w_perp", c.oracle.w_perp);
        read_field(o, "oracle.", "phi0_gv", c.oracle.phi0_gv);
        read_field(o, "oracle.", "p_fail", c.oracle.p_fail);
        read_field(o, "oracle.", "box_lower", c.oracle.box.lower);
        read_field(o, "oracle.", "box_upper", c.oracle.box.upper);
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        reject_unknown(d, "dataset.", {"n", "seed"});
        read_field(d, "dataset.", "n", c.dataset_n);
        read_field(d, "dataset.", "seed", c.dataset_seed);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, "train.",
                       {"hidden_dims", "batch_size", "max_epochs", "patience_early_stop", "plateau_patience",
                        "plateau_factor", "min_lr", "learning_rate", "l2_weight", "seed", "threads",
                        "verbose"});
        read_field(t, "train.", "hidden_dims", c.train.hidden_dims);
        read_field(t, "train.", "batch_size", c.train.batch_size);
        read_field(t, "train.", "max_epochs", c.train.max_epochs);
        read_field(t, "train.", "patience_early_stop", c.train.patience_early_stop);
        read_field(t, "train.", "plateau_patience", c.train.plateau_patience);
        read_field(t, "train.", "plateau_factor", c.train.plateau_factor);
        read_field(t, "train.", "min_lr", c.train.min_lr);
        read_field(t, "train.", "learning_rate", c.train.learning_rate);
        read_field(t, "train.", "l2_weight", c.train.l2_weight);
        read_field(t, "train.", "seed", c.train.rng_seed);
        read_field(t, "train.", "threads", c.train.n_threads);
        read_field(t, "train.", "verbose", c.train.verbose);
    }
    if (j.contains("chain")) {
        const auto& ch = j.at("chain");
        reject_unknown(ch, "chain.",
                       {"sampler", "n_samples", "burn_in", "thin", "seed", "rwmh_scale", "rwmh_autotune",
                        "max_tree_depth", "target_accept", "init_step", "chains", "init"});
        std::string sampler = sampler_name(c.chain.sampler);
        read_field(ch, "chain.", "sampler", sampler);
        c.chain.sampler = sampler_from_name(sampler);
        // RWMH runs un-thinned unless the config says otherwise
        if (c.chain.sampler == SamplerKind::rwmh) c.chain.thin = 1;
        read_field(ch, "chain.", "n_samples", c.chain.n_samples);
        read_field(ch, "chain.", "burn_in", c.chain.burn_in);
        if (ch.contains("thin")) {
            read_field(ch, "chain.", "thin", c.chain.thin);
            c.chain_thin_explicit = true;
        }
        read_field(ch, "chain.", "seed", c.chain.seed);
        read_field(ch, "chain.", "rwmh_scale", c.chain.rwmh_scale);
        read_field(ch, "chain.", "rwmh_autotune", c.chain.rwmh_autotune);
        read_field(ch, "chain.", "max_tree_depth", c.chain.max_tree_depth);
        read_field(ch, "chain.", "target_accept", c.chain.target_accept);
        read_field(ch, "chain.", "init_step", c.chain.init_step);
        read_field(ch, "chain.", "chains", c.n_chains);
        read_field(ch, "chain.", "init", c.init_sampled);
    }
    if (j.contains("prior")) {
        const auto& p = j.at("prior");
        reject_unknown(p, "prior.", {"decay_frac", "plateau_log_value", "lower", "upper"});
        read_field(p, "prior.", "decay_frac", c.prior_decay_frac);
        read_field(p, "prior.", "plateau_log_value", c.prior_plateau_log);
        std::array<double, kNumSampled> tmp{};
        if (p.contains("lower")) {
            detail::read_field(p, "prior.", "lower", tmp);
            c.prior_lower = tmp;
        }
        if (p.contains("upper")) {
            detail::read_field(p, "prior.", "upper", tmp);
            c.prior_upper = tmp;
        }
    }
    if (j.contains("context")) {
        const auto& x = j.at("context");
        reject_unknown(x, "context.", {"alpha", "i_hmf", "v_sw"});
        read_field(x, "context.", "alpha", c.ctx_alpha);
        read_field(x, "context.", "i_hmf", c.ctx_i_hmf);
        read_field(x, "context.", "v_sw", c.ctx_v_sw);
    }
    validate_run_config(c);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

// Prior box for a run: explicit bounds from the config when given, otherwise
// the training box recovered from the surrogate.
inline PriorBox prior_from_config(const RunConfig& c, const MlpModel& model) {
    PriorBox p = PriorBox::from_model(model, c.prior_decay_frac);
    if (c.prior_lower && c.prior_upper) {
        p.lower = *c.prior_lower;
        p.upper = *c.prior_upper;
        for (std::size_t i = 0; i < kNumSampled; ++i)
            p.decay_scale[i] = c.prior_decay_frac * (p.upper[i] - p.lower[i]);
    }
    p.plateau_log_value = c.prior_plateau_log;
    p.validate();
    return p;
}

}  // namespace heliomc
