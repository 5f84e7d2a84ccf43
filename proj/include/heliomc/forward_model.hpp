#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include "heliomc/common.hpp"
#include "heliomc/dataset.hpp"
#include "heliomc/rng.hpp"

namespace heliomc {

inline constexpr std::size_t kNumRigidityBins = 32;
inline constexpr std::size_t kNumInputs = 8;

// 32 rigidities, log-uniform over [0.2, 200] GV; endpoints pinned exactly.
struct RigidityGrid {
    std::array<double, kNumRigidityBins> values;
};

inline const RigidityGrid& rigidity_grid() {
    static const RigidityGrid grid = [] {
        RigidityGrid g;
        for (std::size_t i = 0; i < kNumRigidityBins; ++i)
            g.values[i] = 0.2 * std::pow(10.0, 3.0 * static_cast<double>(i) / 31.0);
        g.values[0] = 0.2;
        g.values[31] = 200.0;
        return g;
    }();
    return grid;
}

// The 8 forward-model inputs: 3 heliospheric drivers fixed during inference
// plus the 5 sampled diffusion-coefficient parameters.
struct HelioParams {
    double alpha = 30.0;   // tilt angle, deg
    double i_hmf = 5.0;    // HMF intensity at 1 AU, nT
    double v_sw = 450.0;   // solar wind speed, km/s
    double k0_par = 2.0;   // parallel DC normalization
    double a_par = 0.8;    // parallel DC slope below the break
    double b_par = 1.0;    // parallel DC slope above the break
    double a_perp = 0.8;   // perpendicular DC slope below the break
    double b_perp = 1.0;   // perpendicular DC slope above the break

    std::array<double, kNumInputs> to_array() const {
        return {alpha, i_hmf, v_sw, k0_par, a_par, b_par, a_perp, b_perp};
    }
    static HelioParams from_array(const std::array<double, kNumInputs>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
    }
    static const std::array<std::string, kNumInputs>& names() {
        static const std::array<std::string, kNumInputs> n = {"alpha",  "i_hmf", "v_sw",  "k0_par",
                                                              "a_par", "b_par", "a_perp", "b_perp"};
        return n;
    }
};

struct FluxSpectrum {
    std::array<double, kNumRigidityBins> flux{};
    std::optional<std::array<double, kNumRigidityBins>> sigma;
};

// Sampling box for the 8 inputs (field order as in HelioParams::names()).
struct DomainBox {
    std::array<double, kNumInputs> lower{};
    std::array<double, kNumInputs> upper{};

    static DomainBox defaults() {
        DomainBox b;
        b.lower = {10.0, 3.0, 300.0, 0.5, 0.3, 0.3, 0.3, 0.3};
        b.upper = {75.0, 9.0, 700.0, 5.0, 1.5, 2.0, 1.5, 2.0};
        return b;
    }

    bool contains(const HelioParams& z) const {
        auto a = z.to_array();
        for (std::size_t i = 0; i < kNumInputs; ++i)
            if (a[i] < lower[i] || a[i] > upper[i]) return false;
        return true;
    }
};

// Analytic stand-in for the Parker-equation solver: a force-field modulation
// of a power-law LIS, driven by an effective diffusion coefficient built from
// broken power laws, with seeded instability failures.
struct OracleConfig {
    double lis_norm = 1.8e4;          // A in J_LIS = A R^(-gamma)
    double lis_index = 2.7;           // gamma
    double proton_mass_gev = 0.938272;
    double break_gv = 4.0;            // broken power-law break R_b
    double w_par = 0.2;               // parallel DC weight in the effective DC
    double w_perp = 0.8;              // perpendicular DC weight
    double phi0_gv = 0.35;            // modulation-potential normalization
    double p_fail = 0.02;             // simulated instability probability
    DomainBox box = DomainBox::defaults();
};

inline double lis_flux(double rigidity_gv, const OracleConfig& cfg = {}) {
    if (!(rigidity_gv > 0.0)) throw DomainError("lis_flux: rigidity must be positive");
    return cfg.lis_norm * std::pow(rigidity_gv, -cfg.lis_index);
}

inline double particle_beta(double rigidity_gv, double mass_gev) {
    return rigidity_gv / std::sqrt(rigidity_gv * rigidity_gv + mass_gev * mass_gev);
}

inline double kinetic_energy(double rigidity_gv, double mass_gev) {
    return std::sqrt(rigidity_gv * rigidity_gv + mass_gev * mass_gev) - mass_gev;
}

// Broken power law, continuous and equal to 1 at the break.
inline double broken_power(double rigidity_gv, double slope_below, double slope_above, double break_gv) {
    double x = rigidity_gv / break_gv;
    return rigidity_gv <= break_gv ? std::pow(x, slope_below) : std::pow(x, slope_above);
}

// Effective diffusion coefficient: beta times the weighted sum of the
// parallel and perpendicular broken power laws, scaled by k0_par.
inline double effective_dc(const HelioParams& z, double rigidity_gv, const OracleConfig& cfg = {}) {
    if (!(rigidity_gv > 0.0)) throw DomainError("effective_dc: rigidity must be positive");
    if (!(z.k0_par > 0.0)) throw DomainError("effective_dc: k0_par must be positive");
    double s_par = broken_power(rigidity_gv, z.a_par, z.b_par, cfg.break_gv);
    double s_perp = broken_power(rigidity_gv, z.a_perp, z.b_perp, cfg.break_gv);
    return z.k0_par * particle_beta(rigidity_gv, cfg.proton_mass_gev) * (cfg.w_par * s_par + cfg.w_perp * s_perp);
}

// Rigidity-dependent modulation potential in GV.
inline double modulation_potential(const HelioParams& z, double rigidity_gv, const OracleConfig& cfg = {}) {
    return cfg.phi0_gv * (z.v_sw / 400.0) * std::pow(z.i_hmf / 5.0, 0.8) * (1.0 + z.alpha / 90.0) /
           effective_dc(z, rigidity_gv, cfg);
}

namespace detail {

// Validity box: the sampling box widened by one full width per side, clamped
// to hard physical floors. Returns the name of the first offending field.
inline std::optional<std::string> validity_violation(const HelioParams& z, const DomainBox& box) {
    static const std::array<double, kNumInputs> hard_lo = {0.0, 1e-6, 1e-6, 1e-6, 0.0, 0.0, 0.0, 0.0};
    static const std::array<double, kNumInputs> hard_hi = {90.0, 1e9, 1e9, 1e9, 10.0, 10.0, 10.0, 10.0};
    auto a = z.to_array();
    for (std::size_t i = 0; i < kNumInputs; ++i) {
        double w = box.upper[i] - box.lower[i];
        double lo = std::max(box.lower[i] - w, hard_lo[i]);
        double hi = std::min(box.upper[i] + w, hard_hi[i]);
        if (!std::isfinite(a[i]) || a[i] < lo || a[i] > hi) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s=%g outside validity range [%g, %g]",
                          HelioParams::names()[i].c_str(), a[i], lo, hi);
            return std::string(buf);
        }
    }
    return std::nullopt;
}

}  // namespace detail

// Force-field solve without failure injection. Throws DomainError outside
// the validity box.
inline FluxSpectrum solve_flux_exact(const HelioParams& z, const OracleConfig& cfg = {}) {
    if (auto bad = detail::validity_violation(z, cfg.box)) throw DomainError("solve_flux: " + *bad);
    const double m = cfg.proton_mass_gev;
    FluxSpectrum out;
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        double r = rigidity_grid().values[i];
        double phi = modulation_potential(z, r, cfg);
        double t0 = kinetic_energy(r, m);
        double t1 = kinetic_energy(r + phi, m);
        double kinematic = (t0 * (t0 + 2.0 * m)) / (t1 * (t1 + 2.0 * m));
        out.flux[i] = lis_flux(r + phi, cfg) * kinematic;
        if (!(out.flux[i] > 0.0) || !std::isfinite(out.flux[i]))
            throw NumericError("solve_flux produced a non-positive flux value");
    }
    return out;
}

// A solve that fails with probability p_fail, emulating the numerical
// instabilities of the real solver. nullopt marks an unstable solution.
inline std::optional<FluxSpectrum> solve_flux(const HelioParams& z, Rng& rng, const OracleConfig& cfg = {}) {
    if (rng.uniform() < cfg.p_fail) return std::nullopt;
    return solve_flux_exact(z, cfg);
}

// Uniform draws over the box, per-row substreams, failed solves dropped,
// seeded 90/10 shuffle split. Targets are stored as log10 flux.
inline Dataset generate_dataset(std::size_t n, const DomainBox& box, std::uint64_t seed, double p_fail,
                                OracleConfig cfg = {}) {
    if (n < 100) throw ConfigError("generate_dataset: n must be at least 100");
    for (std::size_t i = 0; i < kNumInputs; ++i)
        if (!(box.upper[i] > box.lower[i])) throw ConfigError("generate_dataset: box has non-positive volume");
    cfg.box = box;
    cfg.p_fail = p_fail;

    Dataset ds;
    std::vector<double> in_rows, tg_rows;
    std::size_t n_failed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Rng row_rng = Rng::substream(seed, i);
        std::array<double, kNumInputs> a;
        for (std::size_t j = 0; j < kNumInputs; ++j) a[j] = row_rng.uniform(box.lower[j], box.upper[j]);
        auto spec = solve_flux(HelioParams::from_array(a), row_rng, cfg);
        if (!spec) {
            ++n_failed;
            continue;
        }
        for (double v : a) in_rows.push_back(v);
        for (double v : spec->flux) tg_rows.push_back(std::log10(v));
    }
    std::size_t kept = in_rows.size() / kNumInputs;
    std::size_t n_train = static_cast<std::size_t>(std::llround(0.9 * static_cast<double>(kept)));
    if (n_train == 0 || n_train == kept) throw ConfigError("generate_dataset: too few rows for a 90/10 split");

    std::vector<std::size_t> order(kept);
    for (std::size_t i = 0; i < kept; ++i) order[i] = i;
    Rng shuffle_rng = Rng::substream(seed, n + 1);  // distinct from every row stream
    shuffle_rng.shuffle(order);
    ds.split.assign(kept, static_cast<std::uint8_t>(Split::test));
    for (std::size_t i = 0; i < n_train; ++i) ds.split[order[i]] = static_cast<std::uint8_t>(Split::train);

    ds.inputs = Mat(kept, kNumInputs);
    ds.inputs.data = std::move(in_rows);
    ds.targets = Mat(kept, kNumRigidityBins);
    ds.targets.data = std::move(tg_rows);
    ds.meta.seed = seed;
    ds.meta.p_fail = p_fail;
    ds.meta.n_requested = n;
    ds.meta.n_failed = n_failed;
    ds.meta.box_lower.assign(box.lower.begin(), box.lower.end());
    ds.meta.box_upper.assign(box.upper.begin(), box.upper.end());
    for (const auto& name : HelioParams::names()) ds.meta.input_names.push_back(name);
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "logflux_%02zu", i);
        ds.meta.target_names.emplace_back(buf);
    }
    ds.meta.targets_log10 = true;
    return ds;
}

// Synthetic observation: truth perturbed by rel_sigma relative Gaussian
// noise, with sigma set to rel_sigma * truth per bin.
inline FluxSpectrum synthesize_observation(const FluxSpectrum& truth, double rel_sigma, Rng& rng) {
    if (!(rel_sigma > 0.0)) throw ConfigError("synthesize_observation: rel_sigma must be positive");
    FluxSpectrum obs;
    obs.sigma.emplace();
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        double f;
        do {
            f = truth.flux[i] * (1.0 + rel_sigma * rng.normal());
        } while (!(f > 0.0));
        obs.flux[i] = f;
        (*obs.sigma)[i] = rel_sigma * truth.flux[i];
    }
    return obs;
}

// ---------------------------------------------------------------------------
// Observed-spectrum file: CSV rows of (rigidity_gv, flux, sigma).

inline void write_observed_csv(const std::string& path, const FluxSpectrum& obs) {
    if (!obs.sigma) throw IoError("observed spectrum requires per-bin sigma");
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "rigidity_gv,flux,sigma\n";
    for (std::size_t i = 0; i < kNumRigidityBins; ++i)
        f << detail::fmt_g17(rigidity_grid().values[i]) << "," << detail::fmt_g17(obs.flux[i]) << ","
          << detail::fmt_g17((*obs.sigma)[i]) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

inline FluxSpectrum read_observed_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open observed-spectrum file " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty observed-spectrum file " + path);
    FluxSpectrum obs;
    obs.sigma.emplace();
    std::size_t i = 0;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (i >= kNumRigidityBins) throw IoError("observed-spectrum file has more than 32 rows: " + path);
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 3) throw IoError("observed-spectrum row needs 3 columns in " + path);
        double r = detail::parse_double(cells[0], path);
        if (std::abs(r - rigidity_grid().values[i]) > 1e-6 * rigidity_grid().values[i])
            throw IoError("observed-spectrum rigidity mismatch at row " + std::to_string(i) + " in " + path);
        obs.flux[i] = detail::parse_double(cells[1], path);
        (*obs.sigma)[i] = detail::parse_double(cells[2], path);
        if (!(obs.flux[i] > 0.0)) throw NumericError("observed flux must be positive (row " + std::to_string(i) + ")");
        if (!((*obs.sigma)[i] > 0.0)) throw NumericError("observed sigma must be positive (row " + std::to_string(i) + ")");
        ++i;
    }
    if (i != kNumRigidityBins)
        throw IoError("observed-spectrum file has " + std::to_string(i) + " rows, expected 32: " + path);
    return obs;
}

}  // namespace heliomc
