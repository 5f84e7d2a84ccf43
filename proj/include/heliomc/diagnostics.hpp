#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "heliomc/common.hpp"
#include "heliomc/mlp.hpp"
#include "heliomc/posterior.hpp"
#include "heliomc/samplers.hpp"

namespace heliomc {

struct AcfSeries {
    std::size_t max_lag = 0;
    Vec values;  // values[k] = rho(k), k = 0..max_lag
};

// Sample autocorrelation with the biased normalization (full-series variance
// in the denominator), so |rho(k)| <= 1 by Cauchy-Schwarz.
inline AcfSeries autocorrelation(const Vec& series, std::size_t max_lag) {
    const std::size_t n = series.size();
    if (n < max_lag + 2) throw NumericError("autocorrelation: series too short for requested max_lag");
    double m = mean(series);
    double denom = 0.0;
    for (double x : series) denom += (x - m) * (x - m);
    if (denom == 0.0) throw NumericError("autocorrelation: constant series");
    AcfSeries out;
    out.max_lag = max_lag;
    out.values.resize(max_lag + 1);
    for (std::size_t k = 0; k <= max_lag; ++k) {
        double s = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) s += (series[t] - m) * (series[t + k] - m);
        out.values[k] = s / denom;
        if (!(std::abs(out.values[k]) <= 1.0 + 1e-12))
            throw NumericError("autocorrelation: |rho| exceeded 1");
    }
    out.values[0] = 1.0;  // exact by definition
    return out;
}

// N / (1 + 2 sum rho(k)) with Geyer's initial-positive-sequence truncation:
// lags are consumed in pairs while the pair sums stay positive. Clamped to
// (0, N].
inline double effective_sample_size(const Vec& series) {
    const std::size_t n = series.size();
    if (n < 4) throw NumericError("effective_sample_size: series too short");
    double m = mean(series);
    double denom = 0.0;
    for (double x : series) denom += (x - m) * (x - m);
    if (denom == 0.0) throw NumericError("effective_sample_size: constant series");

    auto rho = [&](std::size_t k) {
        double s = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) s += (series[t] - m) * (series[t + k] - m);
        return s / denom;
    };

    double tau = 1.0;
    for (std::size_t k = 1; k + 1 < n; k += 2) {
        double pair = rho(k) + rho(k + 1);
        if (pair <= 0.0) break;
        tau += 2.0 * pair;
    }
    double ess = static_cast<double>(n) / tau;
    ess = std::min(ess, static_cast<double>(n));
    if (!(ess > 0.0)) ess = std::numeric_limits<double>::min();
    return ess;
}

struct CredibleInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool degenerate = false;  // zero-width interval (near-constant sample)
    double width() const { return hi - lo; }
};

// Equal-tailed interval at the given probability mass.
inline CredibleInterval credible_interval_1d(Vec samples, double mass) {
    if (!(mass > 0.0 && mass < 1.0)) throw ConfigError("credible interval mass must be in (0,1)");
    if (samples.size() < 100) throw NumericError("credible_interval_1d: needs at least 100 samples");
    std::sort(samples.begin(), samples.end());
    CredibleInterval ci;
    ci.lo = quantile_sorted(samples, 0.5 * (1.0 - mass));
    ci.hi = quantile_sorted(samples, 1.0 - 0.5 * (1.0 - mass));
    ci.degenerate = !(ci.lo < ci.hi);
    return ci;
}

// 2-D histogram with the highest-density-region threshold: the largest
// density level whose super-level set holds at least `mass` of the samples.
struct Histogram2d {
    double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
    std::size_t bins = 0;
    std::vector<double> density;  // bins x bins, row-major in x
    double threshold = 0.0;
    double mass_captured = 0.0;

    double bin_area() const {
        return (x_max - x_min) / static_cast<double>(bins) * (y_max - y_min) / static_cast<double>(bins);
    }
    // Area of the super-level set at the threshold.
    double region_area() const {
        std::size_t cells = 0;
        for (double d : density) cells += (d >= threshold);
        return static_cast<double>(cells) * bin_area();
    }
};

inline Histogram2d credible_region_2d(const Vec& x, const Vec& y, double mass, std::size_t bins = 50) {
    if (x.size() != y.size()) throw DimensionError("credible_region_2d: length mismatch");
    if (x.empty()) throw NumericError("credible_region_2d: empty sample");
    if (bins < 10) throw ConfigError("credible_region_2d: bins must be >= 10");
    if (!(mass > 0.0 && mass < 1.0)) throw ConfigError("credible region mass must be in (0,1)");

    Histogram2d h;
    h.bins = bins;
    auto [xmin_it, xmax_it] = std::minmax_element(x.begin(), x.end());
    auto [ymin_it, ymax_it] = std::minmax_element(y.begin(), y.end());
    h.x_min = *xmin_it;
    h.x_max = *xmax_it;
    h.y_min = *ymin_it;
    h.y_max = *ymax_it;
    // degenerate ranges get a token width so every sample lands in one bin
    if (!(h.x_max > h.x_min)) h.x_max = h.x_min + 1.0;
    if (!(h.y_max > h.y_min)) h.y_max = h.y_min + 1.0;

    const double n = static_cast<double>(x.size());
    std::vector<std::size_t> counts(bins * bins, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto bx = static_cast<std::size_t>(std::min(
            static_cast<double>(bins - 1), std::floor((x[i] - h.x_min) / (h.x_max - h.x_min) * bins)));
        auto by = static_cast<std::size_t>(std::min(
            static_cast<double>(bins - 1), std::floor((y[i] - h.y_min) / (h.y_max - h.y_min) * bins)));
        ++counts[bx * bins + by];
    }
    h.density.resize(counts.size());
    const double inv_area = 1.0 / (n * h.bin_area());
    for (std::size_t i = 0; i < counts.size(); ++i) h.density[i] = static_cast<double>(counts[i]) * inv_area;

    std::vector<std::size_t> sorted = counts;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    std::size_t cum = 0;
    std::size_t level = 0;
    for (std::size_t c : sorted) {
        cum += c;
        level = c;
        if (static_cast<double>(cum) >= mass * n) break;
    }
    h.threshold = static_cast<double>(level) * inv_area;
    h.mass_captured = static_cast<double>(cum) / n;
    return h;
}

struct Histogram1d {
    double lo = 0.0, hi = 0.0;
    std::vector<std::size_t> counts;

    double peak_center() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < counts.size(); ++i)
            if (counts[i] > counts[best]) best = i;
        double w = (hi - lo) / static_cast<double>(counts.size());
        return lo + (static_cast<double>(best) + 0.5) * w;
    }
};

inline Histogram1d histogram_1d(const Vec& samples, std::size_t bins = 100) {
    if (samples.empty()) throw NumericError("histogram_1d: empty sample");
    Histogram1d h;
    auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    h.lo = *lo_it;
    h.hi = *hi_it;
    if (!(h.hi > h.lo)) h.hi = h.lo + 1.0;
    h.counts.assign(bins, 0);
    for (double v : samples) {
        auto b = static_cast<std::size_t>(
            std::min(static_cast<double>(bins - 1), std::floor((v - h.lo) / (h.hi - h.lo) * bins)));
        ++h.counts[b];
    }
    return h;
}

// Per-rigidity-bin flux bands from the surrogate evaluated over the chain.
struct PredictiveBand {
    std::array<double, kNumRigidityBins> lo68{}, hi68{}, lo95{}, hi95{}, map_flux{};
};

namespace detail {
inline std::size_t chain_map_index(const Chain& chain) {
    if (chain.log_targets.empty()) throw NumericError("empty chain");
    std::size_t best = 0;
    for (std::size_t i = 1; i < chain.log_targets.size(); ++i)
        if (chain.log_targets[i] > chain.log_targets[best]) best = i;
    return best;
}
}  // namespace detail

inline PredictiveBand posterior_predictive(const Chain& chain, const MlpModel& model,
                                           const FixedContext& ctx) {
    const std::size_t n = chain.samples.rows;
    if (n == 0) throw NumericError("posterior_predictive: empty chain");
    if (chain.samples.cols != kNumSampled) throw DimensionError("posterior_predictive: chain must be 5-D");
    Mat flux(n, kNumRigidityBins);
    for (std::size_t i = 0; i < n; ++i) {
        SampledParams z = SampledParams::from_vec(Vec(chain.samples.row(i), chain.samples.row(i) + kNumSampled));
        Vec pred = predict_linear_flux(model, embed(z, ctx));
        std::copy(pred.begin(), pred.end(), flux.row(i));
    }
    std::size_t map_idx = detail::chain_map_index(chain);
    PredictiveBand band;
    Vec col(n);
    for (std::size_t j = 0; j < kNumRigidityBins; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = flux(i, j);
        std::sort(col.begin(), col.end());
        band.lo68[j] = quantile_sorted(col, 0.16);
        band.hi68[j] = quantile_sorted(col, 0.84);
        band.lo95[j] = quantile_sorted(col, 0.025);
        band.hi95[j] = quantile_sorted(col, 0.975);
        band.map_flux[j] = flux(map_idx, j);
    }
    return band;
}

struct PairRegion {
    std::size_t i = 0, j = 0;  // parameter indices
    Histogram2d hist;
};

struct PosteriorSummary {
    Vec map_point;         // sample with the highest stored log target
    double map_log_target = 0.0;
    Vec means;
    Vec marginal_maxima;   // peak of the 100-bin marginal histogram
    std::vector<CredibleInterval> ci_1d;  // 68.3% per parameter
    std::vector<PairRegion> regions_2d;   // 95.4% HDR for all parameter pairs
    PredictiveBand bands;
};

inline constexpr double kMass1d = 0.683;
inline constexpr double kMass2d = 0.954;

inline PosteriorSummary summarize(const Chain& chain, const MlpModel& model, const FixedContext& ctx,
                                  std::size_t bins_2d = 50) {
    const std::size_t n = chain.samples.rows;
    const std::size_t dim = chain.samples.cols;
    if (n == 0) throw NumericError("summarize: empty chain");
    PosteriorSummary s;
    std::size_t map_idx = detail::chain_map_index(chain);
    s.map_point.assign(chain.samples.row(map_idx), chain.samples.row(map_idx) + dim);
    s.map_log_target = chain.log_targets[map_idx];

    std::vector<Vec> cols(dim, Vec(n));
    for (std::size_t j = 0; j < dim; ++j)
        for (std::size_t i = 0; i < n; ++i) cols[j][i] = chain.samples(i, j);

    for (std::size_t j = 0; j < dim; ++j) {
        s.means.push_back(mean(cols[j]));
        s.marginal_maxima.push_back(histogram_1d(cols[j], 100).peak_center());
        s.ci_1d.push_back(credible_interval_1d(cols[j], kMass1d));
    }
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i + 1; j < dim; ++j)
            s.regions_2d.push_back({i, j, credible_region_2d(cols[i], cols[j], kMass2d, bins_2d)});
    s.bands = posterior_predictive(chain, model, ctx);
    return s;
}

}  // namespace heliomc
