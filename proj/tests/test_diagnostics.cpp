#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "heliomc/diagnostics.hpp"
#include "heliomc/rng.hpp"

using namespace heliomc;

namespace {

Vec iid_normal(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return rng.normal_vec(n);
}

Vec ar1(std::size_t n, double phi, std::uint64_t seed) {
    Rng rng(seed);
    Vec v(n);
    v[0] = rng.normal() / std::sqrt(1.0 - phi * phi);
    for (std::size_t i = 1; i < n; ++i) v[i] = phi * v[i - 1] + rng.normal();
    return v;
}

MlpModel tiny_surrogate(std::uint64_t seed) {
    MlpModel m = make_mlp({8, 16, 32});
    Rng rng(seed);
    init_lecun(m, rng);
    for (double& w : m.weights[1].data) w *= 0.2;
    return m;
}

FixedContext context_for(const MlpModel& m, const SampledParams& z_true, double rel_sigma,
                         std::uint64_t seed) {
    FixedContext ctx;
    Vec pred = forward(m, embed(z_true, ctx));
    Rng rng(seed);
    ctx.observed.sigma.emplace();
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        double truth = delog10(pred[i]);
        double f;
        do {
            f = truth * (1.0 + rel_sigma * rng.normal());
        } while (!(f > 0.0));
        ctx.observed.flux[i] = f;
        (*ctx.observed.sigma)[i] = rel_sigma * truth;
    }
    return ctx;
}

}  // namespace

TEST_CASE("acf: lag zero is exactly one and all values bounded") {
    Vec x = iid_normal(5000, 1);
    AcfSeries a = autocorrelation(x, 100);
    CHECK(a.values[0] == 1.0);
    for (double v : a.values) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("acf: iid series decorrelates at the 1/sqrt(N) level") {
    Vec x = iid_normal(100000, 2);
    AcfSeries a = autocorrelation(x, 50);
    for (std::size_t k = 1; k <= 50; ++k) CHECK(std::abs(a.values[k]) < 0.02);
}

TEST_CASE("acf: AR(1) matches the analytic autocorrelation") {
    Vec x = ar1(100000, 0.9, 3);
    AcfSeries a = autocorrelation(x, 20);
    CHECK(a.values[1] == doctest::Approx(0.9).epsilon(0.025));
    for (std::size_t k : {2, 5, 10})
        CHECK(std::abs(a.values[k] - std::pow(0.9, static_cast<double>(k))) < 0.05);
}

TEST_CASE("acf: constant series and short series are rejected") {
    Vec c(100, 3.0);
    CHECK_THROWS_AS(autocorrelation(c, 10), NumericError);
    Vec s = iid_normal(10, 4);
    CHECK_THROWS_AS(autocorrelation(s, 20), NumericError);
}

TEST_CASE("ess: iid series is worth about its length") {
    Vec x = iid_normal(10000, 5);
    double ess = effective_sample_size(x);
    CHECK(ess > 8500.0);
    CHECK(ess <= 10000.0);
}

TEST_CASE("ess: AR(1) matches the analytic integrated autocorrelation time") {
    Vec x = ar1(100000, 0.9, 6);
    double ess = effective_sample_size(x);
    double expect = 100000.0 * (1.0 - 0.9) / (1.0 + 0.9);
    CHECK(std::abs(ess - expect) < 0.30 * expect);
}

TEST_CASE("ess: repeated-pair series is worth about half its length") {
    Vec base = iid_normal(5000, 7);
    Vec x;
    for (double v : base) {
        x.push_back(v);
        x.push_back(v);
    }
    double ess = effective_sample_size(x);
    CHECK(ess > 0.4 * x.size());
    CHECK(ess < 0.6 * x.size());
}

TEST_CASE("ess: clamped to (0, N] even for pathological series") {
    // strongly anticorrelated series would push tau below 1
    Vec x(2000);
    Rng rng(8);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2 == 0 ? 1.0 : -1.0) + 0.01 * rng.normal();
    double ess = effective_sample_size(x);
    CHECK(ess > 0.0);
    CHECK(ess <= 2000.0);
    CHECK_THROWS_AS(effective_sample_size(Vec(100, 1.0)), NumericError);
}

TEST_CASE("credible interval: gaussian quantiles at 68.3% and 95.4%") {
    Vec x = iid_normal(1000000, 9);
    CredibleInterval ci68 = credible_interval_1d(x, 0.683);
    CHECK(std::abs(ci68.lo + 1.0) < 0.02);
    CHECK(std::abs(ci68.hi - 1.0) < 0.02);
    CredibleInterval ci95 = credible_interval_1d(x, 0.954);
    CHECK(std::abs(ci95.lo + 2.0) < 0.03);
    CHECK(std::abs(ci95.hi - 2.0) < 0.03);
}

TEST_CASE("credible interval: nesting, degenerate input, too-few samples") {
    Vec x = iid_normal(5000, 10);
    CredibleInterval a = credible_interval_1d(x, 0.5);
    CredibleInterval b = credible_interval_1d(x, 0.9);
    CHECK(b.lo <= a.lo);
    CHECK(a.hi <= b.hi);
    Vec nearly_const(200, 5.0);
    nearly_const[0] = 7.5;  // all fives except one
    CredibleInterval d = credible_interval_1d(nearly_const, 0.683);
    CHECK(d.degenerate);
    CHECK(d.lo == d.hi);
    CHECK_THROWS_AS(credible_interval_1d(Vec(50, 1.0), 0.683), NumericError);
    CHECK_THROWS_AS(credible_interval_1d(x, 1.5), ConfigError);
}

TEST_CASE("credible region 2d: gaussian HDR area matches the analytic value") {
    Rng rng(11);
    const std::size_t n = 1000000;
    Vec x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.normal();
        y[i] = rng.normal();
    }
    Histogram2d h = credible_region_2d(x, y, 0.954, 50);
    double analytic = 2.0 * 3.14159265358979323846 * (-std::log(1.0 - 0.954));  // ~19.35
    CHECK(std::abs(h.region_area() - analytic) < 0.15 * analytic);
    CHECK(h.mass_captured >= 0.954);
}

TEST_CASE("credible region 2d: point mass and near-total mass") {
    Vec x(500, 1.5), y(500, -2.0);
    Histogram2d h = credible_region_2d(x, y, 0.954, 20);
    std::size_t occupied = 0;
    for (double d : h.density) occupied += (d >= h.threshold && d > 0.0);
    CHECK(occupied == 1);

    Vec gx = iid_normal(20000, 12), gy = iid_normal(20000, 13);
    Histogram2d h2 = credible_region_2d(gx, gy, 0.999, 30);
    CHECK(h2.mass_captured >= 0.999);
    CHECK_THROWS_AS(credible_region_2d(gx, Vec(10, 0.0), 0.9, 30), DimensionError);
}

TEST_CASE("posterior predictive: single-sample chain degenerates to the point prediction") {
    MlpModel m = tiny_surrogate(14);
    SampledParams z{1.5, 0.7, 1.1, 0.8, 1.2};
    FixedContext ctx = context_for(m, z, 0.03, 15);
    Chain chain;
    chain.samples = Mat(1, kNumSampled);
    auto za = z.to_array();
    std::copy(za.begin(), za.end(), chain.samples.row(0));
    chain.log_targets = {0.0};
    chain.raw_step_index = {1};
    PredictiveBand band = posterior_predictive(chain, m, ctx);
    Vec pred = predict_linear_flux(m, embed(z, ctx));
    for (std::size_t j = 0; j < kNumRigidityBins; ++j) {
        CHECK(band.lo68[j] == pred[j]);
        CHECK(band.hi95[j] == pred[j]);
        CHECK(band.map_flux[j] == pred[j]);
    }
}

TEST_CASE("posterior predictive: 68% band nests inside the 95% band") {
    MlpModel m = tiny_surrogate(16);
    FixedContext ctx = context_for(m, SampledParams{}, 0.03, 17);
    Rng rng(18);
    const std::size_t n = 400;
    Chain chain;
    chain.samples = Mat(n, kNumSampled);
    chain.log_targets.resize(n);
    chain.raw_step_index.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        chain.samples(i, 0) = rng.uniform(0.5, 5.0);
        chain.samples(i, 1) = rng.uniform(0.3, 1.5);
        chain.samples(i, 2) = rng.uniform(0.3, 2.0);
        chain.samples(i, 3) = rng.uniform(0.3, 1.5);
        chain.samples(i, 4) = rng.uniform(0.3, 2.0);
        chain.log_targets[i] = rng.normal();
        chain.raw_step_index[i] = i + 1;
    }
    PredictiveBand band = posterior_predictive(chain, m, ctx);
    for (std::size_t j = 0; j < kNumRigidityBins; ++j) {
        CHECK(band.lo95[j] <= band.lo68[j]);
        CHECK(band.hi68[j] <= band.hi95[j]);
        CHECK(band.lo68[j] <= band.hi68[j]);
    }
}

TEST_CASE("summarize: identical samples collapse map, mean, and marginal max") {
    MlpModel m = tiny_surrogate(19);
    SampledParams z{2.0, 0.9, 1.0, 0.8, 1.4};
    FixedContext ctx = context_for(m, z, 0.03, 20);
    const std::size_t n = 200;
    Chain chain;
    chain.samples = Mat(n, kNumSampled);
    chain.log_targets.assign(n, -1.5);
    chain.raw_step_index.resize(n);
    auto za = z.to_array();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(za.begin(), za.end(), chain.samples.row(i));
        chain.raw_step_index[i] = i + 1;
    }
    PosteriorSummary s = summarize(chain, m, ctx);
    for (std::size_t j = 0; j < kNumSampled; ++j) {
        CHECK(s.map_point[j] == za[j]);
        CHECK(s.means[j] == doctest::Approx(za[j]).epsilon(1e-12));
        CHECK(std::abs(s.marginal_maxima[j] - za[j]) < 0.51);  // within the token bin width
        CHECK(s.ci_1d[j].degenerate);
    }
}

TEST_CASE("summarize: known gaussian chain recovers means; MAP maximizes the stored target") {
    MlpModel m = tiny_surrogate(21);
    FixedContext ctx = context_for(m, SampledParams{}, 0.03, 22);
    Rng rng(23);
    const std::size_t n = 20000;
    Vec mu = {2.0, 0.9, 1.2, 0.8, 1.1};
    Vec sd = {0.3, 0.1, 0.2, 0.1, 0.15};
    Chain chain;
    chain.samples = Mat(n, kNumSampled);
    chain.log_targets.resize(n);
    chain.raw_step_index.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < kNumSampled; ++j) chain.samples(i, j) = mu[j] + sd[j] * rng.normal();
        chain.log_targets[i] = rng.normal();
        chain.raw_step_index[i] = i + 1;
    }
    PosteriorSummary s = summarize(chain, m, ctx);
    for (std::size_t j = 0; j < kNumSampled; ++j) {
        double se = sd[j] / std::sqrt(static_cast<double>(n));
        CHECK(std::abs(s.means[j] - mu[j]) < 4.0 * se);
        CHECK(std::abs(s.marginal_maxima[j] - mu[j]) < 3.0 * sd[j] / 10.0);
    }
    for (double lt : chain.log_targets) CHECK(s.map_log_target >= lt);
    CHECK(s.regions_2d.size() == 10);  // all parameter pairs
}

TEST_CASE("headline efficiency property: NUTS lag-1 vs un-thinned RWMH lag-100") {
    // synthetic surrogate posterior with a box-standardized target; a shallow
    // likelihood keeps the posterior wide next to the 1e-2 proposal scale,
    // which is the regime the comparison is about
    MlpModel m = tiny_surrogate(24);
    DomainBox box = DomainBox::defaults();
    for (std::size_t j = 0; j < kNumInputs; ++j) {
        m.input_center[j] = 0.5 * (box.lower[j] + box.upper[j]);
        m.input_half[j] = 0.5 * (box.upper[j] - box.lower[j]);
    }
    SampledParams z_true{2.2, 0.8, 1.1, 0.9, 1.3};
    FixedContext ctx = context_for(m, z_true, 0.5, 25);
    PriorBox prior = PriorBox::from_model(m);
    SurrogatePosterior post(m, ctx, prior);
    BoxStandardizer std_map = BoxStandardizer::from_model(m);

    Target target;
    target.value = [&](const Vec& u) { return post.eval(SampledParams::from_vec(std_map.from_unit(u))); };
    target.value_grad = [&](const Vec& u) {
        PosteriorEval pe = post.eval_with_grad(SampledParams::from_vec(std_map.from_unit(u)));
        TargetEval e;
        e.value = pe.log_posterior;
        e.grad.resize(kNumSampled);
        for (std::size_t i = 0; i < kNumSampled; ++i) e.grad[i] = pe.grad[i] * std_map.half[i];
        return e;
    };

    Vec init = std_map.to_unit(z_true.to_vec());
    ChainConfig nuts_cfg;
    nuts_cfg.sampler = SamplerKind::nuts;
    nuts_cfg.burn_in = 500;
    nuts_cfg.n_samples = 1500;
    nuts_cfg.thin = 1;
    nuts_cfg.seed = 26;
    Chain nuts_chain = run_chain(nuts_cfg, target, init);

    ChainConfig rw_cfg;
    rw_cfg.sampler = SamplerKind::rwmh;
    rw_cfg.rwmh_scale = 1e-2;
    rw_cfg.burn_in = 2000;
    rw_cfg.n_samples = 30000;
    rw_cfg.thin = 1;  // un-thinned
    rw_cfg.seed = 27;
    Chain rw_chain = run_chain(rw_cfg, target, init);

    Vec nuts_k0(nuts_chain.samples.rows), rw_k0(rw_chain.samples.rows);
    for (std::size_t i = 0; i < nuts_k0.size(); ++i) nuts_k0[i] = nuts_chain.samples(i, 0);
    for (std::size_t i = 0; i < rw_k0.size(); ++i) rw_k0[i] = rw_chain.samples(i, 0);
    double nuts_lag1 = autocorrelation(nuts_k0, 1).values[1];
    double rw_lag100 = autocorrelation(rw_k0, 100).values[100];
    CHECK(nuts_lag1 <= rw_lag100);
}
