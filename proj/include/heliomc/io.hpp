#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "heliomc/common.hpp"
#include "heliomc/dataset.hpp"
#include "heliomc/diagnostics.hpp"
#include "heliomc/forward_model.hpp"
#include "heliomc/mlp.hpp"
#include "heliomc/samplers.hpp"

namespace heliomc {

inline std::string chain_meta_path(const std::string& csv_path) { return csv_path + ".meta.json"; }

inline void write_chain_csv(const std::string& path, const Chain& chain,
                            const std::vector<std::string>& param_names) {
    if (param_names.size() != chain.samples.cols)
        throw DimensionError("write_chain_csv: name count does not match chain dimension");
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    for (const auto& n : param_names) f << n << ",";
    f << "log_target,raw_step_index\n";
    for (std::size_t i = 0; i < chain.samples.rows; ++i) {
        for (std::size_t j = 0; j < chain.samples.cols; ++j)
            f << detail::fmt_g17(chain.samples(i, j)) << ",";
        f << detail::fmt_g17(chain.log_targets[i]) << "," << chain.raw_step_index[i] << "\n";
    }
    if (!f) throw IoError("write failed: " + path);

    nlohmann::json meta;
    meta["seed"] = chain.config.seed;
    meta["sampler"] = sampler_name(chain.config.sampler);
    meta["n_samples"] = chain.config.n_samples;
    meta["burn_in"] = chain.config.burn_in;
    meta["thin"] = chain.config.thin;
    meta["rwmh_scale"] = chain.config.rwmh_scale;
    meta["max_tree_depth"] = chain.config.max_tree_depth;
    meta["target_accept"] = chain.config.target_accept;
    meta["stats"] = {
        {"raw_steps", chain.stats.raw_steps},
        {"burn_in_steps", chain.stats.burn_in_steps},
        {"accept_rate", chain.stats.accept_rate},
        {"divergences", chain.stats.divergences},
        {"divergences_adapt", chain.stats.divergences_adapt},
        {"step_size", chain.stats.step_size},
        {"mean_tree_depth", chain.stats.mean_tree_depth},
        {"max_depth_hits", chain.stats.max_depth_hits},
        {"n_grad_evals", chain.stats.n_grad_evals},
        {"n_value_evals", chain.stats.n_value_evals},
    };
    meta["adapt_trace"] = chain.stats.adapt_trace;
    std::ofstream mf(chain_meta_path(path));
    if (!mf) throw IoError("cannot open " + chain_meta_path(path) + " for writing");
    mf << meta.dump(2) << "\n";
}

inline Chain read_chain_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open chain file " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty chain file " + path);
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[header.size() - 2] != "log_target" || header.back() != "raw_step_index")
        throw IoError("chain header malformed in " + path);
    const std::size_t dim = header.size() - 2;

    Chain chain;
    std::vector<double> buf;
    std::size_t rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw IoError("chain row width mismatch in " + path);
        for (std::size_t j = 0; j < dim; ++j) buf.push_back(detail::parse_double(cells[j], path));
        chain.log_targets.push_back(detail::parse_double(cells[dim], path));
        chain.raw_step_index.push_back(static_cast<std::size_t>(detail::parse_double(cells[dim + 1], path)));
        ++rows;
    }
    chain.samples = Mat(rows, dim);
    chain.samples.data = std::move(buf);

    std::ifstream mf(chain_meta_path(path));
    if (mf) {
        nlohmann::json meta = nlohmann::json::parse(mf, nullptr, true, true);
        chain.config.seed = meta.value("seed", std::uint64_t{0});
        chain.config.sampler = sampler_from_name(meta.value("sampler", std::string("nuts")));
        chain.config.n_samples = meta.value("n_samples", rows);
        chain.config.burn_in = meta.value("burn_in", std::size_t{0});
        chain.config.thin = meta.value("thin", std::size_t{1});
        chain.config.rwmh_scale = meta.value("rwmh_scale", 1e-2);
        chain.config.max_tree_depth = meta.value("max_tree_depth", 10);
        chain.config.target_accept = meta.value("target_accept", 0.8);
        if (meta.contains("stats")) {
            const auto& st = meta["stats"];
            chain.stats.raw_steps = st.value("raw_steps", std::size_t{0});
            chain.stats.burn_in_steps = st.value("burn_in_steps", std::size_t{0});
            chain.stats.accept_rate = st.value("accept_rate", 0.0);
            chain.stats.divergences = st.value("divergences", std::size_t{0});
            chain.stats.divergences_adapt = st.value("divergences_adapt", std::size_t{0});
            chain.stats.step_size = st.value("step_size", 0.0);
            chain.stats.mean_tree_depth = st.value("mean_tree_depth", 0.0);
            chain.stats.max_depth_hits = st.value("max_depth_hits", std::size_t{0});
            chain.stats.n_grad_evals = st.value("n_grad_evals", std::size_t{0});
            chain.stats.n_value_evals = st.value("n_value_evals", std::size_t{0});
        }
        chain.stats.adapt_trace = meta.value("adapt_trace", Vec{});
    }
    return chain;
}

inline void write_history_csv(const std::string& path, const TrainHistory& hist) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "epoch,train_loss,test_loss,learning_rate\n";
    for (std::size_t i = 0; i < hist.epochs.size(); ++i)
        f << i << "," << detail::fmt_g17(hist.epochs[i].train_loss) << ","
          << detail::fmt_g17(hist.epochs[i].test_loss) << ","
          << detail::fmt_g17(hist.epochs[i].learning_rate) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Plot-data emissions for `diagnose`.

inline void write_acf_csv(const std::string& path, const Chain& chain,
                          const std::vector<std::string>& param_names, std::size_t max_lag) {
    std::vector<AcfSeries> acfs;
    for (std::size_t j = 0; j < chain.samples.cols; ++j) {
        Vec col(chain.samples.rows);
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = chain.samples(i, j);
        acfs.push_back(autocorrelation(col, max_lag));
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "lag";
    for (const auto& n : param_names) f << ",acf_" << n;
    f << "\n";
    for (std::size_t k = 0; k <= max_lag; ++k) {
        f << k;
        for (const auto& a : acfs) f << "," << detail::fmt_g17(a.values[k]);
        f << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

inline void write_hist1d_csv(const std::string& path, const Vec& samples, std::size_t bins = 100) {
    Histogram1d h = histogram_1d(samples, bins);
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "bin_center,count\n";
    double w = (h.hi - h.lo) / static_cast<double>(h.counts.size());
    for (std::size_t i = 0; i < h.counts.size(); ++i)
        f << detail::fmt_g17(h.lo + (static_cast<double>(i) + 0.5) * w) << "," << h.counts[i] << "\n";
}

inline void write_hist2d_csv(const std::string& path, const Histogram2d& h) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "# threshold_density," << detail::fmt_g17(h.threshold) << "\n";
    f << "x_center,y_center,density,in_region\n";
    double wx = (h.x_max - h.x_min) / static_cast<double>(h.bins);
    double wy = (h.y_max - h.y_min) / static_cast<double>(h.bins);
    for (std::size_t i = 0; i < h.bins; ++i)
        for (std::size_t j = 0; j < h.bins; ++j) {
            double d = h.density[i * h.bins + j];
            f << detail::fmt_g17(h.x_min + (static_cast<double>(i) + 0.5) * wx) << ","
              << detail::fmt_g17(h.y_min + (static_cast<double>(j) + 0.5) * wy) << ","
              << detail::fmt_g17(d) << "," << (d >= h.threshold ? 1 : 0) << "\n";
        }
}

inline void write_predictive_band_csv(const std::string& path, const PredictiveBand& band,
                                      const FluxSpectrum& observed) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "rigidity_gv,lo68,hi68,lo95,hi95,map_flux,observed,sigma\n";
    for (std::size_t i = 0; i < kNumRigidityBins; ++i) {
        f << detail::fmt_g17(rigidity_grid().values[i]) << "," << detail::fmt_g17(band.lo68[i]) << ","
          << detail::fmt_g17(band.hi68[i]) << "," << detail::fmt_g17(band.lo95[i]) << ","
          << detail::fmt_g17(band.hi95[i]) << "," << detail::fmt_g17(band.map_flux[i]) << ","
          << detail::fmt_g17(observed.flux[i]) << ","
          << detail::fmt_g17(observed.sigma ? (*observed.sigma)[i] : 0.0) << "\n";
    }
}

inline void write_summary_txt(const std::string& path, const PosteriorSummary& s,
                              const std::vector<std::string>& param_names) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "parameter  map  mean  marginal_max  ci68_lo  ci68_hi\n";
    for (std::size_t j = 0; j < param_names.size(); ++j) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-9s  %.6g  %.6g  %.6g  %.6g  %.6g\n", param_names[j].c_str(),
                      s.map_point[j], s.means[j], s.marginal_maxima[j], s.ci_1d[j].lo, s.ci_1d[j].hi);
        f << buf;
    }
    f << "map_log_target  " << detail::fmt_g17(s.map_log_target) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

// Everything `diagnose` emits: summary table, ACF table, marginal histograms,
// pair HDR grids, predictive bands.
inline void write_summary_outputs(const std::string& out_dir, const PosteriorSummary& s, const Chain& chain,
                                  const std::vector<std::string>& param_names, const FluxSpectrum& observed) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto p = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
    write_summary_txt(p("summary.txt"), s, param_names);
    std::size_t max_lag = std::min<std::size_t>(1000, chain.samples.rows > 8 ? chain.samples.rows / 5 : 1);
    write_acf_csv(p("acf.csv"), chain, param_names, max_lag);
    for (std::size_t j = 0; j < param_names.size(); ++j) {
        Vec col(chain.samples.rows);
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = chain.samples(i, j);
        write_hist1d_csv(p("hist1d_" + param_names[j] + ".csv"), col);
    }
    for (const auto& region : s.regions_2d)
        write_hist2d_csv(p("hist2d_" + param_names[region.i] + "_" + param_names[region.j] + ".csv"),
                         region.hist);
    write_predictive_band_csv(p("predictive_band.csv"), s.bands, observed);
}

}  // namespace heliomc
