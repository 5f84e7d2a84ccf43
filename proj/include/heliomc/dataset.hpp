#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "heliomc/common.hpp"

namespace heliomc {

enum class Split : std::uint8_t { train = 0, test = 1 };

struct DatasetMeta {
    std::uint64_t seed = 0;
    double p_fail = 0.0;
    std::size_t n_requested = 0;
    std::size_t n_failed = 0;
    Vec box_lower, box_upper;  // per-input sampling box
    std::vector<std::string> input_names;
    std::vector<std::string> target_names;
    bool targets_log10 = true;
};

struct Dataset {
    Mat inputs;   // N x n_in
    Mat targets;  // N x n_out
    std::vector<std::uint8_t> split;  // Split values, per row
    DatasetMeta meta;

    std::size_t size() const { return inputs.rows; }
    std::size_t n_train() const {
        std::size_t n = 0;
        for (auto s : split) n += (s == static_cast<std::uint8_t>(Split::train));
        return n;
    }
    std::size_t n_test() const { return size() - n_train(); }
};

namespace detail {

inline std::string fmt_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("could not parse number '" + s + "' in " + where);
    }
}

}  // namespace detail

inline std::string dataset_meta_path(const std::string& csv_path) { return csv_path + ".meta.json"; }

inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    for (std::size_t j = 0; j < ds.meta.input_names.size(); ++j) f << ds.meta.input_names[j] << ",";
    for (std::size_t j = 0; j < ds.meta.target_names.size(); ++j) f << ds.meta.target_names[j] << ",";
    f << "split\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.inputs.cols; ++j) f << detail::fmt_g17(ds.inputs(i, j)) << ",";
        for (std::size_t j = 0; j < ds.targets.cols; ++j) f << detail::fmt_g17(ds.targets(i, j)) << ",";
        f << (ds.split[i] == static_cast<std::uint8_t>(Split::train) ? "train" : "test") << "\n";
    }
    if (!f) throw IoError("write failed: " + path);

    nlohmann::json meta;
    meta["seed"] = ds.meta.seed;
    meta["p_fail"] = ds.meta.p_fail;
    meta["n_requested"] = ds.meta.n_requested;
    meta["n_failed"] = ds.meta.n_failed;
    meta["n_rows"] = ds.size();
    meta["box_lower"] = ds.meta.box_lower;
    meta["box_upper"] = ds.meta.box_upper;
    meta["input_names"] = ds.meta.input_names;
    meta["target_names"] = ds.meta.target_names;
    meta["targets_log10"] = ds.meta.targets_log10;
    std::ofstream mf(dataset_meta_path(path));
    if (!mf) throw IoError("cannot open " + dataset_meta_path(path) + " for writing");
    mf << meta.dump(2) << "\n";
}

inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset file " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty dataset file " + path);
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header.back() != "split")
        throw IoError("dataset header malformed in " + path + " (expected trailing 'split' column)");

    Dataset ds;
    // Column split: inputs are everything before the first target column;
    // targets are recognized by the sidecar if present, otherwise by the
    // conventional logflux_ prefix.
    std::size_t n_cols = header.size() - 1;
    std::size_t first_target = n_cols;
    for (std::size_t j = 0; j < n_cols; ++j) {
        if (header[j].rfind("logflux_", 0) == 0) {
            first_target = j;
            break;
        }
    }
    if (first_target == n_cols) throw IoError("dataset header has no logflux_* target columns: " + path);
    std::size_t n_in = first_target, n_out = n_cols - first_target;
    ds.meta.input_names.assign(header.begin(), header.begin() + n_in);
    ds.meta.target_names.assign(header.begin() + n_in, header.begin() + n_cols);

    std::vector<double> in_buf, tg_buf;
    std::size_t n_rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw IoError("dataset row " + std::to_string(n_rows + 2) + " has " + std::to_string(cells.size()) +
                          " cells, expected " + std::to_string(header.size()) + " in " + path);
        for (std::size_t j = 0; j < n_in; ++j) in_buf.push_back(detail::parse_double(cells[j], path));
        for (std::size_t j = 0; j < n_out; ++j) tg_buf.push_back(detail::parse_double(cells[n_in + j], path));
        const std::string& tag = cells.back();
        if (tag == "train")
            ds.split.push_back(static_cast<std::uint8_t>(Split::train));
        else if (tag == "test")
            ds.split.push_back(static_cast<std::uint8_t>(Split::test));
        else
            throw IoError("unknown split tag '" + tag + "' in " + path);
        ++n_rows;
    }
    ds.inputs = Mat(n_rows, n_in);
    ds.inputs.data = std::move(in_buf);
    ds.targets = Mat(n_rows, n_out);
    ds.targets.data = std::move(tg_buf);

    std::ifstream mf(dataset_meta_path(path));
    if (mf) {
        nlohmann::json meta = nlohmann::json::parse(mf, nullptr, true, true);
        ds.meta.seed = meta.value("seed", std::uint64_t{0});
        ds.meta.p_fail = meta.value("p_fail", 0.0);
        ds.meta.n_requested = meta.value("n_requested", std::size_t{0});
        ds.meta.n_failed = meta.value("n_failed", std::size_t{0});
        ds.meta.box_lower = meta.value("box_lower", Vec{});
        ds.meta.box_upper = meta.value("box_upper", Vec{});
        ds.meta.targets_log10 = meta.value("targets_log10", true);
    } else {
        // No sidecar: recover a sampling box from the observed input ranges.
        ds.meta.box_lower.assign(n_in, 0.0);
        ds.meta.box_upper.assign(n_in, 0.0);
        for (std::size_t j = 0; j < n_in; ++j) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < n_rows; ++i) {
                lo = std::min(lo, ds.inputs(i, j));
                hi = std::max(hi, ds.inputs(i, j));
            }
            ds.meta.box_lower[j] = lo;
            ds.meta.box_upper[j] = hi;
        }
    }
    return ds;
}

}  // namespace heliomc
