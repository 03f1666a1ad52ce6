#pragma once
// Run x time x pixel outcome tensors: aggregation, grid resampling, and a
// binary + JSON-manifest persistence format. All cross-run spatial analysis
// happens on one reference grid, so runs simulated at different mesh widths
// stay comparable; only block means are ever needed, never interpolation.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "senskit/common.hpp"
#include "senskit/csv.hpp"

namespace senskit {

struct GridInfo {
    double mesh = 50.0;  // m
    int nx = 0;
    int ny = 0;
    std::vector<std::uint8_t> landuse;  // per-pixel class labels; empty if not attached
    int n_pixels() const { return nx * ny; }
};

struct OutcomeTensor {
    std::string name;
    std::string unit;
    bool extensive = false;   // spatial aggregation: sum (true) or mean (false)
    std::string time_step;    // "day" or "month"
    std::vector<int> time_axis;  // timestamps, in time_step units since simulation start
    GridInfo grid;
    int n_runs = 0;
    int n_time = 0;
    int n_pixels = 0;
    std::uint64_t design_checksum = 0;
    std::vector<double> values;  // row-major: ((run * n_time) + t) * n_pixels + px

    double& at(int run, int t, int px) {
        return values[(static_cast<std::size_t>(run) * n_time + t) * n_pixels + px];
    }
    double at(int run, int t, int px) const {
        return values[(static_cast<std::size_t>(run) * n_time + t) * n_pixels + px];
    }

    void validate() const {
        if (n_runs < 1 || n_time < 1 || n_pixels < 1)
            throw ConfigError("tensor dimensions must be positive");
        if (values.size() != static_cast<std::size_t>(n_runs) * n_time * n_pixels)
            throw ConfigError("tensor value count does not match its dimensions");
        if (static_cast<int>(time_axis.size()) != n_time)
            throw ConfigError("time axis length does not match n_time");
        if (grid.n_pixels() != n_pixels)
            throw ConfigError("grid dimensions do not match n_pixels");
        if (!grid.landuse.empty() && static_cast<int>(grid.landuse.size()) != n_pixels)
            throw ConfigError("land-use labels do not match the grid");
        for (double v : values)
            if (!std::isfinite(v)) throw NonFiniteState("tensor holds a non-finite value");
    }
};

struct AggregationSpec {
    enum class Mode { spatial_mean, temporal_mean, full_mean, landuse_mean, event_window_mean };
    Mode mode = Mode::full_mean;
    std::optional<std::vector<int>> pixel_mask;  // pixel indices; empty set is an error
    std::optional<std::vector<int>> time_mask;   // time indices; empty set is an error
    std::uint8_t landuse_class = 0;              // selector for landuse_mean
};

namespace detail {

inline std::vector<int> selected_pixels(const OutcomeTensor& t, const AggregationSpec& spec) {
    if (spec.mode == AggregationSpec::Mode::landuse_mean) {
        if (t.grid.landuse.empty())
            throw ConfigError("landuse_mean requires land-use labels on the grid");
        std::vector<int> sel;
        for (int px = 0; px < t.n_pixels; ++px)
            if (t.grid.landuse[px] == spec.landuse_class) sel.push_back(px);
        if (sel.empty()) throw EmptyMask("no pixel carries the requested land-use class");
        return sel;
    }
    if (spec.pixel_mask) {
        if (spec.pixel_mask->empty()) throw EmptyMask("empty pixel mask");
        for (int px : *spec.pixel_mask)
            if (px < 0 || px >= t.n_pixels) throw ConfigError("pixel mask index out of range");
        return *spec.pixel_mask;
    }
    std::vector<int> all(t.n_pixels);
    for (int px = 0; px < t.n_pixels; ++px) all[px] = px;
    return all;
}

inline std::vector<int> selected_times(const OutcomeTensor& t, const AggregationSpec& spec) {
    if (spec.time_mask) {
        if (spec.time_mask->empty()) throw EmptyMask("empty time window");
        for (int ti : *spec.time_mask)
            if (ti < 0 || ti >= t.n_time) throw ConfigError("time window index out of range");
        return *spec.time_mask;
    }
    std::vector<int> all(t.n_time);
    for (int ti = 0; ti < t.n_time; ++ti) all[ti] = ti;
    return all;
}

}  // namespace detail

// Per-run time series: sum (extensive) or mean (intensive) over the selected
// pixels at each time step.
inline Eigen::MatrixXd spatial_aggregate(const OutcomeTensor& t, const AggregationSpec& spec) {
    if (spec.mode != AggregationSpec::Mode::spatial_mean &&
        spec.mode != AggregationSpec::Mode::landuse_mean)
        throw ConfigError("spatial_aggregate expects spatial_mean or landuse_mean");
    const std::vector<int> pixels = detail::selected_pixels(t, spec);
    Eigen::MatrixXd out(t.n_runs, t.n_time);
    for (int run = 0; run < t.n_runs; ++run)
        for (int ti = 0; ti < t.n_time; ++ti) {
            double acc = 0.0;
            for (int px : pixels) acc += t.at(run, ti, px);
            out(run, ti) = t.extensive ? acc : acc / pixels.size();
        }
    return out;
}

// Per-run pixel map: time mean over the selected window.
inline Eigen::MatrixXd temporal_aggregate(const OutcomeTensor& t, const AggregationSpec& spec) {
    if (spec.mode != AggregationSpec::Mode::temporal_mean &&
        spec.mode != AggregationSpec::Mode::event_window_mean)
        throw ConfigError("temporal_aggregate expects temporal_mean or event_window_mean");
    const std::vector<int> times = detail::selected_times(t, spec);
    Eigen::MatrixXd out(t.n_runs, t.n_pixels);
    for (int run = 0; run < t.n_runs; ++run)
        for (int px = 0; px < t.n_pixels; ++px) {
            double acc = 0.0;
            for (int ti : times) acc += t.at(run, ti, px);
            out(run, px) = acc / times.size();
        }
    return out;
}

// One scalar per run: mean over time, sum or mean over space.
inline Eigen::VectorXd full_aggregate(const OutcomeTensor& t) {
    Eigen::VectorXd out(t.n_runs);
    for (int run = 0; run < t.n_runs; ++run) {
        double acc = 0.0;
        const std::size_t base = static_cast<std::size_t>(run) * t.n_time * t.n_pixels;
        for (std::size_t i = 0; i < static_cast<std::size_t>(t.n_time) * t.n_pixels; ++i)
            acc += t.values[base + i];
        acc /= t.n_time;
        out(run) = t.extensive ? acc : acc / t.n_pixels;
    }
    return out;
}

// Block mean of a per-pixel map onto a coarser grid whose mesh is an integer
// multiple of the map's. Identity when the meshes match.
inline std::vector<double> resample_to_reference(const std::vector<double>& map,
                                                 const GridInfo& grid, double target_mesh) {
    if (static_cast<int>(map.size()) != grid.n_pixels())
        throw ConfigError("map size does not match its grid");
    const double ratio = target_mesh / grid.mesh;
    const int sub = static_cast<int>(std::lround(ratio));
    if (sub < 1 || std::abs(ratio - sub) > 1e-9)
        throw NonNestedGrids("target mesh is not an integer multiple of the map mesh");
    if (grid.nx % sub != 0 || grid.ny % sub != 0)
        throw NonNestedGrids("grid dimensions do not tile the target mesh");
    if (sub == 1) return map;
    const int cx = grid.nx / sub, cy = grid.ny / sub;
    std::vector<double> out(static_cast<std::size_t>(cx) * cy);
    for (int y = 0; y < cy; ++y)
        for (int x = 0; x < cx; ++x) {
            double acc = 0.0;
            for (int dy = 0; dy < sub; ++dy)
                for (int dx = 0; dx < sub; ++dx)
                    acc += map[(y * sub + dy) * grid.nx + x * sub + dx];
            out[y * cx + x] = acc / (sub * sub);
        }
    return out;
}

// Persistence: raw row-major 64-bit little-endian payload at `path`, JSON
// manifest sidecar at `path + ".json"`.
inline void write_tensor(const OutcomeTensor& t, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little,
                  "payload format is little-endian");
    t.validate();
    nlohmann::json m;
    m["name"] = t.name;
    m["unit"] = t.unit;
    m["extensive"] = t.extensive;
    m["time_step"] = t.time_step;
    m["time_axis"] = t.time_axis;
    m["grid"] = {{"mesh", t.grid.mesh}, {"nx", t.grid.nx}, {"ny", t.grid.ny},
                 {"landuse", t.grid.landuse}};
    m["dims"] = {{"n_runs", t.n_runs}, {"n_time", t.n_time}, {"n_pixels", t.n_pixels}};
    m["design_checksum"] = hex64(t.design_checksum);
    m["payload_bytes"] = t.values.size() * sizeof(double);

    std::string payload(t.values.size() * sizeof(double), '\0');
    std::memcpy(payload.data(), t.values.data(), payload.size());
    write_file(path, payload);
    write_file(path.string() + ".json", m.dump(2) + "\n");
}

inline OutcomeTensor read_tensor(const std::filesystem::path& path,
                                 std::uint64_t expected_design_checksum = 0) {
    const std::filesystem::path manifest_path = path.string() + ".json";
    if (!std::filesystem::exists(manifest_path))
        throw MissingArtifact("tensor manifest not found: " + manifest_path.string());
    if (!std::filesystem::exists(path))
        throw MissingArtifact("tensor payload not found: " + path.string());

    nlohmann::json m;
    try {
        m = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception&) {
        throw ManifestMismatch("tensor manifest is not valid JSON");
    }

    OutcomeTensor t;
    try {
        t.name = m.at("name").get<std::string>();
        t.unit = m.at("unit").get<std::string>();
        t.extensive = m.at("extensive").get<bool>();
        t.time_step = m.at("time_step").get<std::string>();
        t.time_axis = m.at("time_axis").get<std::vector<int>>();
        t.grid.mesh = m.at("grid").at("mesh").get<double>();
        t.grid.nx = m.at("grid").at("nx").get<int>();
        t.grid.ny = m.at("grid").at("ny").get<int>();
        t.grid.landuse = m.at("grid").at("landuse").get<std::vector<std::uint8_t>>();
        t.n_runs = m.at("dims").at("n_runs").get<int>();
        t.n_time = m.at("dims").at("n_time").get<int>();
        t.n_pixels = m.at("dims").at("n_pixels").get<int>();
        t.design_checksum = std::stoull(m.at("design_checksum").get<std::string>(), nullptr, 16);
    } catch (const nlohmann::json::exception&) {
        throw ManifestMismatch("tensor manifest is missing required fields");
    }
    if (expected_design_checksum != 0 && t.design_checksum != expected_design_checksum)
        throw ManifestMismatch("tensor was produced for a different design");

    const std::string payload = read_file(path);
    const std::size_t expected =
        static_cast<std::size_t>(t.n_runs) * t.n_time * t.n_pixels * sizeof(double);
    if (m.at("payload_bytes").get<std::size_t>() != expected)
        throw ManifestMismatch("manifest dims disagree with its payload size");
    if (payload.size() != expected)
        throw TruncatedPayload("tensor payload has the wrong byte length");
    t.values.resize(payload.size() / sizeof(double));
    std::memcpy(t.values.data(), payload.data(), payload.size());
    t.validate();
    return t;
}

// CSV export of an aggregated matrix: one labeled row per run.
inline void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                             const std::string& row_prefix, const std::string& col_prefix) {
    std::vector<std::string> header = {"run"};
    for (int c = 0; c < m.cols(); ++c) header.push_back(col_prefix + std::to_string(c));
    CsvWriter csv(header);
    for (int r = 0; r < m.rows(); ++r) {
        std::vector<std::string> row = {row_prefix + std::to_string(r)};
        for (int c = 0; c < m.cols(); ++c) row.push_back(format_double(m(r, c)));
        csv.row(row);
    }
    csv.save(path);
}

}  // namespace senskit
