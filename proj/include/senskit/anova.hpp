#pragma once
// Saturated ANOVA sensitivity indexes for three-level factorial designs.
//
// The decomposition assigns each factor a main-effect sum of squares and each
// factor pair an interaction sum of squares. Level and cell means are
// orthogonal contrasts when the design has strength >= min(4, n_factors), so
// the pieces add without overlap; on a saturated design they add up to the
// total sum of squares exactly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "senskit/common.hpp"
#include "senskit/csv.hpp"
#include "senskit/design.hpp"

namespace senskit {

inline std::size_t pair_count(int n_factors) {
    return static_cast<std::size_t>(n_factors) * (n_factors - 1) / 2;
}

// Pairs (f, g) with f < g in lexicographic order: (0,1), (0,2), ..., (1,2), ...
inline std::size_t pair_index(int f, int g, int n_factors) {
    return static_cast<std::size_t>(f) * (2 * n_factors - f - 1) / 2 + (g - f - 1);
}

inline std::pair<int, int> pair_factors(std::size_t k, int n_factors) {
    for (int f = 0; f < n_factors - 1; ++f) {
        const std::size_t block = static_cast<std::size_t>(n_factors - 1 - f);
        if (k < block) return {f, f + 1 + static_cast<int>(k)};
        k -= block;
    }
    throw LengthMismatch("pair index out of range");
}

struct SensitivityProfile {
    std::vector<double> msi;  // per factor: main-effect share of total variance
    std::vector<double> isi;  // per pair, ordered as pair_index()
    std::vector<double> tsi;  // per factor: msi + sum of the pairwise isi it joins
    double i_tot = 0.0;       // sum of all pairwise isi
    double total_ss = 0.0;
    bool degenerate = false;  // zero-variance response; all indexes reported 0
    double clamped = 0.0;     // largest negative interaction share pushed up to 0
};

// Precomputes level and cell memberships of a design once so that many
// responses (time steps, pixels, component scores) can be decomposed cheaply.
class AnovaEngine {
public:
    explicit AnovaEngine(const DesignMatrix& design)
        : n_runs_(design.n_runs), n_factors_(design.n_factors), codes_(design.codes) {
        const int need = required_strength(design.n_factors);
        if (design.regular()) {
            const int have = word_length_pattern(design).strength;
            if (have < need)
                throw InsufficientStrength("design strength " + std::to_string(have) +
                                           " below required " + std::to_string(need));
        } else if (!verify_strength(design, need).ok) {
            throw InsufficientStrength("design is not balanced on all " +
                                       std::to_string(need) + "-factor projections");
        }

        level_counts_.assign(static_cast<std::size_t>(n_factors_) * 3, 0);
        cell_counts_.assign(pair_count(n_factors_) * 9, 0);
        for (int r = 0; r < n_runs_; ++r) {
            const std::uint8_t* row = &codes_[static_cast<std::size_t>(r) * n_factors_];
            for (int f = 0; f < n_factors_; ++f)
                ++level_counts_[static_cast<std::size_t>(f) * 3 + row[f]];
            std::size_t k = 0;
            for (int f = 0; f < n_factors_; ++f)
                for (int g = f + 1; g < n_factors_; ++g, ++k)
                    ++cell_counts_[k * 9 + row[f] * 3 + row[g]];
        }
    }

    static int required_strength(int n_factors) { return std::min(4, n_factors); }

    int n_runs() const { return n_runs_; }
    int n_factors() const { return n_factors_; }

    SensitivityProfile fit(std::span<const double> response) const {
        if (static_cast<int>(response.size()) != n_runs_)
            throw LengthMismatch("response length " + std::to_string(response.size()) +
                                 ", design has " + std::to_string(n_runs_) + " runs");

        double sum = 0.0, sumsq = 0.0;
        for (double v : response) {
            if (!std::isfinite(v)) throw NonFiniteState("non-finite response value");
            sum += v;
            sumsq += v * v;
        }
        const double mean = sum / n_runs_;

        SensitivityProfile p;
        p.msi.assign(n_factors_, 0.0);
        p.tsi.assign(n_factors_, 0.0);
        p.isi.assign(pair_count(n_factors_), 0.0);

        // Center first: sums of centered values keep the quadratic forms well
        // conditioned even when |mean| dwarfs the spread.
        std::vector<double> level_sums(static_cast<std::size_t>(n_factors_) * 3, 0.0);
        std::vector<double> cell_sums(p.isi.size() * 9, 0.0);
        double sst = 0.0;
        for (int r = 0; r < n_runs_; ++r) {
            const double z = response[r] - mean;
            sst += z * z;
            const std::uint8_t* row = &codes_[static_cast<std::size_t>(r) * n_factors_];
            for (int f = 0; f < n_factors_; ++f)
                level_sums[static_cast<std::size_t>(f) * 3 + row[f]] += z;
            std::size_t k = 0;
            for (int f = 0; f < n_factors_; ++f)
                for (int g = f + 1; g < n_factors_; ++g, ++k)
                    cell_sums[k * 9 + row[f] * 3 + row[g]] += z;
        }

        p.total_ss = sst;
        if (sst <= sumsq / n_runs_ * n_runs_ * 1e-26) {
            p.degenerate = true;
            p.total_ss = 0.0;
            return p;
        }

        std::vector<double> ss_main(n_factors_, 0.0);
        for (int f = 0; f < n_factors_; ++f) {
            for (int l = 0; l < 3; ++l) {
                const std::size_t i = static_cast<std::size_t>(f) * 3 + l;
                if (level_counts_[i] > 0) ss_main[f] += level_sums[i] * level_sums[i] / level_counts_[i];
            }
            p.msi[f] = ss_main[f] / sst;
        }

        std::size_t k = 0;
        for (int f = 0; f < n_factors_; ++f) {
            for (int g = f + 1; g < n_factors_; ++g, ++k) {
                double ss_cell = 0.0;
                for (int c = 0; c < 9; ++c) {
                    const std::size_t i = k * 9 + c;
                    if (cell_counts_[i] > 0) ss_cell += cell_sums[i] * cell_sums[i] / cell_counts_[i];
                }
                double ss_int = ss_cell - ss_main[f] - ss_main[g];
                if (ss_int < 0.0) {
                    p.clamped = std::max(p.clamped, -ss_int / sst);
                    ss_int = 0.0;
                }
                p.isi[k] = ss_int / sst;
                p.i_tot += p.isi[k];
            }
        }

        for (int f = 0; f < n_factors_; ++f) {
            p.tsi[f] = p.msi[f];
            for (int g = 0; g < n_factors_; ++g) {
                if (g == f) continue;
                p.tsi[f] += p.isi[pair_index(std::min(f, g), std::max(f, g), n_factors_)];
            }
        }
        return p;
    }

private:
    int n_runs_;
    int n_factors_;
    std::vector<std::uint8_t> codes_;
    std::vector<int> level_counts_;  // n_factors x 3
    std::vector<int> cell_counts_;   // pair_count x 9
};

inline SensitivityProfile fit_saturated_anova(const DesignMatrix& design,
                                              std::span<const double> response) {
    return AnovaEngine(design).fit(response);
}

struct DynamicSI {
    std::vector<double> time;  // axis labels; step indexes when none supplied
    std::vector<SensitivityProfile> steps;
};

// series is row-major n_runs x n_time; each time step is decomposed on its own.
inline DynamicSI dynamic_sa(const DesignMatrix& design, std::span<const double> series,
                            int n_time, std::span<const double> time_axis = {}) {
    if (n_time <= 0 || series.size() != static_cast<std::size_t>(design.n_runs) * n_time)
        throw LengthMismatch("series size does not match n_runs x n_time");
    if (!time_axis.empty() && static_cast<int>(time_axis.size()) != n_time)
        throw LengthMismatch("time axis length does not match n_time");

    const AnovaEngine engine(design);
    DynamicSI out;
    out.time.resize(n_time);
    out.steps.reserve(n_time);
    std::vector<double> column(design.n_runs);
    for (int t = 0; t < n_time; ++t) {
        out.time[t] = time_axis.empty() ? static_cast<double>(t) : time_axis[t];
        for (int r = 0; r < design.n_runs; ++r)
            column[r] = series[static_cast<std::size_t>(r) * n_time + t];
        out.steps.push_back(engine.fit(column));
    }
    return out;
}

// argmax map codes: a factor index, or one of these.
constexpr int kArgmaxDegenerate = -1;
constexpr int kArgmaxInteractions = -2;

struct SpatialSI {
    int nx = 0, ny = 0;
    std::vector<double> tsi;         // factor-major: n_factors x n_pixels
    std::vector<int> argmax;         // per pixel; see codes above
    std::vector<double> mean;        // per pixel, across runs
    std::vector<double> rsd;         // per pixel: std / |mean| across runs
    std::vector<std::uint8_t> rsd_flag;    // 1 where |mean| below threshold; rsd set 0
    std::vector<std::uint8_t> degenerate;  // 1 where the pixel is constant in runs
};

// maps is row-major n_runs x (nx * ny), all runs on the shared reference grid.
inline SpatialSI spatial_sa(const DesignMatrix& design, std::span<const double> maps,
                            int nx, int ny) {
    const std::size_t n_pixels = static_cast<std::size_t>(nx) * ny;
    if (n_pixels == 0 || maps.size() != static_cast<std::size_t>(design.n_runs) * n_pixels)
        throw LengthMismatch("map size does not match n_runs x nx x ny");

    const AnovaEngine engine(design);
    const int nf = design.n_factors;
    SpatialSI out;
    out.nx = nx;
    out.ny = ny;
    out.tsi.assign(static_cast<std::size_t>(nf) * n_pixels, 0.0);
    out.argmax.assign(n_pixels, kArgmaxDegenerate);
    out.mean.assign(n_pixels, 0.0);
    out.rsd.assign(n_pixels, 0.0);
    out.rsd_flag.assign(n_pixels, 0);
    out.degenerate.assign(n_pixels, 0);

    std::vector<double> column(design.n_runs);
    for (std::size_t px = 0; px < n_pixels; ++px) {
        for (int r = 0; r < design.n_runs; ++r)
            column[r] = maps[static_cast<std::size_t>(r) * n_pixels + px];
        const SensitivityProfile p = engine.fit(column);

        double sum = 0.0;
        for (double v : column) sum += v;
        out.mean[px] = sum / design.n_runs;
        if (design.n_runs > 1 && !p.degenerate)
            out.rsd[px] = std::sqrt(p.total_ss / (design.n_runs - 1));

        for (int f = 0; f < nf; ++f) out.tsi[static_cast<std::size_t>(f) * n_pixels + px] = p.tsi[f];
        if (p.degenerate) {
            out.degenerate[px] = 1;
            continue;
        }
        int best = 0;
        for (int f = 1; f < nf; ++f)
            if (p.tsi[f] > p.tsi[best]) best = f;  // ties keep the lowest factor id
        out.argmax[px] = (p.i_tot > p.tsi[best]) ? kArgmaxInteractions : best;
    }

    // rsd currently holds the std; divide by |mean| where the mean is usable.
    double max_abs_mean = 0.0;
    for (double m : out.mean) max_abs_mean = std::max(max_abs_mean, std::abs(m));
    const double eps = 1e-12 * max_abs_mean;
    for (std::size_t px = 0; px < n_pixels; ++px) {
        if (std::abs(out.mean[px]) <= eps) {
            out.rsd_flag[px] = 1;
            out.rsd[px] = 0.0;
        } else {
            out.rsd[px] /= std::abs(out.mean[px]);
        }
    }
    return out;
}

inline std::string pair_label(std::span<const std::string> ids, std::size_t k) {
    const auto [f, g] = pair_factors(k, static_cast<int>(ids.size()));
    return ids[f] + ":" + ids[g];
}

// Long-format rows: response_id, term, index kind, value.
inline void append_profile_rows(CsvWriter& w, const std::string& response_id,
                                std::span<const std::string> ids, const SensitivityProfile& p) {
    const int nf = static_cast<int>(ids.size());
    for (int f = 0; f < nf; ++f)
        w.row(response_id, ids[f], "mSI", p.msi[f]);
    for (std::size_t k = 0; k < p.isi.size(); ++k)
        w.row(response_id, pair_label(ids, k), "iSI", p.isi[k]);
    for (int f = 0; f < nf; ++f)
        w.row(response_id, ids[f], "tSI", p.tsi[f]);
    w.row(response_id, "interactions", "i_TOT", p.i_tot);
    w.row(response_id, "", "SS_total", p.total_ss);
    w.row(response_id, "", "degenerate", p.degenerate ? 1.0 : 0.0);
}

inline void write_profile_csv(const std::string& path, const std::string& response_id,
                              std::span<const std::string> ids, const SensitivityProfile& p) {
    CsvWriter w;
    w.row("response_id", "term", "index", "value");
    append_profile_rows(w, response_id, ids, p);
    w.save(path);
}

inline void write_dynamic_csv(const std::string& path, std::span<const std::string> ids,
                              const DynamicSI& d) {
    CsvWriter w;
    w.row("time", "term", "index", "value");
    for (std::size_t t = 0; t < d.steps.size(); ++t)
        append_profile_rows(w, format_double(d.time[t]), ids, d.steps[t]);
    w.save(path);
}

inline void write_spatial_csv(const std::string& path, std::span<const std::string> ids,
                              const SpatialSI& s) {
    const std::size_t n_pixels = static_cast<std::size_t>(s.nx) * s.ny;
    CsvWriter w;
    w.cell("px");
    w.cell("py");
    w.cell("mean");
    w.cell("rsd");
    w.cell("rsd_flag");
    w.cell("degenerate");
    w.cell("argmax");
    for (const auto& id : ids) w.cell("tsi_" + id);
    w.endrow();
    for (std::size_t px = 0; px < n_pixels; ++px) {
        w.cell(px % s.nx);
        w.cell(px / s.nx);
        w.cell(s.mean[px]);
        w.cell(s.rsd[px]);
        w.cell(static_cast<std::size_t>(s.rsd_flag[px]));
        w.cell(static_cast<std::size_t>(s.degenerate[px]));
        if (s.argmax[px] == kArgmaxInteractions)
            w.cell("interactions");
        else if (s.argmax[px] == kArgmaxDegenerate)
            w.cell("");
        else
            w.cell(ids[s.argmax[px]]);
        for (std::size_t f = 0; f < ids.size(); ++f)
            w.cell(s.tsi[f * n_pixels + px]);
        w.endrow();
    }
    w.save(path);
}

}  // namespace senskit
