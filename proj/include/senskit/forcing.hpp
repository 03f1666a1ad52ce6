#pragma once
// Synthetic daily weather forcing: sinusoidal annual temperature plus a
// seeded two-state (wet/dry) rainfall chain with seasonally modulated depths.
// Generated once per experiment and shared by every run, so weather never
// confounds factor effects.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "senskit/common.hpp"
#include "senskit/csv.hpp"
#include "senskit/rng.hpp"

namespace senskit {

struct Forcing {
    std::vector<double> precip_mm;  // per day
    std::vector<double> temp_c;     // daily mean

    int n_days() const { return static_cast<int>(precip_mm.size()); }
};

// Humid-oceanic defaults: ~850 mm/yr over ~40% wet days, mild seasonal
// temperature cycle peaking mid-July.
inline Forcing generate_forcing(int n_days, std::uint64_t seed) {
    if (n_days < 1) throw ConfigError("generate_forcing needs n_days >= 1");
    Forcing f;
    f.precip_mm.resize(n_days);
    f.temp_c.resize(n_days);

    std::mt19937_64 rng(derive_seed(seed, 0xF0));
    constexpr double kTwoPi = 6.283185307179586;
    bool wet = false;
    for (int d = 0; d < n_days; ++d) {
        const int doy = d % 365;
        const double phase = kTwoPi * (doy - 105) / 365.0;
        f.temp_c[d] = 11.5 + 6.5 * std::sin(phase) + 1.2 * normal01(rng);

        const double p_wet = wet ? 0.55 : 0.30;
        wet = uniform01(rng) < p_wet;
        if (wet) {
            // Wetter winters: depth modulation peaks early January.
            const double season = 1.0 + 0.3 * std::cos(kTwoPi * (doy - 15) / 365.0);
            f.precip_mm[d] = -5.8 * season * std::log(1.0 - uniform01(rng));
        } else {
            f.precip_mm[d] = 0.0;
        }
    }
    return f;
}

inline void write_forcing_csv(const std::filesystem::path& path, const Forcing& f) {
    CsvWriter w;
    w.row("day", "precip_mm", "temp_c");
    for (int d = 0; d < f.n_days(); ++d) w.row(d, f.precip_mm[d], f.temp_c[d]);
    w.save(path);
}

inline Forcing read_forcing_csv(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("forcing CSV not found: " + path.string());
    const auto rows = read_csv(path);
    if (rows.size() < 2 || rows[0].size() != 3)
        throw ConfigError("forcing CSV needs a header and day,precip_mm,temp_c rows");
    Forcing f;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 3) throw ConfigError("malformed forcing CSV row");
        f.precip_mm.push_back(std::stod(rows[i][1]));
        f.temp_c.push_back(std::stod(rows[i][2]));
    }
    return f;
}

}  // namespace senskit
