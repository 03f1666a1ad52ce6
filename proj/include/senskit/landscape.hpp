#pragma once
// Deterministic, mass-conservative surrogate of a nitrogen landscape model.
// It is a test double for driving the analysis pipeline, not a process model:
// every nitrogen transformation is first-order with nitrogen-independent
// coefficients, so outputs are linear in fertilization input and conservation
// holds by bookkeeping construction.
//
// Structure: pixels on a rectangular grid with a linear slope along rows.
// Each pixel has a surface layer (HS), an intermediate layer (HI) and a
// groundwater store (GW). Water cascades HS -> HI -> GW vertically and GW
// flows laterally one row downslope per day; the lowest row drains to the
// outlet. Dissolved nitrogen advects with the water. The groundwater store is
// reaction-free, so total nitrogen export is stable under grid refinement.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "senskit/common.hpp"
#include "senskit/factors.hpp"
#include "senskit/forcing.hpp"

namespace senskit {

enum class LandUse : std::uint8_t { maize = 0, wheat = 1, farm_building = 2, unmanaged = 3 };

// All rates are surrogate constants (per day unless noted), overridable via
// configuration; none is calibrated to a real system.
struct SurrogateRates {
    double mineralization = 0.01;       // organic N -> NH4
    double nitrification = 0.05;        // NH4 -> NO3
    double nox_fraction = 0.01;         // of nitrified N emitted as NOx
    double n2o_fraction = 0.01;         // of nitrified N emitted as N2O
    double volatilization = 0.10;       // surface-exposed NH4 -> NH3
    double uptake = 0.04;               // peak crop demand on HS pools
    double unmanaged_uptake_scale = 0.3;
    double drain = 0.5;                 // macropore water drained per day
    double nh4_mobility = 0.1;          // advection efficiency vs water
    double no3_mobility = 1.0;
    double surface_mix = 0.5;           // weight of the B/E surface-exposure term
    double dispersion_gain = 0.2;       // vertical N-transfer slope on cell thickness
    double aquifer_depth = 2.0;         // m
    double aquifer_porosity = 0.3;
    double lateral_cap = 0.5;           // max GW fraction leaving a pixel per day
    double et_base = 0.35;              // mm/day intercept of potential ET
    double et_slope = 0.045;            // mm/day per degree C
    double et_avail = 0.3;              // evaporable fraction of HS micro water per day
    // Fertilizer split by type: rows OL, OF, INO; columns NH4, NO3, organic.
    double split[3][3] = {{0.50, 0.05, 0.45}, {0.40, 0.05, 0.55}, {0.45, 0.50, 0.05}};
};

struct LandscapeConfig {
    int ref_nx = 20;
    int ref_ny = 20;
    double ref_mesh = 50.0;  // m; the coarsest factor-A level and analysis grid
    double slope_drop = 50.0;  // m elevation drop over the domain length
    int sim_years = 5;
    int spinup_years = 2;
    std::vector<LandUse> landuse;  // reference grid, row-major (row = downslope index)
    Forcing forcing;               // at least sim_years*365 days
    SurrogateRates rates;

    int ref_pixels() const { return ref_nx * ref_ny; }
    double area_ha() const { return ref_pixels() * ref_mesh * ref_mesh / 1e4; }
};

// Checkerboard crops with four unmanaged plots and two farm blocks, laid out
// on the reference grid. Class areas track the target shares (crops 125/300
// each, farms 2/300, unmanaged 48/300) within one pixel; a few boundary cells
// of the checkerboard are flipped to balance the crop counts exactly.
inline std::vector<LandUse> default_landuse(int nx, int ny) {
    if (nx < 12 || ny < 12) throw ConfigError("default_landuse needs at least a 12x12 grid");
    const int npx = nx * ny;
    std::vector<LandUse> lu(npx);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            lu[y * nx + x] = ((x + y) % 2 == 0) ? LandUse::maize : LandUse::wheat;

    const int target_unmanaged = static_cast<int>(std::lround(npx * 48.0 / 300.0));
    const int side = std::max(1, static_cast<int>(std::floor(std::sqrt(target_unmanaged / 4.0))));
    const std::array<std::pair<int, int>, 4> corners = {{
        {1, 1}, {nx - side - 1, 2}, {2, ny - side - 1}, {nx - side - 1, ny - side - 1}}};
    int placed = 0;
    for (const auto& [cx, cy] : corners)
        for (int dy = 0; dy < side && placed < target_unmanaged; ++dy)
            for (int dx = 0; dx < side && placed < target_unmanaged; ++dx, ++placed)
                lu[(cy + dy) * nx + (cx + dx)] = LandUse::unmanaged;
    for (int x = side + 2; placed < target_unmanaged; ++x, ++placed)
        lu[1 * nx + x] = LandUse::unmanaged;

    const int target_farm = std::max(1, static_cast<int>(std::lround(npx * 2.0 / 300.0)));
    int farm = 0;
    for (int x = nx / 2 - 1; farm < std::max(1, target_farm - 1); ++x, ++farm)
        lu[(ny / 2) * nx + x] = LandUse::farm_building;
    for (int x = nx / 2 - 1; farm < target_farm; ++x, ++farm)
        lu[(ny / 2 + 2) * nx + x] = LandUse::farm_building;

    const double ideal_maize = (npx - target_unmanaged - target_farm) * 0.5;
    const int target_maize = static_cast<int>(std::lround(ideal_maize));
    int maize = 0;
    for (LandUse u : lu) maize += (u == LandUse::maize) ? 1 : 0;
    for (int px = npx - 1; px >= 0 && maize != target_maize; --px) {
        if (maize > target_maize && lu[px] == LandUse::maize) {
            lu[px] = LandUse::wheat;
            --maize;
        } else if (maize < target_maize && lu[px] == LandUse::wheat) {
            lu[px] = LandUse::maize;
            ++maize;
        }
    }
    return lu;
}

inline void validate_landuse(const std::vector<LandUse>& lu, int nx, int ny) {
    if (static_cast<int>(lu.size()) != nx * ny)
        throw ConfigError("land-use map size does not match the grid");
    const double npx = static_cast<double>(nx) * ny;
    std::array<int, 4> count = {0, 0, 0, 0};
    for (LandUse u : lu) ++count[static_cast<int>(u)];
    const std::array<double, 4> share = {125.0 / 300.0, 125.0 / 300.0, 2.0 / 300.0, 48.0 / 300.0};
    for (int c = 0; c < 4; ++c)
        if (std::abs(count[c] - npx * share[c]) > 1.0 + 1e-9)
            throw ConfigError("land-use class area off target by more than one pixel");
}

inline LandscapeConfig default_config(std::uint64_t forcing_seed) {
    LandscapeConfig cfg;
    cfg.landuse = default_landuse(cfg.ref_nx, cfg.ref_ny);
    cfg.forcing = generate_forcing(cfg.sim_years * 365, forcing_seed);
    return cfg;
}

struct YearBalance {
    double inputs = 0.0;         // kg N fertilized
    double exports = 0.0;        // kg N emitted + taken up + discharged
    double storage_delta = 0.0;  // kg N
    double residual = 0.0;       // (inputs - exports - storage_delta) / max(inputs, 1)
};

struct RunOutput {
    // Daily outlet series, post-spin-up.
    std::vector<double> discharge_m3;
    std::vector<double> nh4_conc_mg_l;
    std::vector<double> no3_conc_mg_l;
    std::vector<double> nh4_load_kg;
    std::vector<double> no3_load_kg;
    // Monthly maps on the reference grid, post-spin-up; values[month * n_pixels + px].
    int n_months = 0;
    int ref_nx = 0;
    int ref_ny = 0;
    std::map<std::string, std::vector<double>> maps;
    std::vector<YearBalance> balance;  // one row per simulated year, spin-up included
};

struct OutcomeInfo {
    std::string name;
    std::string unit;
    bool extensive;  // spatial aggregation: sum (true) or mean (false)
    bool is_map;     // monthly map vs daily outlet series
};

inline const std::vector<OutcomeInfo>& outcome_catalog() {
    static const std::vector<OutcomeInfo> catalog = {
        {"outflow_discharge", "m3/day", false, false},
        {"outflow_nh4_conc", "mgN/L", false, false},
        {"outflow_no3_conc", "mgN/L", false, false},
        {"outflow_nh4_load", "kgN/day", true, false},
        {"outflow_no3_load", "kgN/day", true, false},
        {"nh3_emission", "kgN/ha/month", true, true},
        {"nox_emission", "kgN/ha/month", true, true},
        {"n2o_emission", "kgN/ha/month", true, true},
        {"mineralization", "kgN/ha/month", true, true},
        {"nitrification", "kgN/ha/month", true, true},
        {"nh4_uptake", "kgN/ha/month", true, true},
        {"no3_uptake", "kgN/ha/month", true, true},
        {"hs_nh4", "kgN/ha", false, true},
        {"hs_no3", "kgN/ha", false, true},
        {"gw_depth", "m", false, true},
        {"gw_nh4_conc", "mgN/L", false, true},
        {"gw_no3_conc", "mgN/L", false, true},
    };
    return catalog;
}

namespace detail {

inline const std::array<int, 365>& month_of_doy() {
    static const std::array<int, 365> table = [] {
        constexpr int len[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
        std::array<int, 365> t{};
        int doy = 0;
        for (int m = 0; m < 12; ++m)
            for (int d = 0; d < len[m]; ++d) t[doy++] = m;
        return t;
    }();
    return table;
}

// Crop demand: zero outside April..September, sin^2 hump peaking at midsummer.
inline double uptake_season(int doy) {
    if (doy < 90 || doy > 272) return 0.0;
    const double u = (doy - 90) / 182.0;
    const double s = std::sin(3.141592653589793 * u);
    return s * s;
}

struct FertEvent {
    int doy;
    LandUse crop;
};

// Two applications of half the annual amount per crop-year.
inline const std::array<FertEvent, 4>& fert_calendar() {
    static const std::array<FertEvent, 4> cal = {{
        {104, LandUse::maize},  // Apr 15
        {134, LandUse::maize},  // May 15
        {63, LandUse::wheat},   // Mar 5
        {83, LandUse::wheat},   // Mar 25
    }};
    return cal;
}

}  // namespace detail

inline RunOutput simulate(const FactorAssignment& a, const LandscapeConfig& cfg) {
    validate_landuse(cfg.landuse, cfg.ref_nx, cfg.ref_ny);
    const double ratio = cfg.ref_mesh / a.mesh_width;
    const int sub = static_cast<int>(std::lround(ratio));
    if (sub < 1 || std::abs(ratio - sub) > 1e-9)
        throw ConfigError("mesh width must integer-divide the reference mesh");
    if (cfg.sim_years <= cfg.spinup_years)
        throw ConfigError("simulation must extend past the spin-up years");
    const int n_days = cfg.sim_years * 365;
    if (cfg.forcing.n_days() < n_days) throw ConfigError("forcing shorter than the simulation");

    const int nx = cfg.ref_nx * sub;
    const int ny = cfg.ref_ny * sub;
    const int npx = nx * ny;
    const double mesh = a.mesh_width;
    const double area_m2 = mesh * mesh;
    const double area_ha = area_m2 / 1e4;
    const SurrogateRates& r = cfg.rates;

    // Per-pixel land-use constants, subdivided from the reference grid.
    std::vector<std::uint8_t> lu(npx);
    std::vector<double> kc(npx), up_scale(npx);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const LandUse u = cfg.landuse[(y / sub) * cfg.ref_nx + (x / sub)];
            lu[y * nx + x] = static_cast<std::uint8_t>(u);
            switch (u) {
                case LandUse::maize: kc[y * nx + x] = 1.05; up_scale[y * nx + x] = 1.0; break;
                case LandUse::wheat: kc[y * nx + x] = 1.0; up_scale[y * nx + x] = 1.0; break;
                case LandUse::farm_building: kc[y * nx + x] = 0.2; up_scale[y * nx + x] = 0.0; break;
                case LandUse::unmanaged:
                    kc[y * nx + x] = 0.9;
                    up_scale[y * nx + x] = r.unmanaged_uptake_scale;
                    break;
            }
        }

    // Derived hydrologic constants.
    const double micro_share = a.micro_macro_ratio / (1.0 + a.micro_macro_ratio);
    const double hs_cap = a.hs_depth * a.hs_porosity;
    const double hs_micro_cap = hs_cap * micro_share;
    const double hi_cap = a.hi_depth * a.hs_porosity;
    const double hi_micro_cap = hi_cap * micro_share * a.hi_hs_micro_ratio;
    const double gw_cap = r.aquifer_depth * r.aquifer_porosity;
    const double slope = cfg.slope_drop / (cfg.ref_ny * cfg.ref_mesh);
    const double mob_b = 1.0 + r.dispersion_gain * (a.soil_layer_thickness / 0.05 - 1.0);
    const double surf_frac =
        (1.0 - r.surface_mix) +
        r.surface_mix * std::min(1.0, a.soil_layer_thickness / a.hs_depth);
    const double mob4 = std::min(0.9, r.nh4_mobility * mob_b);
    const double mob3 = std::min(0.9, r.no3_mobility * mob_b);
    const int split_idx = static_cast<int>(a.fertilizer);

    // State, kg N per pixel and meters of water.
    std::vector<double> w_hs(npx, 0.0), w_hi(npx, 0.0), w_gw(npx, 0.0);
    std::vector<double> nh4_hs(npx, 0.0), no3_hs(npx, 0.0), org(npx, 0.0);
    std::vector<double> nh4_hi(npx, 0.0), no3_hi(npx, 0.0);
    std::vector<double> nh4_gw(npx, 0.0), no3_gw(npx, 0.0);

    // Monthly native-grid accumulators: 7 flux sums.
    enum { F_NH3 = 0, F_NOX, F_N2O, F_MIN, F_NIT, F_UP4, F_UP3, F_COUNT };
    std::vector<std::vector<double>> flux(F_COUNT, std::vector<double>(npx, 0.0));

    RunOutput out;
    out.ref_nx = cfg.ref_nx;
    out.ref_ny = cfg.ref_ny;
    out.n_months = (cfg.sim_years - cfg.spinup_years) * 12;
    const int ref_px = cfg.ref_pixels();
    for (const OutcomeInfo& info : outcome_catalog())
        if (info.is_map)
            out.maps[info.name].assign(static_cast<std::size_t>(out.n_months) * ref_px, 0.0);

    const int spin_days = cfg.spinup_years * 365;
    const int spin_months = cfg.spinup_years * 12;
    out.discharge_m3.reserve(n_days - spin_days);

    double year_inputs = 0.0, year_exports = 0.0, prev_storage = 0.0;
    const auto& months = detail::month_of_doy();

    // Block mean of a native accumulator onto the reference grid slice.
    auto store_map = [&](const std::string& name, int month_out,
                         const std::vector<double>& native, double scale) {
        std::vector<double>& dst = out.maps[name];
        const double inv = scale / (sub * sub);
        for (int ry = 0; ry < cfg.ref_ny; ++ry)
            for (int rx = 0; rx < cfg.ref_nx; ++rx) {
                double sum = 0.0;
                for (int dy = 0; dy < sub; ++dy)
                    for (int dx = 0; dx < sub; ++dx)
                        sum += native[(ry * sub + dy) * nx + rx * sub + dx];
                dst[static_cast<std::size_t>(month_out) * ref_px + ry * cfg.ref_nx + rx] =
                    sum * inv;
            }
    };

    std::vector<double> snapshot(npx);
    int month_index = 0;  // absolute month counter

    for (int d = 0; d < n_days; ++d) {
        const int doy = d % 365;
        const double precip_m = cfg.forcing.precip_mm[d] / 1000.0;
        const double temp = cfg.forcing.temp_c[d];
        const double pet_raw = std::max(0.0, r.et_base + r.et_slope * temp) / 1000.0;

        // Fertilization amounts per land use for this calendar day, kg N/pixel.
        double fert_px[4] = {0.0, 0.0, 0.0, 0.0};
        for (const auto& ev : detail::fert_calendar())
            if (ev.doy == doy)
                fert_px[static_cast<int>(ev.crop)] += 0.5 * a.fertilizer_amount * area_ha;

        const double season = detail::uptake_season(doy);

        for (int px = 0; px < npx; ++px) {
            const int u = lu[px];

            if (fert_px[u] > 0.0) {
                const double amt = fert_px[u];
                nh4_hs[px] += amt * r.split[split_idx][0];
                no3_hs[px] += amt * r.split[split_idx][1];
                org[px] += amt * r.split[split_idx][2];
                year_inputs += amt;
            }

            const double dm = r.mineralization * org[px];
            org[px] -= dm;
            nh4_hs[px] += dm;
            flux[F_MIN][px] += dm;

            const double dn = r.nitrification * nh4_hs[px];
            const double nox = dn * r.nox_fraction;
            const double n2o = dn * r.n2o_fraction;
            nh4_hs[px] -= dn;
            no3_hs[px] += dn - nox - n2o;
            flux[F_NIT][px] += dn;
            flux[F_NOX][px] += nox;
            flux[F_N2O][px] += n2o;
            year_exports += nox + n2o;

            const double dv = r.volatilization * surf_frac * nh4_hs[px];
            nh4_hs[px] -= dv;
            flux[F_NH3][px] += dv;
            year_exports += dv;

            if (season > 0.0 && up_scale[px] > 0.0) {
                const double k = r.uptake * season * up_scale[px];
                const double u4 = k * nh4_hs[px];
                const double u3 = k * no3_hs[px];
                nh4_hs[px] -= u4;
                no3_hs[px] -= u3;
                flux[F_UP4][px] += u4;
                flux[F_UP3][px] += u3;
                year_exports += u4 + u3;
            }

            // Water: rain in, ET out, macro drainage HS -> HI -> GW carrying
            // dissolved N in proportion to the draining fraction.
            w_hs[px] += precip_m;
            const double micro = std::min(w_hs[px], hs_micro_cap);
            w_hs[px] -= std::min(pet_raw * kc[px], r.et_avail * micro);

            double free_w = std::max(0.0, w_hs[px] - hs_micro_cap);
            double out_w = r.drain * free_w;
            out_w += std::max(0.0, (w_hs[px] - out_w) - hs_cap);
            if (w_hs[px] > 1e-12) {
                const double fw = out_w / w_hs[px];
                const double d4 = std::min(0.9, fw * mob4) * nh4_hs[px];
                const double d3 = std::min(0.9, fw * mob3) * no3_hs[px];
                nh4_hs[px] -= d4;
                no3_hs[px] -= d3;
                nh4_hi[px] += d4;
                no3_hi[px] += d3;
            }
            w_hs[px] -= out_w;
            w_hi[px] += out_w;

            free_w = std::max(0.0, w_hi[px] - hi_micro_cap);
            out_w = r.drain * free_w;
            out_w += std::max(0.0, (w_hi[px] - out_w) - hi_cap);
            if (w_hi[px] > 1e-12) {
                const double fw = out_w / w_hi[px];
                const double d4 = std::min(0.9, fw * mob4) * nh4_hi[px];
                const double d3 = std::min(0.9, fw * mob3) * no3_hi[px];
                nh4_hi[px] -= d4;
                no3_hi[px] -= d3;
                nh4_gw[px] += d4;
                no3_gw[px] += d3;
            }
            w_hi[px] -= out_w;
            w_gw[px] += out_w;
        }

        // Lateral groundwater passes, processed from the lowest row upward so
        // each pixel's outflow is computed before its upslope inflow arrives.
        // One pass moves water one native row; `sub` passes per day keep the
        // travel distance (one reference row per day) mesh-independent.
        double day_q = 0.0, day_l4 = 0.0, day_l3 = 0.0;
        const double dt = 1.0 / sub;
        for (int pass = 0; pass < sub; ++pass)
            for (int y = ny - 1; y >= 0; --y)
                for (int x = 0; x < nx; ++x) {
                    const int px = y * nx + x;
                    double w = w_gw[px];
                    if (w <= 1e-15) continue;

                    double frac = 0.0;
                    const double surplus = w - gw_cap;
                    if (surplus > 0.0) frac += surplus / w;
                    const double deficit = std::max(0.0, gw_cap - w);
                    double t_lat = 0.0;
                    if (deficit == 0.0) {
                        t_lat = a.lateral_transmissivity;
                    } else {
                        const double e = deficit / a.transmissivity_decay_depth;
                        if (e < 40.0) t_lat = a.lateral_transmissivity * std::exp(-e);
                    }
                    frac += std::min(r.lateral_cap * dt,
                                     t_lat * slope * dt / (mesh * std::max(w, 1e-9)));
                    frac = std::min(frac, 0.95);

                    const double mw = frac * w;
                    const double m4 = frac * nh4_gw[px];
                    const double m3 = frac * no3_gw[px];
                    w_gw[px] -= mw;
                    nh4_gw[px] -= m4;
                    no3_gw[px] -= m3;
                    if (y + 1 < ny) {
                        const int dst = px + nx;
                        w_gw[dst] += mw;
                        nh4_gw[dst] += m4;
                        no3_gw[dst] += m3;
                    } else {
                        day_q += mw * area_m2;
                        day_l4 += m4;
                        day_l3 += m3;
                    }
                }
        year_exports += day_l4 + day_l3;

        if (d >= spin_days) {
            out.discharge_m3.push_back(day_q);
            out.nh4_load_kg.push_back(day_l4);
            out.no3_load_kg.push_back(day_l3);
            out.nh4_conc_mg_l.push_back(day_q > 1e-9 ? day_l4 / day_q * 1e3 : 0.0);
            out.no3_conc_mg_l.push_back(day_q > 1e-9 ? day_l3 / day_q * 1e3 : 0.0);
        }

        const bool month_end = (doy + 1 < 365) ? (months[doy + 1] != months[doy]) : true;
        if (month_end) {
            if (month_index >= spin_months) {
                const int mo = month_index - spin_months;
                const double per_ha = 1.0 / area_ha;
                store_map("nh3_emission", mo, flux[F_NH3], per_ha);
                store_map("nox_emission", mo, flux[F_NOX], per_ha);
                store_map("n2o_emission", mo, flux[F_N2O], per_ha);
                store_map("mineralization", mo, flux[F_MIN], per_ha);
                store_map("nitrification", mo, flux[F_NIT], per_ha);
                store_map("nh4_uptake", mo, flux[F_UP4], per_ha);
                store_map("no3_uptake", mo, flux[F_UP3], per_ha);
                for (int px = 0; px < npx; ++px) snapshot[px] = nh4_hs[px];
                store_map("hs_nh4", mo, snapshot, per_ha);
                for (int px = 0; px < npx; ++px) snapshot[px] = no3_hs[px];
                store_map("hs_no3", mo, snapshot, per_ha);
                for (int px = 0; px < npx; ++px)
                    snapshot[px] = std::max(0.0, gw_cap - w_gw[px]) / r.aquifer_porosity;
                store_map("gw_depth", mo, snapshot, 1.0);
                for (int px = 0; px < npx; ++px)
                    snapshot[px] =
                        w_gw[px] > 1e-9 ? nh4_gw[px] / (w_gw[px] * area_m2) * 1e3 : 0.0;
                store_map("gw_nh4_conc", mo, snapshot, 1.0);
                for (int px = 0; px < npx; ++px)
                    snapshot[px] =
                        w_gw[px] > 1e-9 ? no3_gw[px] / (w_gw[px] * area_m2) * 1e3 : 0.0;
                store_map("gw_no3_conc", mo, snapshot, 1.0);
            }
            for (auto& f : flux) std::fill(f.begin(), f.end(), 0.0);
            ++month_index;

            double check = 0.0;
            for (int px = 0; px < npx; ++px)
                check += nh4_hs[px] + no3_hs[px] + org[px] + w_gw[px];
            if (!std::isfinite(check))
                throw NonFiniteState("non-finite state; check surrogate rate constants");
        }

        if ((d + 1) % 365 == 0) {
            double storage = 0.0;
            for (int px = 0; px < npx; ++px)
                storage += org[px] + nh4_hs[px] + no3_hs[px] + nh4_hi[px] + no3_hi[px] +
                           nh4_gw[px] + no3_gw[px];
            YearBalance yb;
            yb.inputs = year_inputs;
            yb.exports = year_exports;
            yb.storage_delta = storage - prev_storage;
            yb.residual = (yb.inputs - yb.exports - yb.storage_delta) / std::max(yb.inputs, 1.0);
            out.balance.push_back(yb);
            prev_storage = storage;
            year_inputs = year_exports = 0.0;
        }
    }
    return out;
}

inline const std::vector<YearBalance>& mass_balance(const RunOutput& output) {
    return output.balance;
}

}  // namespace senskit
