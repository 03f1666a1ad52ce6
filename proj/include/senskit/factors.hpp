// Input factor definitions: the eleven 3-level factors driving the landscape
// simulator, their physical level values, and the mapping from design codes
// to a concrete simulator assignment.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "senskit/common.hpp"

namespace senskit {

enum class FactorKind { resolution, physical, management };

enum class FertilizerType : int { organic_liquid = 0, organic_solid = 1, inorganic = 2 };

inline const char* fertilizer_label(FertilizerType t) {
    switch (t) {
        case FertilizerType::organic_liquid: return "OL";
        case FertilizerType::organic_solid: return "OF";
        default: return "INO";
    }
}

/// One 3-level input factor. For categorical factors (fertilizer type) the
/// numeric level values are the category codes and `categorical` is set.
struct FactorSpec {
    char id = '?';
    std::string description;
    FactorKind kind = FactorKind::physical;
    std::array<double, 3> levels{};
    std::array<std::string, 3> labels;  // printable level forms
    std::string unit;
    bool categorical = false;

    void validate() const {
        if (levels[0] == levels[1] || levels[0] == levels[2] || levels[1] == levels[2])
            throw ConfigError(std::string("factor ") + id + ": levels must be pairwise distinct");
    }
};

inline FactorSpec numeric_factor(char id, std::string desc, FactorKind kind,
                                 std::array<double, 3> levels, std::string unit) {
    FactorSpec f;
    f.id = id;
    f.description = std::move(desc);
    f.kind = kind;
    f.levels = levels;
    for (int i = 0; i < 3; ++i) f.labels[static_cast<std::size_t>(i)] = format_double(levels[static_cast<std::size_t>(i)]);
    f.unit = std::move(unit);
    return f;
}

/// An ordered factor set; ids must be unique.
struct FactorSet {
    std::vector<FactorSpec> factors;

    std::size_t size() const { return factors.size(); }
    const FactorSpec& operator[](std::size_t i) const { return factors[i]; }

    int index_of(char id) const {
        for (std::size_t i = 0; i < factors.size(); ++i)
            if (factors[i].id == id) return static_cast<int>(i);
        return -1;
    }

    void validate() const {
        for (std::size_t i = 0; i < factors.size(); ++i) {
            factors[i].validate();
            for (std::size_t j = i + 1; j < factors.size(); ++j)
                if (factors[i].id == factors[j].id)
                    throw ConfigError(std::string("duplicate factor id ") + factors[i].id);
        }
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(factors.size());
        for (const auto& f : factors) out.emplace_back(1, f.id);
        return out;
    }
};

/// The default 11-factor table (A-K). The fertilizer amount is centered on
/// 180 kg(Nr)/ha/yr with +-20% levels.
inline FactorSet default_factor_set(double fert_baseline = 180.0) {
    FactorSet set;
    set.factors = {
        numeric_factor('A', "Horizontal mesh width", FactorKind::resolution, {12.5, 25.0, 50.0}, "m"),
        numeric_factor('B', "Vertical soil discretization thickness", FactorKind::resolution,
                       {0.02, 0.05, 0.1}, "m"),
        numeric_factor('C', "Lateral soil transmissivity", FactorKind::physical, {2.0, 8.0, 15.0},
                       "m2/day"),
        numeric_factor('D', "Transmissivity decay depth", FactorKind::physical, {0.001, 0.01, 0.1},
                       "m"),
        numeric_factor('E', "Surface layer depth", FactorKind::physical, {0.2, 0.3, 0.4}, "m"),
        numeric_factor('F', "Surface layer total porosity", FactorKind::physical, {0.12, 0.24, 0.48},
                       "-"),
        numeric_factor('G', "Micro/macroporosity ratio", FactorKind::physical, {0.5, 1.0, 1.2}, "-"),
        numeric_factor('H', "Intermediate layer depth", FactorKind::physical, {0.6, 0.9, 1.2}, "m"),
        numeric_factor('I', "Intermediate/surface microporosity ratio", FactorKind::physical,
                       {1.0, 0.75, 0.5}, "-"),
        FactorSpec{},  // J, filled below
        numeric_factor('K', "Annual fertilizer nitrogen amount", FactorKind::management,
                       {0.8 * fert_baseline, fert_baseline, 1.2 * fert_baseline}, "kg(Nr)/ha"),
    };
    FactorSpec& j = set.factors[9];
    j.id = 'J';
    j.description = "Fertilizer type";
    j.kind = FactorKind::management;
    j.levels = {0.0, 1.0, 2.0};
    j.labels = {"OL", "OF", "INO"};
    j.unit = "-";
    j.categorical = true;
    set.validate();
    return set;
}

/// Physical values for one simulator run, decoded from one design row.
struct FactorAssignment {
    double mesh_width = 50.0;                  // A [m]
    double soil_layer_thickness = 0.05;        // B [m]
    double lateral_transmissivity = 8.0;       // C [m2/day]
    double transmissivity_decay_depth = 0.01;  // D [m]
    double hs_depth = 0.3;                     // E [m]
    double hs_porosity = 0.24;                 // F [-]
    double micro_macro_ratio = 1.0;            // G [-]
    double hi_depth = 0.9;                     // H [m]
    double hi_hs_micro_ratio = 0.75;           // I [-]
    FertilizerType fertilizer = FertilizerType::organic_solid;  // J
    double fertilizer_amount = 180.0;          // K [kg(Nr)/ha/yr]
};

/// Decodes a row of level codes (0/1/2 per factor, A-K order) into physical
/// values using the given factor table.
inline FactorAssignment assignment_from_codes(const FactorSet& set,
                                              std::span<const std::uint8_t> codes) {
    if (set.size() != 11 || codes.size() != 11)
        throw LengthMismatch("assignment_from_codes expects 11 factors");
    for (std::uint8_t c : codes)
        if (c > 2) throw ConfigError("level code out of range");
    auto lvl = [&](int f) { return set[static_cast<std::size_t>(f)].levels[codes[static_cast<std::size_t>(f)]]; };
    FactorAssignment a;
    a.mesh_width = lvl(0);
    a.soil_layer_thickness = lvl(1);
    a.lateral_transmissivity = lvl(2);
    a.transmissivity_decay_depth = lvl(3);
    a.hs_depth = lvl(4);
    a.hs_porosity = lvl(5);
    a.micro_macro_ratio = lvl(6);
    a.hi_depth = lvl(7);
    a.hi_hs_micro_ratio = lvl(8);
    a.fertilizer = static_cast<FertilizerType>(codes[9]);
    a.fertilizer_amount = lvl(10);
    return a;
}

}  // namespace senskit
