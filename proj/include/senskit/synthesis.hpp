#pragma once
// Cross-outcome synthesis: cluster the per-outcome sensitivity profiles,
// decompose them with a correlation-style PCA, and classify the geometric
// relations between factor directions on the leading component planes.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "senskit/anova.hpp"
#include "senskit/cluster.hpp"
#include "senskit/common.hpp"
#include "senskit/pca.hpp"
#include "senskit/rng.hpp"

namespace senskit {

// One feature per factor: its main-effect share plus half of every pairwise
// interaction share it joins. Halving splits each interaction between its two
// factors, so a saturated profile's features sum to exactly mSI-total + i_TOT = 1.
inline Eigen::MatrixXd si_feature_matrix(const std::vector<SensitivityProfile>& profiles,
                                         int n_factors) {
    if (profiles.empty()) throw ConfigError("no sensitivity profiles supplied");
    Eigen::MatrixXd features(profiles.size(), n_factors);
    for (std::size_t row = 0; row < profiles.size(); ++row) {
        const SensitivityProfile& p = profiles[row];
        if (static_cast<int>(p.msi.size()) != n_factors)
            throw LengthMismatch("profile factor count mismatch");
        for (int f = 0; f < n_factors; ++f) {
            double share = p.msi[f];
            for (int g = 0; g < n_factors; ++g)
                if (g != f) share += 0.5 * p.isi[pair_index(std::min(f, g), std::max(f, g),
                                                            n_factors)];
            features(row, f) = share;
        }
    }
    return features;
}

// Center each feature and scale it to unit sample variance; constant features
// stay centered at zero.
inline Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x) {
    if (x.rows() < 2) throw TooFewPoints("standardization needs at least 2 rows");
    Eigen::MatrixXd out = x.rowwise() - x.colwise().mean();
    for (int c = 0; c < out.cols(); ++c) {
        const double sd = std::sqrt(out.col(c).squaredNorm() / (x.rows() - 1));
        if (sd > 0.0) out.col(c) /= sd;
    }
    return out;
}

struct FactorArrow {
    int factor = 0;
    double x = 0.0;  // loading x score-spread on the plane's first component
    double y = 0.0;
    double norm = 0.0;
};

struct ArrowPair {
    int f = 0;
    int g = 0;
    double angle_deg = 0.0;
    std::string relation;  // parallel | antiparallel | orthogonal | unclassified
};

struct PlaneResult {
    int pc_a = 1;  // 1-based component ids
    int pc_b = 2;
    double inertia_fraction = 0.0;
    Eigen::MatrixXd coords;  // outcomes x 2 score coordinates
    std::vector<FactorArrow> arrows;
    std::vector<ArrowPair> pairs;
};

struct SynthesisResult {
    Eigen::MatrixXd features;      // raw SI features, outcomes x factors
    Eigen::MatrixXd standardized;  // PCA / clustering input
    int m = 0;
    bool no_agreement = false;  // fell back to the elbow choice
    Partition partition;
    Dendrogram dendrogram;
    std::vector<double> explained_by_m;  // k-means inertia explained, m = 1..m_max
    std::vector<double> stability;       // bootstrap reappearance per cluster
    PCModel model;
    std::vector<PlaneResult> planes;
    std::vector<std::string> outcome_names;
    std::vector<std::string> factor_names;
};

namespace detail {

inline std::string classify_angle(double deg) {
    if (deg < 30.0) return "parallel";
    if (deg > 150.0) return "antiparallel";
    if (deg >= 60.0 && deg <= 120.0) return "orthogonal";
    return "unclassified";
}

}  // namespace detail

// profiles: one row per outcome, one SI feature per factor; rows must sum to 1
// (the saturated-decomposition identity) within 1e-6.
inline SynthesisResult synthesize(const Eigen::MatrixXd& profiles, int m_max,
                                  std::uint64_t seed,
                                  std::vector<std::string> outcome_names = {},
                                  std::vector<std::string> factor_names = {}) {
    const int n = static_cast<int>(profiles.rows());
    const int nf = static_cast<int>(profiles.cols());
    if (n < 3) throw TooFewPoints("synthesis needs at least 3 outcome profiles");
    for (int row = 0; row < n; ++row)
        if (std::abs(profiles.row(row).sum() - 1.0) > 1e-6)
            throw ConfigError("profile row " + std::to_string(row) + " does not sum to 1");
    if (m_max < 2 || m_max > n) throw ConfigError("m_max must be in [2, n_outcomes]");

    SynthesisResult res;
    res.features = profiles;
    res.standardized = standardize_columns(profiles);
    res.outcome_names = std::move(outcome_names);
    res.factor_names = std::move(factor_names);
    if (res.outcome_names.empty())
        for (int i = 0; i < n; ++i) res.outcome_names.push_back("outcome" + std::to_string(i));
    if (res.factor_names.empty())
        for (int f = 0; f < nf; ++f) res.factor_names.push_back("factor" + std::to_string(f));

    const int n_comp = std::min(3, std::min(n, nf));
    res.model = pca(res.standardized, n_comp);  // DegenerateData propagates

    res.dendrogram = ward(res.standardized);
    for (int m = 1; m <= m_max; ++m)
        res.explained_by_m.push_back(
            kmeans(res.standardized, m, derive_seed(seed, static_cast<std::uint64_t>(m)))
                .inertia_explained);

    res.m = minimal_agreement_M(res.standardized, m_max, seed);
    if (res.m == kNoAgreement) {
        res.no_agreement = true;
        res.m = elbow(res.explained_by_m, 1).m;
        if (res.m < 2) res.m = 2;
    }
    res.partition = cut(res.dendrogram, res.m);
    res.stability =
        bootstrap_stability(res.standardized, res.m, 100, derive_seed(seed, 0xB007));

    // Arrow lengths scale loadings by the score spread of each component, so
    // on standardized data an arrow coordinate is the factor's correlation
    // with that component and near-zero components collapse to the origin.
    Eigen::VectorXd spread(n_comp);
    for (int c = 0; c < n_comp; ++c)
        spread(c) = std::sqrt(res.model.scores.col(c).squaredNorm() / (n - 1));

    std::vector<std::pair<int, int>> plane_ids;
    if (n_comp >= 2) plane_ids.push_back({0, 1});
    if (n_comp >= 3) {
        plane_ids.push_back({0, 2});
        plane_ids.push_back({1, 2});
    }
    for (const auto& [a, b] : plane_ids) {
        PlaneResult plane;
        plane.pc_a = a + 1;
        plane.pc_b = b + 1;
        plane.inertia_fraction = res.model.inertia[a] + res.model.inertia[b];
        plane.coords.resize(n, 2);
        plane.coords.col(0) = res.model.scores.col(a);
        plane.coords.col(1) = res.model.scores.col(b);

        for (int f = 0; f < nf; ++f) {
            FactorArrow arrow;
            arrow.factor = f;
            arrow.x = res.model.loadings(f, a) * spread(a);
            arrow.y = res.model.loadings(f, b) * spread(b);
            arrow.norm = std::hypot(arrow.x, arrow.y);
            plane.arrows.push_back(arrow);
        }
        for (int f = 0; f < nf; ++f)
            for (int g = f + 1; g < nf; ++g) {
                ArrowPair pair;
                pair.f = f;
                pair.g = g;
                const FactorArrow& u = plane.arrows[f];
                const FactorArrow& v = plane.arrows[g];
                if (u.norm < 1e-9 || v.norm < 1e-9) {
                    pair.angle_deg = 0.0;
                    pair.relation = "unclassified";
                } else {
                    double c = (u.x * v.x + u.y * v.y) / (u.norm * v.norm);
                    c = std::clamp(c, -1.0, 1.0);
                    pair.angle_deg = std::acos(c) * 180.0 / 3.141592653589793;
                    pair.relation = detail::classify_angle(pair.angle_deg);
                }
                plane.pairs.push_back(pair);
            }
        res.planes.push_back(std::move(plane));
    }
    return res;
}

inline nlohmann::json synthesis_to_json(const SynthesisResult& res) {
    nlohmann::json j;
    j["m"] = res.m;
    j["no_agreement"] = res.no_agreement;
    j["outcomes"] = res.outcome_names;
    j["factors"] = res.factor_names;
    j["labels"] = res.partition.labels;
    j["inertia_explained"] = res.partition.inertia_explained;
    j["explained_by_m"] = res.explained_by_m;
    j["stability"] = res.stability;

    nlohmann::json features = nlohmann::json::array();
    for (int row = 0; row < res.features.rows(); ++row) {
        nlohmann::json r = nlohmann::json::array();
        for (int c = 0; c < res.features.cols(); ++c) r.push_back(res.features(row, c));
        features.push_back(r);
    }
    j["features"] = features;

    nlohmann::json planes = nlohmann::json::array();
    for (const PlaneResult& plane : res.planes) {
        nlohmann::json p;
        p["pc_a"] = plane.pc_a;
        p["pc_b"] = plane.pc_b;
        p["inertia_fraction"] = plane.inertia_fraction;
        nlohmann::json coords = nlohmann::json::array();
        for (int row = 0; row < plane.coords.rows(); ++row)
            coords.push_back({plane.coords(row, 0), plane.coords(row, 1)});
        p["coords"] = coords;
        nlohmann::json arrows = nlohmann::json::array();
        for (const FactorArrow& a : plane.arrows)
            arrows.push_back({{"factor", res.factor_names[a.factor]},
                              {"x", a.x},
                              {"y", a.y},
                              {"norm", a.norm}});
        p["arrows"] = arrows;
        nlohmann::json pairs = nlohmann::json::array();
        for (const ArrowPair& ap : plane.pairs)
            pairs.push_back({{"f", res.factor_names[ap.f]},
                             {"g", res.factor_names[ap.g]},
                             {"angle_deg", ap.angle_deg},
                             {"relation", ap.relation}});
        p["pairs"] = pairs;
        planes.push_back(p);
    }
    j["planes"] = planes;
    return j;
}

inline void write_synthesis_json(const std::filesystem::path& path, const SynthesisResult& res) {
    write_file(path, synthesis_to_json(res).dump(2) + "\n");
}

}  // namespace senskit
