#pragma once
// Principal-component decomposition of multivariate responses and
// inertia-weighted generalized sensitivity indexes on the component scores.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "senskit/anova.hpp"
#include "senskit/common.hpp"
#include "senskit/csv.hpp"
#include "senskit/design.hpp"

namespace senskit {

struct PCModel {
    Eigen::MatrixXd loadings;      // n_columns x n_components, orthonormal columns
    Eigen::MatrixXd scores;        // n_runs x n_components = centered data x loadings
    std::vector<double> inertia;   // full spectrum, fraction of total variance each
    Eigen::VectorXd column_means;  // centering vector
};

inline Eigen::MatrixXd to_matrix(std::span<const double> data, int rows, int cols) {
    if (data.size() != static_cast<std::size_t>(rows) * cols)
        throw LengthMismatch("flat data does not match rows x cols");
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r) * cols + c];
    return m;
}

// Column-centered SVD. Columns keep their physical units; no standardization.
// Sign convention: in each loading column the entry of largest magnitude
// (lowest index on ties) is made positive, so output is platform-stable.
inline PCModel pca(const Eigen::MatrixXd& data, int n_components) {
    const int n = static_cast<int>(data.rows());
    const int p = static_cast<int>(data.cols());
    if (n_components < 1 || n_components > std::min(n, p))
        throw ConfigError("n_components must be in [1, min(n_runs, n_columns)]");
    if (!data.allFinite()) throw NonFiniteState("non-finite entries in data matrix");

    PCModel model;
    model.column_means = data.colwise().mean();
    Eigen::MatrixXd centered = data.rowwise() - model.column_means.transpose();

    const double total = centered.squaredNorm();
    if (total <= 0.0) throw DegenerateData("all columns constant; no variance to decompose");

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();

    model.inertia.resize(s.size());
    for (int i = 0; i < s.size(); ++i) model.inertia[i] = s(i) * s(i) / total;

    model.loadings = svd.matrixV().leftCols(n_components);
    for (int c = 0; c < n_components; ++c) {
        int arg = 0;
        for (int r = 1; r < p; ++r)
            if (std::abs(model.loadings(r, c)) > std::abs(model.loadings(arg, c))) arg = r;
        if (model.loadings(arg, c) < 0.0) model.loadings.col(c) *= -1.0;
    }
    model.scores = centered * model.loadings;
    return model;
}

inline PCModel pca(std::span<const double> data, int rows, int cols, int n_components) {
    return pca(to_matrix(data, rows, cols), n_components);
}

struct PCSensitivity {
    std::vector<SensitivityProfile> components;  // one ANOVA profile per kept score
    std::vector<double> inertia;                 // raw inertia of the kept components
    std::vector<double> gsi;       // per factor: sum over kept comps of weight * tSI
    std::vector<double> gsi_main;  // same with mSI
};

// Weights are the kept inertias renormalized to sum to 1, so GSI stays a
// fraction of the variance the kept components carry.
inline PCSensitivity pc_sensitivity(const DesignMatrix& design, const PCModel& model,
                                    int n_keep) {
    if (model.scores.rows() != design.n_runs)
        throw LengthMismatch("score rows do not align with design runs");
    if (n_keep < 1 || n_keep > model.scores.cols())
        throw ConfigError("n_keep must be in [1, n_components]");

    const AnovaEngine engine(design);
    PCSensitivity out;
    out.inertia.assign(model.inertia.begin(), model.inertia.begin() + n_keep);
    double kept = 0.0;
    for (double w : out.inertia) kept += w;

    out.gsi.assign(design.n_factors, 0.0);
    out.gsi_main.assign(design.n_factors, 0.0);
    std::vector<double> column(design.n_runs);
    for (int c = 0; c < n_keep; ++c) {
        for (int r = 0; r < design.n_runs; ++r) column[r] = model.scores(r, c);
        out.components.push_back(engine.fit(column));
        const double w = kept > 0.0 ? out.inertia[c] / kept : 0.0;
        for (int f = 0; f < design.n_factors; ++f) {
            out.gsi[f] += w * out.components.back().tsi[f];
            out.gsi_main[f] += w * out.components.back().msi[f];
        }
    }
    return out;
}

inline void write_pc_model_csv(const std::string& loadings_path, const std::string& scores_path,
                               const std::string& inertia_path, const PCModel& model,
                               std::span<const std::string> column_labels = {}) {
    const int p = static_cast<int>(model.loadings.rows());
    const int k = static_cast<int>(model.loadings.cols());
    CsvWriter lw;
    lw.cell("column");
    lw.cell("mean");
    for (int c = 0; c < k; ++c) lw.cell("pc" + std::to_string(c + 1));
    lw.endrow();
    for (int r = 0; r < p; ++r) {
        lw.cell(column_labels.empty() ? std::to_string(r) : column_labels[r]);
        lw.cell(model.column_means(r));
        for (int c = 0; c < k; ++c) lw.cell(model.loadings(r, c));
        lw.endrow();
    }
    lw.save(loadings_path);

    CsvWriter sw;
    sw.cell("run");
    for (int c = 0; c < k; ++c) sw.cell("pc" + std::to_string(c + 1));
    sw.endrow();
    for (int r = 0; r < model.scores.rows(); ++r) {
        sw.cell(static_cast<std::size_t>(r));
        for (int c = 0; c < k; ++c) sw.cell(model.scores(r, c));
        sw.endrow();
    }
    sw.save(scores_path);

    CsvWriter iw;
    iw.row("component", "inertia");
    for (std::size_t i = 0; i < model.inertia.size(); ++i)
        iw.row("pc" + std::to_string(i + 1), model.inertia[i]);
    iw.save(inertia_path);
}

inline void write_pc_sensitivity_csv(const std::string& path, std::span<const std::string> ids,
                                     const PCSensitivity& s) {
    CsvWriter w;
    w.row("response_id", "term", "index", "value");
    for (std::size_t c = 0; c < s.components.size(); ++c) {
        const std::string id = "pc" + std::to_string(c + 1);
        append_profile_rows(w, id, ids, s.components[c]);
        w.row(id, "", "inertia", s.inertia[c]);
    }
    for (std::size_t f = 0; f < ids.size(); ++f) {
        w.row("generalized", ids[f], "GSI", s.gsi[f]);
        w.row("generalized", ids[f], "GSI_main", s.gsi_main[f]);
    }
    w.save(path);
}

}  // namespace senskit
