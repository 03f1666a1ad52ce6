#pragma once
// Flat and hierarchical clustering, partition comparison, cluster-count
// selection, and factor-cluster association tests.
//
// All stochastic steps draw from mt19937_64 streams derived from explicit
// seeds, so every result is reproducible bit for bit.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "senskit/common.hpp"
#include "senskit/csv.hpp"
#include "senskit/rng.hpp"

namespace senskit {

enum class ClusterMethod { kmeans, ward_cut };

struct Partition {
    std::vector<int> labels;  // one per object, values 1..m
    int m = 0;
    ClusterMethod method = ClusterMethod::kmeans;
    double inertia_explained = 0.0;  // between-cluster SS / total SS
    std::uint64_t seed = 0;
};

struct KmeansDiagnostics {
    std::vector<double> wcss_history;  // winning restart, one entry per Lloyd pass
    int empty_repairs = 0;
    double wcss = 0.0;
};

namespace detail {

inline void check_points(const Eigen::MatrixXd& x) {
    if (!x.allFinite()) throw NonFiniteState("non-finite coordinates in clustering input");
}

inline double total_ss(const Eigen::MatrixXd& x) {
    return (x.rowwise() - x.colwise().mean()).squaredNorm();
}

// Relabels cluster ids to 1..m in order of first appearance.
inline void canonicalize_labels(std::vector<int>& labels, int m) {
    std::vector<int> remap(m + 1, 0);
    int next = 1;
    for (int& l : labels) {
        if (remap[l] == 0) remap[l] = next++;
        l = remap[l];
    }
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding; best of 10 restarts by
// within-cluster SS. Empty clusters are repaired by reseeding at the point
// farthest from its current center (count reported via diagnostics).
inline Partition kmeans(const Eigen::MatrixXd& x, int m, std::uint64_t seed,
                        KmeansDiagnostics* diag = nullptr) {
    const int n = static_cast<int>(x.rows());
    if (m < 1 || m > n) throw ConfigError("kmeans needs 1 <= m <= n");
    detail::check_points(x);

    constexpr int kRestarts = 10;
    constexpr int kMaxIter = 300;
    double best_wcss = std::numeric_limits<double>::infinity();
    std::vector<int> best_labels;
    std::vector<double> best_history;
    int best_repairs = 0;

    std::vector<double> d2(n);
    std::vector<int> labels(n), prev(n), counts(m);
    Eigen::MatrixXd centers(m, x.cols());
    for (int restart = 0; restart < kRestarts; ++restart) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(restart)));

        centers.row(0) = x.row(static_cast<int>(uniform_below(rng, n)));
        for (int i = 0; i < n; ++i) d2[i] = (x.row(i) - centers.row(0)).squaredNorm();
        for (int k = 1; k < m; ++k) {
            double total = 0.0;
            for (double v : d2) total += v;
            const std::size_t pick =
                total > 0.0 ? weighted_pick(rng, d2, total) : uniform_below(rng, n);
            centers.row(k) = x.row(static_cast<int>(pick));
            for (int i = 0; i < n; ++i)
                d2[i] = std::min(d2[i], (x.row(i) - centers.row(k)).squaredNorm());
        }

        std::fill(prev.begin(), prev.end(), -1);
        std::vector<double> history;
        int repairs = 0;
        for (int iter = 0; iter < kMaxIter; ++iter) {
            std::fill(counts.begin(), counts.end(), 0);
            for (int i = 0; i < n; ++i) {
                int arg = 0;
                double best = (x.row(i) - centers.row(0)).squaredNorm();
                for (int k = 1; k < m; ++k) {
                    const double v = (x.row(i) - centers.row(k)).squaredNorm();
                    if (v < best) {
                        best = v;
                        arg = k;
                    }
                }
                labels[i] = arg;
                ++counts[arg];
            }

            bool repaired = false;
            for (int k = 0; k < m; ++k) {
                if (counts[k] > 0) continue;
                int far = -1;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    if (counts[labels[i]] < 2) continue;
                    const double v = (x.row(i) - centers.row(labels[i])).squaredNorm();
                    if (v > far_d) {
                        far_d = v;
                        far = i;
                    }
                }
                --counts[labels[far]];
                labels[far] = k;
                ++counts[k];
                ++repairs;
                repaired = true;
            }

            centers.setZero();
            for (int i = 0; i < n; ++i) centers.row(labels[i]) += x.row(i);
            for (int k = 0; k < m; ++k) centers.row(k) /= static_cast<double>(counts[k]);

            double wcss = 0.0;
            for (int i = 0; i < n; ++i) wcss += (x.row(i) - centers.row(labels[i])).squaredNorm();
            history.push_back(wcss);

            if (!repaired && labels == prev) break;
            prev = labels;
        }

        if (history.back() < best_wcss) {
            best_wcss = history.back();
            best_labels = labels;
            best_history = std::move(history);
            best_repairs = repairs;
        }
    }

    for (int& l : best_labels) ++l;
    detail::canonicalize_labels(best_labels, m);
    Partition p;
    p.labels = std::move(best_labels);
    p.m = m;
    p.method = ClusterMethod::kmeans;
    p.seed = seed;
    const double tss = detail::total_ss(x);
    p.inertia_explained = tss > 0.0 ? std::clamp(1.0 - best_wcss / tss, 0.0, 1.0) : 0.0;
    if (diag != nullptr) {
        diag->wcss_history = std::move(best_history);
        diag->empty_repairs = best_repairs;
        diag->wcss = best_wcss;
    }
    return p;
}

struct Dendrogram {
    struct Merge {
        int left = 0;  // cluster ids: 0..n-1 leaves, n + k for the k-th merge
        int right = 0;
        double height = 0.0;  // within-cluster SS gained by this merge
    };
    int n_leaves = 0;
    std::vector<Merge> merges;  // n_leaves - 1 entries, heights non-decreasing
};

// Agglomerative Ward linkage via the Lance-Williams update. Pair distance is
// kept in inertia-gain form, D(i,j) = n_i n_j / (n_i + n_j) * ||c_i - c_j||^2,
// seeded at half the squared point distance, so merge heights sum to the
// total SS of the data.
inline Dendrogram ward(const Eigen::MatrixXd& x) {
    const int n = static_cast<int>(x.rows());
    if (n < 2) throw TooFewPoints("ward needs at least 2 objects");
    detail::check_points(x);

    const int total = 2 * n - 1;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<std::size_t>(total) * total, inf);
    auto d = [&dist, total](int a, int b) -> double& {
        if (a > b) std::swap(a, b);
        return dist[static_cast<std::size_t>(a) * total + b];
    };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) d(i, j) = 0.5 * (x.row(i) - x.row(j)).squaredNorm();

    std::vector<double> size(total, 0.0);
    std::fill(size.begin(), size.begin() + n, 1.0);
    std::vector<int> active;
    for (int i = 0; i < n; ++i) active.push_back(i);

    Dendrogram out;
    out.n_leaves = n;
    for (int step = 0; step < n - 1; ++step) {
        int bi = -1, bj = -1;
        double best = inf;
        for (std::size_t a = 0; a < active.size(); ++a)
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                const double v = d(active[a], active[b]);
                if (v < best) {
                    best = v;
                    bi = active[a];
                    bj = active[b];
                }
            }

        const int id = n + step;
        out.merges.push_back({bi, bj, best});
        size[id] = size[bi] + size[bj];
        for (int k : active) {
            if (k == bi || k == bj) continue;
            d(id, k) = ((size[bi] + size[k]) * d(bi, k) + (size[bj] + size[k]) * d(bj, k) -
                        size[k] * best) /
                       (size[id] + size[k]);
        }
        active.erase(std::remove(active.begin(), active.end(), bi), active.end());
        active.erase(std::remove(active.begin(), active.end(), bj), active.end());
        active.push_back(id);
    }
    return out;
}

// Partition at m clusters: applies the first n - m merges. Because heights
// are non-decreasing this equals cutting the tree below the next merge.
inline Partition cut(const Dendrogram& dend, int m) {
    const int n = dend.n_leaves;
    if (m < 1 || m > n) throw ConfigError("cut needs 1 <= m <= n_leaves");

    std::vector<int> parent(static_cast<std::size_t>(n) + dend.merges.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    auto find = [&parent](int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    };

    double applied = 0.0, total = 0.0;
    for (int k = 0; k < n - 1; ++k) total += dend.merges[k].height;
    for (int k = 0; k < n - m; ++k) {
        const auto& mg = dend.merges[k];
        parent[find(mg.left)] = n + k;
        parent[find(mg.right)] = n + k;
        applied += mg.height;
    }

    Partition p;
    p.labels.resize(n);
    std::map<int, int> relabel;
    for (int i = 0; i < n; ++i) {
        const int root = find(i);
        auto [it, fresh] = relabel.emplace(root, static_cast<int>(relabel.size()) + 1);
        p.labels[i] = it->second;
        (void)fresh;
    }
    p.m = m;
    p.method = ClusterMethod::ward_cut;
    p.inertia_explained = total > 0.0 ? std::clamp(1.0 - applied / total, 0.0, 1.0) : 0.0;
    return p;
}

// Permutation-model adjusted Rand index; exactly 1 iff the partitions are
// identical up to label renaming.
inline double adjusted_rand(const Partition& p1, const Partition& p2) {
    const std::size_t n = p1.labels.size();
    if (n != p2.labels.size() || n == 0)
        throw ObjectMismatch("partitions cover different object sets");

    std::map<std::pair<int, int>, double> cells;
    std::map<int, double> rows, cols;
    for (std::size_t i = 0; i < n; ++i) {
        cells[{p1.labels[i], p2.labels[i]}] += 1.0;
        rows[p1.labels[i]] += 1.0;
        cols[p2.labels[i]] += 1.0;
    }
    auto choose2 = [](double v) { return v * (v - 1.0) / 2.0; };
    double index = 0.0, row_sum = 0.0, col_sum = 0.0;
    for (const auto& [k, v] : cells) index += choose2(v);
    for (const auto& [k, v] : rows) row_sum += choose2(v);
    for (const auto& [k, v] : cols) col_sum += choose2(v);
    const double expected = row_sum * col_sum / choose2(static_cast<double>(n));
    const double max_index = 0.5 * (row_sum + col_sum);
    if (max_index == expected) return index == expected ? 1.0 : 0.0;
    return (index - expected) / (max_index - expected);
}

struct ElbowResult {
    int m = 0;
    bool no_elbow = false;
};

// Picks the m with the largest drop in marginal explained-variance gain
// (most negative second difference). Input entry k is the explained variance
// at m_start + k clusters.
inline ElbowResult elbow(const std::vector<double>& explained, int m_start = 1) {
    if (explained.size() < 3) throw TooFewPoints("elbow needs at least 3 cluster counts");
    double range = 0.0;
    for (std::size_t i = 1; i < explained.size(); ++i) {
        if (explained[i] < explained[i - 1] - 1e-9)
            throw ConfigError("explained variance must be non-decreasing in m");
        range = std::max(range, explained[i] - explained[0]);
    }

    std::size_t arg = 1;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < explained.size(); ++i) {
        const double drop = (explained[i] - explained[i - 1]) - (explained[i + 1] - explained[i]);
        if (drop > best) {
            best = drop;
            arg = i;
        }
    }
    ElbowResult out;
    if (best <= 1e-12 * std::max(1.0, range)) {
        out.no_elbow = true;
        out.m = m_start;
    } else {
        out.m = m_start + static_cast<int>(arg);
    }
    return out;
}

constexpr int kNoAgreement = -1;

// Smallest m in 2..m_max where k-means and the Ward cut classify identically.
inline int minimal_agreement_M(const Eigen::MatrixXd& x, int m_max, std::uint64_t seed) {
    const int n = static_cast<int>(x.rows());
    if (m_max < 2 || m_max > n) throw ConfigError("minimal_agreement_M needs 2 <= m_max <= n");
    const Dendrogram dend = ward(x);
    for (int m = 2; m <= m_max; ++m) {
        const Partition a = kmeans(x, m, derive_seed(seed, static_cast<std::uint64_t>(m)));
        const Partition b = cut(dend, m);
        if (adjusted_rand(a, b) == 1.0) return m;
    }
    return kNoAgreement;
}

// Regularized upper incomplete gamma Q(a, x): series for the lower tail,
// continued fraction (modified Lentz) otherwise.
inline double gamma_q(double a, double x) {
    if (a <= 0.0 || x < 0.0) throw ConfigError("gamma_q needs a > 0 and x >= 0");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) {
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-16) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, dd = 1.0 / b, h = dd;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        dd = an * dd + b;
        if (std::abs(dd) < tiny) dd = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        dd = 1.0 / dd;
        const double delta = dd * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

struct AssociationTest {
    std::vector<long> counts;  // row-major n_rows x n_cols contingency table
    int n_rows = 0;            // clusters
    int n_cols = 0;            // factor levels
    double chi2 = 0.0;
    int df = 0;
    double p_value = 1.0;
    bool low_expected = false;  // any expected count < 5 (Cochran screen)
};

// Pearson chi-square independence test of cluster labels against the levels
// of one factor. Exact zeros survive: when observed equals expected in every
// cell the statistic is 0.0 with no rounding residue.
inline AssociationTest chi_square_association(const Partition& p,
                                              const std::vector<int>& factor_levels) {
    const std::size_t n = p.labels.size();
    if (n != factor_levels.size() || n == 0)
        throw ObjectMismatch("partition and factor column differ in length");

    std::map<int, int> level_of;
    for (int v : factor_levels) level_of.emplace(v, 0);
    int next = 0;
    for (auto& [k, v] : level_of) v = next++;
    const int rows = p.m;
    const int cols = next;
    if (rows < 2 || cols < 2)
        throw DegenerateTable("association test needs >= 2 clusters and >= 2 levels");

    AssociationTest t;
    t.n_rows = rows;
    t.n_cols = cols;
    t.counts.assign(static_cast<std::size_t>(rows) * cols, 0);
    for (std::size_t i = 0; i < n; ++i)
        ++t.counts[static_cast<std::size_t>(p.labels[i] - 1) * cols + level_of[factor_levels[i]]];

    std::vector<double> row_tot(rows, 0.0), col_tot(cols, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            row_tot[r] += t.counts[static_cast<std::size_t>(r) * cols + c];
            col_tot[c] += t.counts[static_cast<std::size_t>(r) * cols + c];
        }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double expected = row_tot[r] * col_tot[c] / static_cast<double>(n);
            if (expected <= 0.0) continue;
            if (expected < 5.0) t.low_expected = true;
            const double o = static_cast<double>(t.counts[static_cast<std::size_t>(r) * cols + c]);
            const double diff = o - expected;
            if (diff != 0.0) t.chi2 += diff * diff / expected;
        }
    t.df = (rows - 1) * (cols - 1);
    t.p_value = gamma_q(t.df / 2.0, t.chi2 / 2.0);
    return t;
}

// Fraction of B bootstrap resamples in which each original cluster reappears
// (some resample cluster matches it with Jaccard >= 0.75). Both sides are
// compared on the distinct objects drawn into the resample, so a perfectly
// reproducible cluster scores 1 despite resampling omitting ~1/e of objects.
inline std::vector<double> bootstrap_stability(const Eigen::MatrixXd& x, int m, int B,
                                               std::uint64_t seed) {
    if (B < 100) throw ConfigError("bootstrap_stability needs B >= 100");
    const int n = static_cast<int>(x.rows());
    const Partition base = kmeans(x, m, seed);

    std::vector<double> hits(m, 0.0);
    Eigen::MatrixXd xb(n, x.cols());
    std::vector<int> picked(n);
    for (int b = 0; b < B; ++b) {
        std::mt19937_64 rng(derive_seed(seed, 0x9000 + static_cast<std::uint64_t>(b)));
        for (int i = 0; i < n; ++i) {
            picked[i] = static_cast<int>(uniform_below(rng, n));
            xb.row(i) = x.row(picked[i]);
        }
        const Partition pb = kmeans(xb, m, derive_seed(seed, 0x5000 + static_cast<std::uint64_t>(b)));
        std::vector<std::set<int>> sets(m), induced(m);
        for (int i = 0; i < n; ++i) {
            sets[pb.labels[i] - 1].insert(picked[i]);
            induced[base.labels[picked[i]] - 1].insert(picked[i]);
        }

        for (int c = 0; c < m; ++c) {
            double best = 0.0;
            for (int k = 0; k < m; ++k) {
                if (sets[k].empty()) continue;
                std::size_t inter = 0;
                for (int v : sets[k]) inter += induced[c].count(v);
                const double uni = static_cast<double>(induced[c].size() + sets[k].size() - inter);
                best = std::max(best, static_cast<double>(inter) / uni);
            }
            if (best >= 0.75) hits[c] += 1.0;
        }
    }
    for (double& h : hits) h /= B;
    return hits;
}

inline void write_dendrogram_csv(const std::string& path, const Dendrogram& d) {
    CsvWriter w;
    w.row("merge", "left", "right", "height");
    for (std::size_t k = 0; k < d.merges.size(); ++k)
        w.row(k, std::to_string(d.merges[k].left), std::to_string(d.merges[k].right),
              d.merges[k].height);
    w.save(path);
}

inline void write_partition_csv(const std::string& path, const Partition& p,
                                std::span<const std::string> object_ids = {}) {
    CsvWriter w;
    w.row("object", "cluster");
    for (std::size_t i = 0; i < p.labels.size(); ++i)
        w.row(object_ids.empty() ? std::to_string(i) : object_ids[i], p.labels[i]);
    w.save(path);
}

inline void append_association_row(CsvWriter& w, const std::string& clustering,
                                   const std::string& factor, const AssociationTest& t) {
    w.row(clustering, factor, t.chi2, t.df, t.p_value, t.low_expected ? 1 : 0,
          t.p_value < 0.05 ? 1 : 0);
}

}  // namespace senskit
