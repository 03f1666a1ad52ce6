#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "fixtures.hpp"
#include "senskit/cluster.hpp"
#include "senskit/design.hpp"
#include "senskit/rng.hpp"

using namespace senskit;
using senskit_tests::five_cluster_fixture;
using senskit_tests::three_blob_fixture;

namespace {

Partition make_partition(std::vector<int> labels, int m) {
    Partition p;
    p.labels = std::move(labels);
    p.m = m;
    return p;
}

int count_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    int n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

}  // namespace

TEST_CASE("kmeans recovers well-separated blobs exactly") {
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        std::vector<int> planted;
        const Eigen::MatrixXd x = three_blob_fixture(seed, &planted);
        const Partition p = kmeans(x, 3, seed);
        REQUIRE(p.m == 3);
        REQUIRE(p.method == ClusterMethod::kmeans);
        REQUIRE(adjusted_rand(p, make_partition(planted, 3)) == 1.0);
        REQUIRE(p.inertia_explained > 0.99);
        // Labels are canonical: 1 for the first object, then first appearance.
        REQUIRE(p.labels[0] == 1);
        REQUIRE(*std::max_element(p.labels.begin(), p.labels.end()) == 3);
    }
}

TEST_CASE("kmeans boundary cases and determinism") {
    std::vector<int> planted;
    const Eigen::MatrixXd x = three_blob_fixture(42, &planted);
    const int n = static_cast<int>(x.rows());

    SECTION("m = 1 explains no inertia") {
        const Partition p = kmeans(x, 1, 7);
        REQUIRE(p.inertia_explained == 0.0);
        REQUIRE(std::all_of(p.labels.begin(), p.labels.end(), [](int l) { return l == 1; }));
    }
    SECTION("m = n explains all inertia") {
        const Partition p = kmeans(x, n, 7);
        REQUIRE(p.inertia_explained == 1.0);
        std::set<int> distinct(p.labels.begin(), p.labels.end());
        REQUIRE(static_cast<int>(distinct.size()) == n);
    }
    SECTION("duplicated rows always share a cluster") {
        Eigen::MatrixXd xd(n + 3, x.cols());
        xd.topRows(n) = x;
        for (int i = 0; i < 3; ++i) xd.row(n + i) = x.row(5);
        const Partition p = kmeans(xd, 3, 99);
        for (int i = 0; i < 3; ++i) REQUIRE(p.labels[n + i] == p.labels[5]);
    }
    SECTION("same seed reproduces labels bit for bit") {
        const Partition a = kmeans(x, 4, 1234);
        const Partition b = kmeans(x, 4, 1234);
        REQUIRE(a.labels == b.labels);
        REQUIRE(a.inertia_explained == b.inertia_explained);
    }
    SECTION("invalid m or non-finite input is rejected") {
        REQUIRE_THROWS_AS(kmeans(x, 0, 1), ConfigError);
        REQUIRE_THROWS_AS(kmeans(x, n + 1, 1), ConfigError);
        Eigen::MatrixXd bad = x;
        bad(2, 0) = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(kmeans(bad, 2, 1), NonFiniteState);
    }
}

TEST_CASE("kmeans objective descends within a run and improves with m") {
    std::vector<int> planted;
    const Eigen::MatrixXd x = three_blob_fixture(3, &planted);

    KmeansDiagnostics diag;
    kmeans(x, 3, 17, &diag);
    REQUIRE(!diag.wcss_history.empty());
    for (std::size_t i = 1; i < diag.wcss_history.size(); ++i)
        REQUIRE(diag.wcss_history[i] <= diag.wcss_history[i - 1] * (1.0 + 1e-12) + 1e-12);
    REQUIRE(diag.wcss == diag.wcss_history.back());
    REQUIRE(diag.empty_repairs >= 0);

    double prev = -1.0;
    for (int m = 1; m <= 6; ++m) {
        const Partition p = kmeans(x, m, derive_seed(7, static_cast<std::uint64_t>(m)));
        REQUIRE(p.inertia_explained >= prev);
        prev = p.inertia_explained;
    }
}

TEST_CASE("ward linkage matches hand-computed merges") {
    SECTION("two points merge at half the squared distance") {
        Eigen::MatrixXd x(2, 2);
        x << 0.0, 0.0, 3.0, 4.0;
        const Dendrogram d = ward(x);
        REQUIRE(d.n_leaves == 2);
        REQUIRE(d.merges.size() == 1);
        REQUIRE(d.merges[0].height == Catch::Approx(12.5).margin(1e-12));
    }
    SECTION("three collinear points") {
        Eigen::MatrixXd x(3, 1);
        x << 0.0, 1.0, 10.0;
        const Dendrogram d = ward(x);
        REQUIRE(d.merges.size() == 2);
        REQUIRE(d.merges[0].left == 0);
        REQUIRE(d.merges[0].right == 1);
        REQUIRE(d.merges[0].height == Catch::Approx(0.5).margin(1e-12));
        // Merging {0,1} (centroid 0.5) with {10}: 2*1/3 * 9.5^2.
        REQUIRE(d.merges[1].height == Catch::Approx(2.0 / 3.0 * 9.5 * 9.5).margin(1e-12));
    }
    SECTION("heights are non-decreasing and sum to the total SS") {
        std::vector<int> planted;
        const Eigen::MatrixXd x = three_blob_fixture(8, &planted);
        const Dendrogram d = ward(x);
        double sum = 0.0;
        for (std::size_t k = 0; k < d.merges.size(); ++k) {
            if (k > 0) REQUIRE(d.merges[k].height >= d.merges[k - 1].height - 1e-9);
            sum += d.merges[k].height;
        }
        const double tss = (x.rowwise() - x.colwise().mean()).squaredNorm();
        REQUIRE(sum == Catch::Approx(tss).epsilon(1e-10));
    }
    SECTION("fewer than two objects is rejected") {
        Eigen::MatrixXd x(1, 2);
        x << 0.0, 0.0;
        REQUIRE_THROWS_AS(ward(x), TooFewPoints);
    }
}

TEST_CASE("cutting the dendrogram recovers planted structure") {
    std::vector<int> planted;
    const Eigen::MatrixXd x = three_blob_fixture(21, &planted);
    const Dendrogram d = ward(x);
    const int n = d.n_leaves;

    const Partition p3 = cut(d, 3);
    REQUIRE(p3.method == ClusterMethod::ward_cut);
    REQUIRE(adjusted_rand(p3, make_partition(planted, 3)) == 1.0);
    REQUIRE(p3.inertia_explained > 0.99);
    REQUIRE(p3.labels[0] == 1);

    const Partition p1 = cut(d, 1);
    REQUIRE(p1.inertia_explained == 0.0);
    REQUIRE(std::all_of(p1.labels.begin(), p1.labels.end(), [](int l) { return l == 1; }));

    const Partition pn = cut(d, n);
    REQUIRE(pn.inertia_explained == 1.0);
    std::set<int> distinct(pn.labels.begin(), pn.labels.end());
    REQUIRE(static_cast<int>(distinct.size()) == n);

    REQUIRE_THROWS_AS(cut(d, 0), ConfigError);
    REQUIRE_THROWS_AS(cut(d, n + 1), ConfigError);
}

TEST_CASE("adjusted Rand index identities and oracle value") {
    const Partition a = make_partition({1, 1, 2, 2, 3, 3}, 3);
    SECTION("identical partitions score exactly 1") {
        REQUIRE(adjusted_rand(a, a) == 1.0);
    }
    SECTION("label permutation scores exactly 1") {
        const Partition b = make_partition({3, 3, 1, 1, 2, 2}, 3);
        REQUIRE(adjusted_rand(a, b) == 1.0);
    }
    SECTION("symmetry") {
        const Partition b = make_partition({1, 2, 2, 2, 3, 3}, 3);
        REQUIRE(adjusted_rand(a, b) == adjusted_rand(b, a));
        REQUIRE(adjusted_rand(a, b) < 1.0);
    }
    SECTION("singletons against one block score exactly 0") {
        const Partition s = make_partition({1, 2, 3, 4, 5, 6}, 6);
        const Partition o = make_partition({1, 1, 1, 1, 1, 1}, 1);
        REQUIRE(adjusted_rand(s, o) == 0.0);
    }
    SECTION("hand-computed crossing design gives -1/2") {
        const Partition p1 = make_partition({1, 1, 2, 2}, 2);
        const Partition p2 = make_partition({1, 2, 1, 2}, 2);
        REQUIRE(adjusted_rand(p1, p2) == Catch::Approx(-0.5).margin(1e-15));
    }
    SECTION("length mismatch is rejected") {
        const Partition b = make_partition({1, 1, 2}, 2);
        REQUIRE_THROWS_AS(adjusted_rand(a, b), ObjectMismatch);
    }
}

TEST_CASE("elbow selection by largest marginal-gain drop") {
    SECTION("clear knee") {
        const ElbowResult r = elbow({0.20, 0.70, 0.74, 0.76, 0.77});
        REQUIRE_FALSE(r.no_elbow);
        REQUIRE(r.m == 2);
    }
    SECTION("m_start offsets the reported count") {
        const ElbowResult r = elbow({0.0, 0.0, 0.5, 0.5}, 2);
        REQUIRE_FALSE(r.no_elbow);
        REQUIRE(r.m == 4);
    }
    SECTION("linear ramp has no elbow") {
        const ElbowResult r = elbow({0.1, 0.2, 0.3, 0.4, 0.5});
        REQUIRE(r.no_elbow);
        REQUIRE(r.m == 1);
    }
    SECTION("input validation") {
        REQUIRE_THROWS_AS(elbow({0.1, 0.2}), TooFewPoints);
        REQUIRE_THROWS_AS(elbow({0.5, 0.4, 0.6}), ConfigError);
    }
}

TEST_CASE("upper incomplete gamma matches closed forms") {
    for (double x : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0}) {
        // df = 2: Q(1, x) = exp(-x).
        REQUIRE(gamma_q(1.0, x) == Catch::Approx(std::exp(-x)).epsilon(1e-12));
        // df = 4: Q(2, x) = exp(-x) (1 + x).
        REQUIRE(gamma_q(2.0, x) == Catch::Approx(std::exp(-x) * (1.0 + x)).epsilon(1e-12));
        // df = 8: Q(4, x) = exp(-x) (1 + x + x^2/2 + x^3/6).
        REQUIRE(gamma_q(4.0, x) ==
                Catch::Approx(std::exp(-x) * (1.0 + x + x * x / 2.0 + x * x * x / 6.0))
                    .epsilon(1e-12));
        // df = 1: Q(1/2, x) = erfc(sqrt(x)).
        REQUIRE(gamma_q(0.5, x) == Catch::Approx(std::erfc(std::sqrt(x))).epsilon(1e-12));
    }
    REQUIRE(gamma_q(3.0, 0.0) == 1.0);
    REQUIRE_THROWS_AS(gamma_q(0.0, 1.0), ConfigError);
    REQUIRE_THROWS_AS(gamma_q(1.0, -0.1), ConfigError);
}

TEST_CASE("chi-square association on orthogonal design columns") {
    // 27-run full factorial: any two distinct columns hit each of the 9 level
    // pairs exactly 3 times, so observed always equals expected.
    const DesignMatrix design = generate_regular_design(3, 3, 3);
    auto column = [&design](int f) {
        std::vector<int> col(design.n_runs);
        for (int r = 0; r < design.n_runs; ++r) col[r] = design.at(r, f);
        return col;
    };
    auto as_partition = [&design, &column](int f) {
        std::vector<int> labels = column(f);
        for (int& l : labels) ++l;
        return make_partition(std::move(labels), 3);
    };

    SECTION("independent balanced columns give an exact zero statistic") {
        for (int f = 0; f < 3; ++f)
            for (int g = 0; g < 3; ++g) {
                if (f == g) continue;
                const AssociationTest t = chi_square_association(as_partition(f), column(g));
                REQUIRE(t.chi2 == 0.0);
                REQUIRE(t.p_value == 1.0);
                REQUIRE(t.df == 4);
            }
    }
    SECTION("a column against itself gives chi2 = 2n") {
        const AssociationTest t = chi_square_association(as_partition(0), column(0));
        REQUIRE(t.chi2 == Catch::Approx(2.0 * design.n_runs).margin(1e-12));
        REQUIRE(t.p_value < 1e-9);
        REQUIRE(t.n_rows == 3);
        REQUIRE(t.n_cols == 3);
    }
}

TEST_CASE("chi-square association table handling") {
    SECTION("uniform table") {
        std::vector<int> labels, levels;
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < 10; ++i) {
                    labels.push_back(r + 1);
                    levels.push_back(c);
                }
        const AssociationTest t = chi_square_association(make_partition(labels, 2), levels);
        REQUIRE(t.chi2 == 0.0);
        REQUIRE(t.p_value == 1.0);
        REQUIRE(t.df == 2);
        REQUIRE_FALSE(t.low_expected);
        REQUIRE(t.counts == std::vector<long>{10, 10, 10, 10, 10, 10});
    }
    SECTION("sparse cells raise the low-expected flag") {
        const Partition p = make_partition({1, 1, 2, 2}, 2);
        const AssociationTest t = chi_square_association(p, {0, 0, 1, 1});
        REQUIRE(t.low_expected);
    }
    SECTION("degenerate shapes are rejected") {
        REQUIRE_THROWS_AS(
            chi_square_association(make_partition({1, 1, 1}, 1), {0, 1, 2}),
            DegenerateTable);
        REQUIRE_THROWS_AS(
            chi_square_association(make_partition({1, 2, 1}, 2), {0, 0, 0}),
            DegenerateTable);
        REQUIRE_THROWS_AS(
            chi_square_association(make_partition({1, 2}, 2), {0, 1, 1}),
            ObjectMismatch);
    }
}

TEST_CASE("bootstrap stability separates stable from unstable clusterings") {
    std::vector<int> planted;
    const Eigen::MatrixXd blobs = three_blob_fixture(31, &planted);

    SECTION("well-separated blobs are maximally stable") {
        const std::vector<double> s = bootstrap_stability(blobs, 3, 100, 5);
        REQUIRE(s.size() == 3);
        for (double v : s) {
            REQUIRE(v >= 0.95);
            REQUIRE(v <= 1.0);
        }
    }
    SECTION("forcing clusters onto one blob is unstable") {
        std::mt19937_64 rng(77);
        Eigen::MatrixXd cloud(40, 2);
        for (int i = 0; i < 40; ++i) {
            cloud(i, 0) = normal01(rng);
            cloud(i, 1) = normal01(rng);
        }
        const std::vector<double> s = bootstrap_stability(cloud, 4, 100, 6);
        REQUIRE(*std::min_element(s.begin(), s.end()) < 0.8);
    }
    SECTION("too few resamples are rejected") {
        REQUIRE_THROWS_AS(bootstrap_stability(blobs, 3, 99, 5), ConfigError);
    }
}

TEST_CASE("minimal agreement count on the five-cluster benchmark") {
    for (std::uint64_t k : {1ull, 2ull, 3ull}) {
        std::vector<int> planted;
        const Eigen::MatrixXd x = five_cluster_fixture(1000 + k, &planted);
        REQUIRE(minimal_agreement_M(x, 8, k) == 5);
        const Partition truth = make_partition(planted, 5);
        REQUIRE(adjusted_rand(kmeans(x, 5, derive_seed(k, 5)), truth) == 1.0);
        REQUIRE(adjusted_rand(cut(ward(x), 5), truth) == 1.0);
    }
}

TEST_CASE("minimal agreement count on easy and adversarial inputs") {
    SECTION("two exact groups agree at m = 2") {
        Eigen::MatrixXd x(10, 2);
        for (int i = 0; i < 5; ++i) x.row(i) << 0.0, 0.0;
        for (int i = 5; i < 10; ++i) x.row(i) << 10.0, 0.0;
        REQUIRE(minimal_agreement_M(x, 5, 3) == 2);
    }
    SECTION("unstructured noise yields a valid answer or the sentinel") {
        std::mt19937_64 rng(55);
        Eigen::MatrixXd x(24, 2);
        for (int i = 0; i < 24; ++i) {
            x(i, 0) = normal01(rng);
            x(i, 1) = normal01(rng);
        }
        const int m = minimal_agreement_M(x, 6, 9);
        REQUIRE((m == kNoAgreement || (m >= 2 && m <= 6)));
    }
    SECTION("bounds are validated") {
        Eigen::MatrixXd x(4, 1);
        x << 0.0, 1.0, 2.0, 3.0;
        REQUIRE_THROWS_AS(minimal_agreement_M(x, 1, 0), ConfigError);
        REQUIRE_THROWS_AS(minimal_agreement_M(x, 5, 0), ConfigError);
    }
}

TEST_CASE("clustering CSV emitters produce well-formed tables") {
    const auto dir = std::filesystem::temp_directory_path() / "senskit_cluster_csv";
    std::filesystem::create_directories(dir);

    std::vector<int> planted;
    const Eigen::MatrixXd x = three_blob_fixture(61, &planted);
    const Dendrogram d = ward(x);
    write_dendrogram_csv((dir / "dend.csv").string(), d);
    REQUIRE(count_lines(dir / "dend.csv") == static_cast<int>(d.merges.size()) + 1);

    const Partition p = kmeans(x, 3, 2);
    write_partition_csv((dir / "part.csv").string(), p);
    REQUIRE(count_lines(dir / "part.csv") == static_cast<int>(p.labels.size()) + 1);

    CsvWriter w;
    w.row("clustering", "factor", "chi2", "df", "p_value", "low_expected", "significant");
    append_association_row(w, "kmeans_m3", "f0", chi_square_association(p, planted));
    w.save((dir / "assoc.csv").string());
    REQUIRE(count_lines(dir / "assoc.csv") == 2);

    std::ifstream in(dir / "assoc.csv");
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "clustering,factor,chi2,df,p_value,low_expected,significant");
    std::filesystem::remove_all(dir);
}
