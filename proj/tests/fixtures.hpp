#pragma once
// Shared clustering benchmark: six tight 1-D units, the two closest (4 points
// each) forming one planted dumbbell cluster, for five planted clusters in
// total. The unit spacing is chosen so k-means and the Ward cut disagree at
// every m in 2..4 and first agree, exactly on the planted partition, at
// m = 5; this holds for noise seeds 1..20 used with schedule seed k.
#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "senskit/rng.hpp"

namespace senskit_tests {

inline Eigen::MatrixXd five_cluster_fixture(std::uint64_t noise_seed,
                                            std::vector<int>* planted) {
    static constexpr double kPos[6] = {0.0, 3.9198, 4.9198, 8.7315, 13.3498, 21.9110};
    static constexpr int kCount[6] = {12, 4, 4, 12, 12, 4};
    static constexpr int kPlanted[6] = {1, 2, 2, 3, 4, 5};
    static constexpr double kSigma = 0.01;

    int n = 0;
    for (int c : kCount) n += c;
    Eigen::MatrixXd x(n, 1);
    planted->resize(n);
    std::mt19937_64 rng(noise_seed);
    int row = 0;
    for (int u = 0; u < 6; ++u)
        for (int i = 0; i < kCount[u]; ++i, ++row) {
            x(row, 0) = kPos[u] + kSigma * senskit::normal01(rng);
            (*planted)[row] = kPlanted[u];
        }
    return x;
}

// Three well-separated isotropic blobs in the plane (separation is at least
// ten times the within-blob standard deviation).
inline Eigen::MatrixXd three_blob_fixture(std::uint64_t seed, std::vector<int>* planted) {
    static constexpr double kCenters[3][2] = {{0.0, 0.0}, {30.0, 5.0}, {12.0, 40.0}};
    static constexpr int kCount = 15;
    static constexpr double kSigma = 1.0;

    Eigen::MatrixXd x(3 * kCount, 2);
    planted->resize(3 * kCount);
    std::mt19937_64 rng(seed);
    int row = 0;
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < kCount; ++i, ++row) {
            x(row, 0) = kCenters[b][0] + kSigma * senskit::normal01(rng);
            x(row, 1) = kCenters[b][1] + kSigma * senskit::normal01(rng);
            (*planted)[row] = b + 1;
        }
    return x;
}

}  // namespace senskit_tests
