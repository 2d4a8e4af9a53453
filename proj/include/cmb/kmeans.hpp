#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace cmb {

struct KMeansResult {
    Eigen::MatrixXd centers;           // k x d
    std::vector<int> labels;           // one per point
    std::vector<double> objective;     // within-cluster sum of squares after each Lloyd step
    int iterations = 0;
    bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations (at most max_iter). An
/// emptied cluster is reseeded at the point farthest from its center.
/// Throws DomainError when there are fewer distinct points than clusters.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter = 100);

}  // namespace cmb
