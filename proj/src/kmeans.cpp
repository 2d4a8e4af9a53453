#include "cmb/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <string>

#include "cmb/error.hpp"
#include "cmb/rng.hpp"

namespace cmb {

namespace {

std::size_t count_distinct(const Eigen::MatrixXd& points) {
    std::set<std::vector<double>> seen;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        std::vector<double> row(points.cols());
        for (Eigen::Index c = 0; c < points.cols(); ++c) row[c] = points(i, c);
        seen.insert(std::move(row));
    }
    return seen.size();
}

double sq_dist(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter) {
    const Eigen::Index n = points.rows();
    const Eigen::Index d = points.cols();
    if (k < 1) throw DomainError("kmeans: k must be >= 1");
    if (!points.allFinite()) throw DomainError("kmeans: non-finite points");
    const std::size_t distinct = count_distinct(points);
    if (distinct < static_cast<std::size_t>(k)) {
        throw DomainError("kmeans: " + std::to_string(distinct) + " distinct points for " +
                          std::to_string(k) + " clusters");
    }

    Rng rng(seed);
    KMeansResult res;
    res.centers.resize(k, d);

    // k-means++ seeding.
    const auto first = static_cast<Eigen::Index>(uniform_open(rng) * double(n));
    res.centers.row(0) = points.row(std::min(first, n - 1));
    Eigen::VectorXd nearest(n);
    for (Eigen::Index i = 0; i < n; ++i) nearest[i] = sq_dist(points, i, res.centers, 0);
    for (int c = 1; c < k; ++c) {
        const double total = nearest.sum();
        const double target = uniform_open(rng) * total;
        double acc = 0.0;
        Eigen::Index pick = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (nearest[i] <= 0.0) continue;
            acc += nearest[i];
            pick = i;
            if (acc >= target) break;
        }
        res.centers.row(c) = points.row(pick);
        for (Eigen::Index i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sq_dist(points, i, res.centers, c));
        }
    }

    // Lloyd iterations.
    res.labels.assign(n, -1);
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        double objective = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double dist = sq_dist(points, i, res.centers, c);
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (res.labels[i] != best) changed = true;
            res.labels[i] = best;
            objective += best_d;
        }
        res.objective.push_back(objective);
        res.iterations = it + 1;
        if (!changed && it > 0) {
            res.converged = true;
            break;
        }

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
        std::vector<Eigen::Index> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(res.labels[i]) += points.row(i);
            ++counts[res.labels[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                res.centers.row(c) = sums.row(c) / double(counts[c]);
                continue;
            }
            // Reseed an empty cluster at the point worst served by its center.
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dist = sq_dist(points, i, res.centers, res.labels[i]);
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            res.centers.row(c) = points.row(far);
        }
    }
    return res;
}

}  // namespace cmb
