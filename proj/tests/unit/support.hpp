#pragma once

// Hand-rolled generators shared by the property tests.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "cmb/cond_density.hpp"
#include "cmb/dataset.hpp"
#include "cmb/rng.hpp"

namespace testgen {

inline double uniform(cmb::Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * cmb::uniform_open(rng);
}

inline int integer(cmb::Rng& rng, int lo, int hi) {
    return lo + static_cast<int>(cmb::uniform_open(rng) * (hi - lo + 1));
}

inline Eigen::MatrixXd uniform_points(cmb::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = cmb::uniform_open(rng);
    return out;
}

inline Eigen::VectorXd normals(cmb::Rng& rng, Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = cmb::std_normal(rng);
    return v;
}

inline Eigen::MatrixXd normal_matrix(cmb::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = cmb::std_normal(rng);
    return m;
}

/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Eigen::MatrixXd spd(cmb::Rng& rng, Eigen::Index p, double lo = 0.2, double hi = 2.0) {
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(normal_matrix(rng, p, p));
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd ev(p);
    for (Eigen::Index j = 0; j < p; ++j) ev[j] = uniform(rng, lo, hi);
    return q * ev.asDiagonal() * q.transpose();
}

inline cmb::BaseParams base_params(cmb::Rng& rng) {
    cmb::BaseParams t;
    for (int j = 0; j < 3; ++j) {
        t.mu1[j] = uniform(rng, -1.0, 1.0);
        t.mu21[j] = uniform(rng, -1.0, 1.0);
    }
    t.mu22 = uniform(rng, -0.8, 0.8);
    t.sigma1_sq = uniform(rng, 0.1, 2.0);
    t.sigma2_sq = uniform(rng, 0.1, 2.0);
    return t;
}

/// Linear IV design: logP = l'(1, logY, logA) + v, logQ = g'(1, logP, logY) + u
/// with corr(u, v) = rho. Homoskedastic unless `hetero` is set.
inline cmb::Dataset iv_dataset(std::size_t n, std::uint64_t seed, const Eigen::Vector3d& gamma,
                               double rho = 0.4, bool hetero = false) {
    cmb::Rng rng(seed);
    cmb::Dataset d = cmb::Dataset::with_size(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        d.logY[i] = 10.5 + 0.6 * cmb::std_normal(rng);
        d.logA[i] = 0.5 * cmb::std_normal(rng);
        const double e1 = cmb::std_normal(rng), e2 = cmb::std_normal(rng);
        const double scale = hetero ? std::sqrt(0.5 + d.logA[i] * d.logA[i]) : 1.0;
        const double v = 0.1 * e2;
        const double u = 0.5 * scale * (rho * e2 + std::sqrt(1.0 - rho * rho) * e1);
        d.logP[i] = 0.2 + 0.02 * (d.logY[i] - 10.5) + 0.3 * d.logA[i] + v;
        d.logQ[i] = gamma[0] + gamma[1] * d.logP[i] + gamma[2] * d.logY[i] + u;
    }
    return d;
}

/// Fresh empty directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cmb_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testgen
