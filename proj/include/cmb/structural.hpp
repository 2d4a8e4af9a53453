#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmb/cond_density.hpp"
#include "cmb/mcmc.hpp"

namespace cmb {

/// Conditional moment restriction E[g(W, Z, gamma) | Z = z] = 0.
struct MomentModel {
    /// g(w, z, gamma) -> out (d_g entries).
    using Residual =
        std::function<void(const Eigen::Vector2d& w, const Eigen::Vector2d& z,
                           const Eigen::VectorXd& gamma, double* out)>;
    /// Psi(w, z) -> out (d_gamma entries).
    using Features =
        std::function<void(const Eigen::Vector2d& w, const Eigen::Vector2d& z, double* out)>;

    /// Scalar residual w[outcome] - Psi(w, z)' gamma.
    struct Linear {
        Features features;
        int outcome = 1;
    };

    std::string name;
    int d_g = 1;
    int d_gamma = 1;
    Residual residual;
    std::optional<Linear> linear;
    std::optional<Eigen::VectorXd> lower;
    std::optional<Eigen::VectorXd> upper;

    /// log Q = (1, log P, log Y)' gamma + U
    static MomentModel constant_elasticity();
    /// log Q = (1, log P, log Y, log P^2, log Y^2, log P log Y)' gamma + U
    static MomentModel translog();
    /// Generic linear model from a feature map.
    static MomentModel linear_model(std::string name, int d_gamma, Features features,
                                    int outcome = 1);

    void validate() const;
};

/// Per-observation importance-sampled moments at one gamma (general models).
struct MomentTables {
    Eigen::MatrixXd m;                   // n x q
    std::vector<Eigen::MatrixXd> sigma;  // n entries, q x q
};

/// Sufficient statistics for a scalar linear residual Y - Psi'gamma, per
/// observation: E[Y], E[Psi], E[Psi Y], E[Y^2], E[Psi Psi'].
struct LinearMoments {
    Eigen::VectorXd ey;   // n
    Eigen::MatrixXd epsi;  // n x p, row i = M(z_i)'
    Eigen::MatrixXd epsiy; // n x p
    Eigen::VectorXd ey2;  // n
    Eigen::MatrixXd epp;  // n x p*p, row-major p x p per observation

    Eigen::Index observations() const { return ey.size(); }
    Eigen::Index params() const { return epsi.cols(); }

    /// E[Y|z_i] - M(z_i)'gamma
    double mean(Eigen::Index i, const Eigen::VectorXd& gamma) const;
    /// E[(Y - Psi'gamma)^2 | z_i]
    double second_moment(Eigen::Index i, const Eigen::VectorXd& gamma) const;

    static LinearMoments from_block(const SyntheticBlock& block, const MomentModel& model);
};

/// Weighted averages over the importance-sampling block. Uses the linear
/// sufficient statistics when the model has them.
MomentTables moments_at(const SyntheticBlock& block, const MomentModel& model,
                        const Eigen::VectorXd& gamma);

/// Same quantities by direct weighted sums of g and g g', whatever the model.
MomentTables moments_at_direct(const SyntheticBlock& block, const MomentModel& model,
                               const Eigen::VectorXd& gamma);

MomentTables moments_at(const LinearMoments& stats, const Eigen::VectorXd& gamma);

/// Identity-weighted starting value. Linear case: (sum M M')^{-1} sum M E[Y|z].
Eigen::VectorXd identity_weighted_start(const LinearMoments& stats);

/// One optimally weighted update: GLS with weights 1/sigma^2(z_i, gamma_old).
Eigen::VectorXd gls_iterate(const LinearMoments& stats, const Eigen::VectorXd& gamma_old);

struct FixedPointResult {
    Eigen::VectorXd gamma;
    int iterations = 0;
    double final_step_norm = 0.0;
    double foc_residual_norm = 0.0;
    bool converged = false;
    std::vector<double> step_norms;
};

struct FixedPointOptions {
    double tol = 1e-5;
    int max_iter = 100;
    /// Relative ridge added to Sigma before inversion (times trace / q).
    double ridge = 1e-10;
};

/// Iterates gamma <- q_n(gamma) from the identity-weighted start until the
/// step norm falls below tol. `iterations` counts the weighted updates.
FixedPointResult solve_fixed_point(const LinearMoments& stats, const FixedPointOptions& opts = {});

/// General entry point: linear models use the closed form, others run
/// Gauss-Newton on the weighted criterion with a numerical Jacobian.
FixedPointResult solve_fixed_point(const SyntheticBlock& block, const MomentModel& model,
                                   const FixedPointOptions& opts = {});

/// Identity-weighted start for general models (Gauss-Newton on sum m'm).
Eigen::VectorXd identity_weighted_start(const SyntheticBlock& block, const MomentModel& model,
                                        const Eigen::VectorXd& guess, const FixedPointOptions& opts);

/// One weighted update for general models.
Eigen::VectorXd gls_iterate(const SyntheticBlock& block, const MomentModel& model,
                            const Eigen::VectorXd& gamma_old, const FixedPointOptions& opts);

/// Structural draws for one model: one row per density draw, in order.
struct StructuralDraws {
    std::string model;
    Eigen::MatrixXd gamma;  // S x p; rows of failed draws are NaN
    std::vector<int> iterations;
    std::vector<bool> converged;
    std::vector<double> foc_residual;
    std::vector<bool> failed;
    std::vector<std::string> errors;

    std::size_t size() const { return iterations.size(); }
    std::size_t failures() const;
    std::size_t converged_count() const;
    /// Rows that neither failed nor produced non-finite values.
    Eigen::MatrixXd successful() const;
};

struct StructuralOptions {
    Eigen::Index R = 1000;
    FixedPointOptions fixed_point;
    /// Whole run fails when more than this fraction of draws fail.
    double max_failure_fraction = 0.05;
    std::uint64_t seed = 1;
};

/// Pushes every density draw through the fixed point for each model. All draws
/// share one uniform block, so draws with equal parameters give equal gamma.
std::vector<StructuralDraws> structural_posterior(const PosteriorDraws& draws,
                                                  const Eigen::Ref<const Eigen::MatrixX2d>& z,
                                                  const std::vector<MomentModel>& models,
                                                  const StructuralOptions& opts);

}  // namespace cmb
