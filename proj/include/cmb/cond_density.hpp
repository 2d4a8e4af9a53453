#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "cmb/gp_kernel.hpp"

namespace cmb {

/// Parameters of the bivariate Gaussian linear-regression base family
///
///   W1 | z      ~ N(mu1' x, sigma1^2),                      x = (1, z1, z2)
///   W2 | z, W1  ~ N(mu21' x + mu22 (W1 - mu1' x) / sigma1, sigma2^2)
struct BaseParams {
    Eigen::Vector3d mu1 = Eigen::Vector3d::Zero();
    Eigen::Vector3d mu21 = Eigen::Vector3d::Zero();
    double mu22 = 0.0;
    double sigma1_sq = 1.0;
    double sigma2_sq = 1.0;

    static constexpr int kLocations = 7;
    using Locations = Eigen::Matrix<double, kLocations, 1>;

    /// (mu1, mu21, mu22) stacked.
    Locations locations() const;
    void set_locations(const Locations& loc);

    double mean1(const Eigen::Vector2d& z) const { return mu1[0] + mu1[1] * z[0] + mu1[2] * z[1]; }
    double mean2(const Eigen::Vector2d& z) const { return mu21[0] + mu21[1] * z[0] + mu21[2] * z[1]; }

    /// Throws DomainError if a variance is not positive or a field is not finite.
    void validate() const;

    bool operator==(const BaseParams&) const = default;
};

/// Per-coordinate affine min-max map of the external variables onto [0,1].
/// Points outside the fitted range are clamped and counted.
class Compactifier {
public:
    Compactifier() = default;
    Compactifier(Eigen::Vector2d lo, Eigen::Vector2d hi);
    Compactifier(const Compactifier& other);
    Compactifier& operator=(const Compactifier& other);

    static Compactifier fit(const Eigen::Ref<const Eigen::MatrixX2d>& z);

    Eigen::Vector2d apply(const Eigen::Vector2d& z) const;

    const Eigen::Vector2d& lo() const { return lo_; }
    const Eigen::Vector2d& hi() const { return hi_; }
    std::size_t clamp_count() const { return clamped_.load(std::memory_order_relaxed); }

private:
    Eigen::Vector2d lo_ = Eigen::Vector2d::Zero();
    Eigen::Vector2d hi_ = Eigen::Vector2d::Ones();
    mutable std::atomic<std::size_t> clamped_{0};
};

/// One draw of the conditional density: base parameters, kriging
/// coefficients and the maps into the kriging domain [0,1]^4 = (u, F0(z)).
struct DensityState {
    BaseParams theta;
    Eigen::VectorXd b;
    std::shared_ptr<const KrigingBasis> basis;
    Compactifier compactifier;
};

/// log f_theta(w | z).
double base_log_density(const BaseParams& theta, const Eigen::Vector2d& w, const Eigen::Vector2d& z);

/// Rosenblatt transform (Phi((w1-m1)/s1), Phi((w2-m2(w1))/s2)).
Eigen::Vector2d conditional_cdf(const BaseParams& theta, const Eigen::Vector2d& w,
                                const Eigen::Vector2d& z);

/// Inverse Rosenblatt transform; u must lie in the open unit square.
Eigen::Vector2d conditional_quantile(const BaseParams& theta, const Eigen::Vector2d& u,
                                     const Eigen::Vector2d& z);

/// Kriging-domain point (u1, u2, F0(z)1, F0(z)2).
Eigen::Vector4d kriging_point(const Eigen::Vector2d& u, const Eigen::Vector2d& fz);

/// log f_theta(w|z) + B(F_theta,z(w), F0(z)).
double log_density_unnormalized(const DensityState& state, const Eigen::Vector2d& w,
                                const Eigen::Vector2d& z);

/// Importance-sampling block for one density draw: W_{i,r} = F^{-1}(U_r) with
/// weights proportional to exp(B(U_r, F0(z_i))).
struct SyntheticBlock {
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Eigen::MatrixX2d uniforms;     // R x 2, shared by all observations
    RowMatrix w1;                  // n x R
    RowMatrix w2;                  // n x R
    RowMatrix weights;             // n x R, rows sum to one
    Eigen::VectorXd ess;           // per-observation effective sample size
    Eigen::MatrixX2d z;            // n x 2 external variables

    Eigen::Index observations() const { return w1.rows(); }
    Eigen::Index draws() const { return w1.cols(); }
};

/// Points and weights for integrating over the unit square. Weights sum to one.
struct NormalizerGrid {
    Eigen::MatrixX2d points;
    Eigen::VectorXd weights;

    Eigen::Index size() const { return points.rows(); }

    /// M uniform draws from the seed, equal weights.
    static NormalizerGrid monte_carlo(Eigen::Index draws, std::uint64_t seed);
    /// Tensor product of a composite Gauss-Legendre rule with panels [0, 1/2]
    /// and [1/2, 1], `order` nodes per panel: (2 * order)^2 points. The panel
    /// break sits on the middle row of kriging nodes, where the kernel is
    /// least smooth.
    static NormalizerGrid gauss_legendre(int order);
};

enum class NormalizerRule { monte_carlo, gauss_legendre };

NormalizerRule parse_normalizer_rule(const std::string& s);
std::string to_string(NormalizerRule rule);

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
void gauss_legendre_rule(int order, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

/// Kriging basis vectors A(u_m, F0(z_i)) for a fixed grid of points u_m and a
/// fixed list of external variables, stored in single precision. Entries of A
/// are bounded by one in magnitude, so single precision loses nothing that
/// matters for the path B = b'A. The GP path at every (i, m) is then one
/// matrix-vector product.
class BasisTable {
public:
    BasisTable() = default;
    BasisTable(const KrigingBasis& basis, const Eigen::Ref<const Eigen::MatrixX2d>& fz,
               const NormalizerGrid& grid);
    /// Equal weights on the given points.
    BasisTable(const KrigingBasis& basis, const Eigen::Ref<const Eigen::MatrixX2d>& fz,
               const Eigen::Ref<const Eigen::MatrixX2d>& uniforms);

    Eigen::Index observations() const { return n_; }
    Eigen::Index draws() const { return m_; }

    /// B(u_m, F0(z_i)) for all (i, m), as an n x M matrix.
    Eigen::MatrixXd path_values(const Eigen::VectorXd& b) const;

    /// log( sum_m w_m exp(B(u_m, F0(z_i))) ) for every observation.
    Eigen::VectorXd log_integral(const Eigen::VectorXd& b) const;

private:
    void build(const KrigingBasis& basis, const Eigen::Ref<const Eigen::MatrixX2d>& fz,
               const Eigen::Ref<const Eigen::MatrixX2d>& points);

    Eigen::Index n_ = 0;
    Eigen::Index m_ = 0;
    Eigen::Index k_ = 0;
    Eigen::MatrixXf values_;  // k x (n*M), column i*M + m
    Eigen::VectorXd log_weights_;
};

/// Draws an R x 2 block of U(0,1) variates from the seed.
Eigen::MatrixX2d uniform_block(Eigen::Index rows, std::uint64_t seed);

/// Reusable generator of SyntheticBlocks for many density draws that share
/// the kriging basis, compactifier and observation list. The uniforms, their
/// normal scores and the kernel table are computed once, so every draw uses
/// the same random numbers.
class SyntheticSampler {
public:
    SyntheticSampler(std::shared_ptr<const KrigingBasis> basis, Compactifier compactifier,
                     Eigen::MatrixX2d z, Eigen::Index R, std::uint64_t seed);

    SyntheticBlock block(const BaseParams& theta, const Eigen::VectorXd& b) const;
    void fill(const BaseParams& theta, const Eigen::VectorXd& b, SyntheticBlock& out) const;

    Eigen::Index observations() const { return z_.rows(); }
    Eigen::Index draws() const { return uniforms_.rows(); }

private:
    std::shared_ptr<const KrigingBasis> basis_;
    Compactifier compactifier_;
    Eigen::MatrixX2d z_;
    Eigen::MatrixX2d uniforms_;
    Eigen::MatrixX2d scores_;  // norm_quantile(uniforms)
    BasisTable table_;
};

/// Builds the importance-sampling block for one state. Requires R >= 2.
/// Throws NumericalError naming the observation when a weight row degenerates.
SyntheticBlock make_synthetic_block(const DensityState& state, const Eigen::Ref<const Eigen::MatrixX2d>& z,
                                    Eigen::Index R, std::uint64_t seed);

}  // namespace cmb
