#pragma once

#include <Eigen/Dense>

namespace cmb {

/// Matern covariance with unit variance:
///
///   k(t,s) = 2^{1-a} / Gamma(a) * x^a * K_a(x),   x = sqrt(2a) |t-s| / l
///
/// where K_a is the modified Bessel function of the second kind. Half-integer
/// smoothness a = p + 1/2 (p <= 10) is evaluated through the exact
/// polynomial-times-exponential form; other values go through the Bessel
/// function.
class MaternKernel {
public:
    MaternKernel(double alpha, double length_scale = 1.0);

    double alpha() const { return alpha_; }
    double length_scale() const { return length_scale_; }

    /// Covariance as a function of Euclidean distance r >= 0.
    double at_distance(double r) const;

    /// Covariance between two points of equal dimension.
    double operator()(const Eigen::Ref<const Eigen::VectorXd>& t,
                      const Eigen::Ref<const Eigen::VectorXd>& s) const;

    bool is_half_integer() const { return half_integer_order_ >= 0; }

private:
    double alpha_;
    double length_scale_;
    double scaled_;  // sqrt(2 alpha) / l
    int half_integer_order_;  // p when alpha = p + 1/2, else -1
    double log_norm_;         // (1 - alpha) log 2 - lgamma(alpha)
};

/// Matern correlation at scaled distance x evaluated through std::cyl_bessel_k,
/// regardless of alpha. Exposed so the closed forms can be checked against it.
double matern_bessel(double alpha, double x);

/// Closed form for alpha = p + 1/2.
double matern_half_integer(int p, double x);

/// Interpolating Gaussian process (kriging) basis on [0,1]^d.
///
/// Holds nodes t_1..t_k and the lower Cholesky factor L of K + jitter*I. A
/// coefficient vector b ~ N(0, I_k) defines the path B(t) = b' A(t) with
/// A(t) = L^{-1} kappa(t), kappa(t)_j = k(t_j, t).
class KrigingBasis {
public:
    /// nodes: k x d, one node per row. Throws DomainError on duplicate nodes
    /// and FactorizationError if K + jitter*I is not positive definite.
    KrigingBasis(MaternKernel kernel, Eigen::MatrixXd nodes, double jitter = 1e-8);

    Eigen::Index size() const { return nodes_.rows(); }
    Eigen::Index dim() const { return nodes_.cols(); }
    const Eigen::MatrixXd& nodes() const { return nodes_; }
    const MaternKernel& kernel() const { return kernel_; }
    double jitter() const { return jitter_; }
    const Eigen::MatrixXd& factor() const { return factor_; }

    /// Gram matrix without jitter.
    Eigen::MatrixXd gram() const;

    /// kappa(t): covariances between t and every node.
    Eigen::VectorXd kernel_vector(const Eigen::Ref<const Eigen::VectorXd>& t) const;

    /// Allocation-free kernel_vector for hot loops: t has dim() entries,
    /// out receives size() entries. No dimension or finiteness checks.
    void kernel_vector_into(const double* t, double* out) const;

    /// A(t) = L^{-1} kappa(t).
    Eigen::VectorXd basis_vector(const Eigen::Ref<const Eigen::VectorXd>& t) const;

    /// c = L^{-T} b, so that B(t) = c' kappa(t). Lets hot loops skip the
    /// triangular solve per evaluation point.
    Eigen::VectorXd dual_coefficients(const Eigen::Ref<const Eigen::VectorXd>& b) const;

    /// B(t) = b' A(t).
    double path_value(const Eigen::Ref<const Eigen::VectorXd>& b,
                      const Eigen::Ref<const Eigen::VectorXd>& t) const;

private:
    MaternKernel kernel_;
    Eigen::MatrixXd nodes_;
    double jitter_;
    Eigen::MatrixXd factor_;
};

}  // namespace cmb
