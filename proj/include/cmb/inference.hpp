#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace cmb {

/// Sample quantile with linear interpolation between order statistics
/// (position (S-1) q, zero-based). Throws DomainError on an empty sample or
/// q outside [0, 1].
double quantile(const Eigen::Ref<const Eigen::VectorXd>& draws, double q);

double posterior_median(const Eigen::Ref<const Eigen::VectorXd>& draws);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double length() const { return hi - lo; }
    bool contains(double x) const { return lo <= x && x <= hi; }
};

/// [quantile(alpha/2), quantile(1 - alpha/2)], alpha in (0, 1/2).
Interval equitailed_interval(const Eigen::Ref<const Eigen::VectorXd>& draws, double alpha = 0.05);

/// Kolmogorov-Smirnov distance between the empirical CDF of x and N(0,1).
double ks_statistic_normal(const Eigen::Ref<const Eigen::VectorXd>& x);

struct BvmDiagnostic {
    std::vector<double> ks;    // per component, draws standardized by the reference marginal
    double qq_correlation = 0.0;  // sorted squared Mahalanobis norms vs chi-square quantiles
    double ks_band = 0.0;      // 1.36 / sqrt(S)
    bool degenerate = false;   // some component has no spread
};

/// Compares draws (S x p, S >= 100) with N(center, covariance).
BvmDiagnostic bvm_diagnostic(const Eigen::MatrixXd& draws, const Eigen::VectorXd& center,
                             const Eigen::MatrixXd& covariance);

enum class Action { similar, different };
std::string to_string(Action a);

struct Decision {
    Action action = Action::different;
    /// Posterior probability that the functional is at most c.
    double prob_similar = 0.0;
    /// Posterior probability of the chosen action's event.
    double posterior_prob = 0.0;
};

/// "similar" iff P(delta <= c) > P(delta > c); a tie gives "different".
Decision threshold_decision(const Eigen::Ref<const Eigen::VectorXd>& delta_draws, double c);

}  // namespace cmb
