#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

#include "cmb/dataset.hpp"
#include "cmb/welfare.hpp"

namespace cmb {

/// Point estimate with its estimated sampling covariance (already divided by n).
struct IvEstimate {
    Eigen::VectorXd gamma_hat;
    Eigen::MatrixXd vcov;
    std::string method;

    Eigen::VectorXd standard_errors() const { return vcov.diagonal().cwiseSqrt(); }
};

/// Regressors (1, logP, logY), n x 3.
Eigen::MatrixXd iv_regressors(const Dataset& data);
/// Instruments (1, logY, logA), n x 3.
Eigen::MatrixXd iv_instruments(const Dataset& data);

/// Just-identified IV: gamma = (Z'X)^{-1} Z'y with sandwich covariance
/// (Z'X)^{-1} (sum z z' u^2) (X'Z)^{-1}.
IvEstimate tsls(const Dataset& data);

/// Same estimator for arbitrary design matrices.
IvEstimate tsls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::VectorXd& y);

/// Solves sum_i v_i z_i (y_i - x_i' gamma) = 0.
Eigen::VectorXd weighted_wald(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                              const Eigen::VectorXd& y, const Eigen::VectorXd& v);

struct BootstrapDraws {
    Eigen::MatrixXd gamma;  // kept reps x p
    std::size_t skipped = 0;
};

/// Bayesian bootstrap with standard-exponential observation weights. Rep r
/// uses a stream derived from (seed, r), so results do not depend on thread
/// count. Reps with a singular weighted system are skipped and counted.
BootstrapDraws bayesian_bootstrap(const Dataset& data, std::size_t reps, std::uint64_t seed);

struct SeriesConfig {
    /// Per-coordinate degree; negative means floor(n^(1/7)).
    int degree = -1;
    /// Floor for fitted conditional variances, as a fraction of mean(u^2).
    double variance_floor = 1e-6;
};

/// floor(n^(1/7)) in exact integer arithmetic.
int default_series_degree(std::size_t n);

/// Tensor-product polynomial basis in (logY, logA) with all terms x^a y^b,
/// a, b <= degree; columns rescaled to [-1, 1] for conditioning.
Eigen::MatrixXd tensor_polynomial(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int degree);

struct PluginDiagnostics {
    int degree = 0;
    std::size_t floored = 0;
};

/// Two-step efficient IV with series estimates of E[logP|z] and E[u^2|z].
IvEstimate plugin_efficient(const Dataset& data, const SeriesConfig& config = {},
                            PluginDiagnostics* diag = nullptr);

struct DeltaInterval {
    double point = 0.0;
    double se = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    Eigen::VectorXd gradient;
};

using ScalarFunctional = std::function<double(const Eigen::VectorXd&)>;

/// Central-difference gradient with step 1e-6 * |gamma_j| (1e-6 at zero).
Eigen::VectorXd numerical_gradient(const ScalarFunctional& f, const Eigen::VectorXd& gamma);

/// Delta-method interval for any smooth functional of the estimate.
DeltaInterval delta_method(const ScalarFunctional& f, const IvEstimate& est, double alpha = 0.05);

/// Gradient of dwl(gamma) by central differences with relative step 1e-6.
Eigen::VectorXd dwl_gradient(const Eigen::VectorXd& gamma, DemandKind kind, const WelfareQuery& query);

/// point +- z_{1-alpha/2} sqrt(grad' V grad)
DeltaInterval delta_method_dwl(const IvEstimate& est, const WelfareQuery& query, DemandKind kind,
                               double alpha = 0.05);

}  // namespace cmb
