#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

namespace cmb {

enum class DemandKind { constant_elasticity, translog };

/// Parses "constant_elasticity"/"ce" or "translog"; throws ConfigError otherwise.
DemandKind parse_demand_kind(const std::string& s);
std::string to_string(DemandKind kind);
/// Number of coefficients the demand specification takes (3 or 6).
int demand_dimension(DemandKind kind);

struct DemandSpec {
    DemandKind kind = DemandKind::constant_elasticity;
    Eigen::VectorXd gamma;

    void validate() const;
};

/// Price change from p0 to p1 along the affine path, for a household with
/// income y. `steps` is the grid size used by the ODE path.
struct WelfareQuery {
    double p0 = 1.215;
    double p1 = 1.436;
    double y = 42500.0;
    int steps = 10000;

    void validate() const;
};

/// q(p, y) = exp(Psi(log p, log y)' gamma)
double demand(const DemandSpec& spec, double p, double y);

/// Exact deadweight loss for constant-elasticity demand. Throws DomainError
/// when gamma1 = -1 or gamma2 = 1, where the closed form is singular.
double dwl_constant_elasticity(const Eigen::Vector3d& gamma, const WelfareQuery& query);

/// Deadweight loss from the equivalent-variation ODE, integrated backwards
/// from t = 1 with first-order differences. Works for either demand kind.
double dwl_ode(const DemandSpec& spec, const WelfareQuery& query);

/// Closed form for constant elasticity (falling back to the ODE at the
/// singular points), ODE for translog.
double dwl(const DemandSpec& spec, const WelfareQuery& query);

struct WelfareDraws {
    /// One entry per input draw; NaN where evaluation failed.
    Eigen::VectorXd values;
    std::vector<std::size_t> failed;

    /// Finite values in input order.
    Eigen::VectorXd finite() const;
};

/// DWL for every row of gamma_draws. With per_income set the values are
/// DWL / y * 1e4.
WelfareDraws welfare_posterior(const Eigen::MatrixXd& gamma_draws, DemandKind kind,
                               const WelfareQuery& query, bool per_income = false);

/// |DWL_translog - DWL_ce| from paired draws (row s of each matrix comes from
/// the same density draw).
WelfareDraws welfare_difference(const Eigen::MatrixXd& ce_draws, const Eigen::MatrixXd& translog_draws,
                                const WelfareQuery& query, bool per_income = false);

}  // namespace cmb
