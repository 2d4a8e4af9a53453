#include "cmb/welfare.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

#include "cmb/error.hpp"

namespace cmb {

DemandKind parse_demand_kind(const std::string& s) {
    std::string l = s;
    std::transform(l.begin(), l.end(), l.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "ce" || l == "constant_elasticity" || l == "constant-elasticity") {
        return DemandKind::constant_elasticity;
    }
    if (l == "translog" || l == "tl") return DemandKind::translog;
    throw ConfigError("unknown demand kind '" + s + "' (expected constant_elasticity or translog)");
}

std::string to_string(DemandKind kind) {
    return kind == DemandKind::constant_elasticity ? "constant_elasticity" : "translog";
}

int demand_dimension(DemandKind kind) { return kind == DemandKind::constant_elasticity ? 3 : 6; }

void DemandSpec::validate() const {
    if (gamma.size() != demand_dimension(kind)) {
        throw DomainError(to_string(kind) + " demand needs " + std::to_string(demand_dimension(kind)) +
                          " coefficients, got " + std::to_string(gamma.size()));
    }
    if (!gamma.allFinite()) throw DomainError("demand coefficients must be finite");
}

void WelfareQuery::validate() const {
    if (!(p0 > 0.0) || !(p1 > 0.0) || !(y > 0.0) || !std::isfinite(p0) || !std::isfinite(p1) ||
        !std::isfinite(y)) {
        throw DomainError("welfare query: prices and income must be positive and finite");
    }
    if (steps < 2) throw DomainError("welfare query: steps must be >= 2");
}

namespace {

double log_demand(const DemandSpec& spec, double lp, double ly) {
    const auto& g = spec.gamma;
    double v = g[0] + g[1] * lp + g[2] * ly;
    if (spec.kind == DemandKind::translog) v += g[3] * lp * lp + g[4] * ly * ly + g[5] * lp * ly;
    return v;
}

}  // namespace

double demand(const DemandSpec& spec, double p, double y) {
    if (!(p > 0.0) || !(y > 0.0)) throw DomainError("demand: price and income must be positive");
    spec.validate();
    return std::exp(log_demand(spec, std::log(p), std::log(y)));
}

double dwl_constant_elasticity(const Eigen::Vector3d& gamma, const WelfareQuery& query) {
    query.validate();
    const double g0 = gamma[0], g1 = gamma[1], g2 = gamma[2];
    if (g1 == -1.0 || g2 == 1.0) {
        throw DomainError("constant-elasticity closed form is singular at gamma1 = -1 or gamma2 = 1; "
                          "use the ODE path");
    }
    const double p0 = query.p0, p1 = query.p1, y = query.y;
    if (p0 == p1) return 0.0;
    const auto q = [&](double p) { return std::exp(g0 + g1 * std::log(p) + g2 * std::log(y)); };
    const double inner = (1.0 - g2) / ((1.0 + g1) * std::pow(y, g2)) * (p0 * q(p0) - p1 * q(p1)) +
                         std::pow(y, 1.0 - g2);
    if (!(inner > 0.0)) throw DomainError("constant-elasticity closed form: income exhausted");
    const double surplus = y - std::pow(inner, 1.0 / (1.0 - g2));
    return surplus - (p1 - p0) * q(p1);
}

double dwl_ode(const DemandSpec& spec, const WelfareQuery& query) {
    spec.validate();
    query.validate();
    const double p0 = query.p0, p1 = query.p1, y = query.y;
    if (p0 == p1) return 0.0;
    const int steps = query.steps;
    const double h = 1.0 / steps;
    const double dp = p1 - p0;
    double s = 0.0;  // S(t_j), starting from S(1) = 0
    for (int j = steps; j >= 1; --j) {
        const double t = j * h;
        const double income = y - s;
        if (!(income > 0.0)) {
            std::ostringstream msg;
            msg << "dwl_ode: income exhausted at t = " << t;
            throw DomainError(msg.str());
        }
        const double p = p0 + t * dp;
        s += h * std::exp(log_demand(spec, std::log(p), std::log(income))) * dp;
    }
    return s - dp * std::exp(log_demand(spec, std::log(p1), std::log(y)));
}

double dwl(const DemandSpec& spec, const WelfareQuery& query) {
    spec.validate();
    if (spec.kind == DemandKind::constant_elasticity && spec.gamma[1] != -1.0 && spec.gamma[2] != 1.0) {
        return dwl_constant_elasticity(spec.gamma.head<3>(), query);
    }
    return dwl_ode(spec, query);
}

Eigen::VectorXd WelfareDraws::finite() const {
    std::vector<double> v;
    for (Eigen::Index s = 0; s < values.size(); ++s) {
        if (std::isfinite(values[s])) v.push_back(values[s]);
    }
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

WelfareDraws welfare_posterior(const Eigen::MatrixXd& gamma_draws, DemandKind kind,
                               const WelfareQuery& query, bool per_income) {
    if (gamma_draws.rows() == 0) throw DomainError("welfare_posterior: no draws");
    if (gamma_draws.cols() != demand_dimension(kind)) {
        throw DomainError("welfare_posterior: draws have " + std::to_string(gamma_draws.cols()) +
                          " columns, " + to_string(kind) + " demand needs " +
                          std::to_string(demand_dimension(kind)));
    }
    query.validate();
    const Eigen::Index S = gamma_draws.rows();
    WelfareDraws out;
    out.values.resize(S);
    const double scale = per_income ? 1e4 / query.y : 1.0;
    std::vector<char> bad(S, 0);
#pragma omp parallel for schedule(static)
    for (Eigen::Index s = 0; s < S; ++s) {
        double v = std::numeric_limits<double>::quiet_NaN();
        try {
            v = dwl(DemandSpec{kind, gamma_draws.row(s).transpose()}, query) * scale;
        } catch (const Error&) {
        }
        if (!std::isfinite(v)) {
            bad[s] = 1;
            v = std::numeric_limits<double>::quiet_NaN();
        }
        out.values[s] = v;
    }
    for (Eigen::Index s = 0; s < S; ++s) {
        if (bad[s]) out.failed.push_back(static_cast<std::size_t>(s));
    }
    return out;
}

WelfareDraws welfare_difference(const Eigen::MatrixXd& ce_draws, const Eigen::MatrixXd& translog_draws,
                                const WelfareQuery& query, bool per_income) {
    if (ce_draws.rows() != translog_draws.rows()) {
        throw DomainError("welfare_difference: draw sets differ in length");
    }
    const WelfareDraws a = welfare_posterior(ce_draws, DemandKind::constant_elasticity, query, per_income);
    const WelfareDraws b = welfare_posterior(translog_draws, DemandKind::translog, query, per_income);
    WelfareDraws out;
    out.values = (b.values - a.values).cwiseAbs();
    for (Eigen::Index s = 0; s < out.values.size(); ++s) {
        if (!std::isfinite(out.values[s])) out.failed.push_back(static_cast<std::size_t>(s));
    }
    return out;
}

}  // namespace cmb
