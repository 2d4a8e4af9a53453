#include "cmb/baselines.hpp"

#include <cmath>
#include <sstream>

#include "cmb/error.hpp"
#include "cmb/normal.hpp"
#include "cmb/rng.hpp"

namespace cmb {

namespace {

double condition_number(const Eigen::MatrixXd& a) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto& sv = svd.singularValues();
    const double smin = sv[sv.size() - 1];
    return smin > 0.0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
}

void check_invertible(const Eigen::MatrixXd& a, const char* what) {
    const double cond = condition_number(a);
    if (!std::isfinite(cond) || cond > 1e14) {
        std::ostringstream msg;
        msg << what << " is singular (condition number " << cond << ")";
        throw FactorizationError(msg.str());
    }
}

}  // namespace

Eigen::MatrixXd iv_regressors(const Dataset& data) {
    Eigen::MatrixXd x(data.logQ.size(), 3);
    x.col(0).setOnes();
    x.col(1) = data.logP;
    x.col(2) = data.logY;
    return x;
}

Eigen::MatrixXd iv_instruments(const Dataset& data) {
    Eigen::MatrixXd z(data.logQ.size(), 3);
    z.col(0).setOnes();
    z.col(1) = data.logY;
    z.col(2) = data.logA;
    return z;
}

IvEstimate tsls(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
    if (x.rows() != z.rows() || x.rows() != y.size() || x.cols() != z.cols()) {
        throw DomainError("tsls: inconsistent dimensions");
    }
    if (x.rows() == 0) throw DataError("tsls: no observations");
    const Eigen::MatrixXd zx = z.transpose() * x;
    check_invertible(zx, "tsls: first-stage Gram matrix Z'X");
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(zx);
    IvEstimate est;
    est.method = "tsls";
    // Unit-weight Wald solve, so the bootstrap at unit weights reproduces it bit for bit.
    est.gamma_hat = weighted_wald(x, z, y, Eigen::VectorXd::Ones(x.rows()));
    const Eigen::VectorXd u = y - x * est.gamma_hat;
    const Eigen::MatrixXd meat = z.transpose() * u.array().square().matrix().asDiagonal() * z;
    const Eigen::MatrixXd zx_inv = lu.inverse();
    est.vcov = zx_inv * meat * zx_inv.transpose();
    est.vcov = (0.5 * (est.vcov + est.vcov.transpose())).eval();
    return est;
}

IvEstimate tsls(const Dataset& data) {
    data.validate();
    return tsls(iv_regressors(data), iv_instruments(data), data.logQ);
}

Eigen::VectorXd weighted_wald(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                              const Eigen::VectorXd& y, const Eigen::VectorXd& v) {
    const Eigen::MatrixXd zv = z.transpose() * v.asDiagonal();
    const Eigen::MatrixXd a = zv * x;
    check_invertible(a, "weighted Wald system");
    return a.partialPivLu().solve(zv * y);
}

BootstrapDraws bayesian_bootstrap(const Dataset& data, std::size_t reps, std::uint64_t seed) {
    if (reps == 0) throw DomainError("bayesian_bootstrap: reps must be >= 1");
    data.validate();
    const Eigen::MatrixXd x = iv_regressors(data);
    const Eigen::MatrixXd z = iv_instruments(data);
    const Eigen::Index n = x.rows();
    const auto R = static_cast<Eigen::Index>(reps);

    Eigen::MatrixXd all(R, x.cols());
    std::vector<char> ok(reps, 0);
#pragma omp parallel for schedule(static)
    for (Eigen::Index r = 0; r < R; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = std_exponential(rng);
        try {
            all.row(r) = weighted_wald(x, z, data.logQ, v).transpose();
            ok[r] = all.row(r).allFinite();
        } catch (const Error&) {
        }
    }

    BootstrapDraws out;
    Eigen::Index kept = 0;
    for (char c : ok) kept += c;
    out.gamma.resize(kept, x.cols());
    Eigen::Index j = 0;
    for (Eigen::Index r = 0; r < R; ++r) {
        if (ok[r]) out.gamma.row(j++) = all.row(r);
    }
    out.skipped = reps - static_cast<std::size_t>(kept);
    return out;
}

int default_series_degree(std::size_t n) {
    if (n == 0) return 0;
    auto pow7 = [](unsigned long long d) {
        unsigned long long p = 1;
        for (int i = 0; i < 7; ++i) p *= d;
        return p;
    };
    unsigned long long d = static_cast<unsigned long long>(std::pow(double(n), 1.0 / 7.0));
    while (pow7(d + 1) <= n) ++d;
    while (d > 0 && pow7(d) > n) --d;
    return static_cast<int>(d);
}

Eigen::MatrixXd tensor_polynomial(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int degree) {
    if (degree < 0) throw DomainError("tensor_polynomial: degree must be >= 0");
    const Eigen::Index n = x.size();
    auto rescale = [](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        const double lo = v.minCoeff(), hi = v.maxCoeff();
        if (!(hi > lo)) return Eigen::VectorXd::Zero(v.size());
        return ((v.array() - lo) / (hi - lo) * 2.0 - 1.0).matrix();
    };
    const Eigen::VectorXd sx = n ? rescale(x) : x;
    const Eigen::VectorXd sy = n ? rescale(y) : y;
    const int m = degree + 1;
    Eigen::MatrixXd out(n, m * m);
    for (Eigen::Index i = 0; i < n; ++i) {
        double px = 1.0;
        for (int a = 0; a < m; ++a) {
            double py = 1.0;
            for (int b = 0; b < m; ++b) {
                out(i, a * m + b) = px * py;
                py *= sy[i];
            }
            px *= sx[i];
        }
    }
    return out;
}

IvEstimate plugin_efficient(const Dataset& data, const SeriesConfig& config, PluginDiagnostics* diag) {
    data.validate();
    const Eigen::Index n = data.logQ.size();
    const int degree = config.degree >= 0 ? config.degree : default_series_degree(data.size());
    const Eigen::MatrixXd x = iv_regressors(data);
    const Eigen::MatrixXd z = iv_instruments(data);

    // Step 1: TSLS residuals, series fits of the first stage and the skedastic function.
    const IvEstimate first = tsls(x, z, data.logQ);
    const Eigen::VectorXd u2 = (data.logQ - x * first.gamma_hat).array().square().matrix();
    const Eigen::MatrixXd basis = tensor_polynomial(data.logY, data.logA, degree);
    const auto qr = basis.colPivHouseholderQr();
    if (qr.rank() < basis.cols()) {
        throw FactorizationError("plugin_efficient: tensor polynomial design of degree " +
                                 std::to_string(degree) + " is rank deficient (rank " +
                                 std::to_string(qr.rank()) + " of " + std::to_string(basis.cols()) + ")");
    }
    const Eigen::VectorXd price_fit = basis * qr.solve(data.logP);
    Eigen::VectorXd var_fit = basis * qr.solve(u2);
    const double floor = config.variance_floor * u2.mean();
    std::size_t floored = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(var_fit[i] > floor)) {
            var_fit[i] = floor;
            ++floored;
        }
    }

    // Step 2: weighted IV with instruments omega * M.
    Eigen::MatrixXd m(n, 3);
    m.col(0).setOnes();
    m.col(1) = price_fit;
    m.col(2) = data.logY;
    const Eigen::VectorXd omega = var_fit.cwiseInverse();
    IvEstimate est;
    est.method = "plugin_efficient";
    est.gamma_hat = weighted_wald(x, m, data.logQ, omega);
    const Eigen::MatrixXd info = m.transpose() * omega.asDiagonal() * m / double(n);
    check_invertible(info, "plugin_efficient: efficiency-bound information");
    est.vcov = info.inverse() / double(n);
    est.vcov = (0.5 * (est.vcov + est.vcov.transpose())).eval();
    if (diag) *diag = {degree, floored};
    return est;
}

Eigen::VectorXd numerical_gradient(const ScalarFunctional& f, const Eigen::VectorXd& gamma) {
    const Eigen::Index p = gamma.size();
    Eigen::VectorXd grad(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double h = 1e-6 * (gamma[j] != 0.0 ? std::abs(gamma[j]) : 1.0);
        Eigen::VectorXd up = gamma, down = gamma;
        up[j] += h;
        down[j] -= h;
        grad[j] = (f(up) - f(down)) / (2.0 * h);
    }
    if (!grad.allFinite()) throw NumericalError("delta method: non-finite gradient");
    return grad;
}

DeltaInterval delta_method(const ScalarFunctional& f, const IvEstimate& est, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("delta method: alpha must lie in (0, 1)");
    DeltaInterval out;
    out.point = f(est.gamma_hat);
    out.gradient = numerical_gradient(f, est.gamma_hat);
    const double var = out.gradient.dot(est.vcov * out.gradient);
    out.se = std::sqrt(std::max(var, 0.0));
    const double crit = norm_quantile(1.0 - alpha / 2.0);
    out.lo = out.point - crit * out.se;
    out.hi = out.point + crit * out.se;
    return out;
}

Eigen::VectorXd dwl_gradient(const Eigen::VectorXd& gamma, DemandKind kind, const WelfareQuery& query) {
    return numerical_gradient(
        [&](const Eigen::VectorXd& g) { return dwl(DemandSpec{kind, g}, query); }, gamma);
}

DeltaInterval delta_method_dwl(const IvEstimate& est, const WelfareQuery& query, DemandKind kind,
                               double alpha) {
    return delta_method([&](const Eigen::VectorXd& g) { return dwl(DemandSpec{kind, g}, query); },
                        est, alpha);
}

}  // namespace cmb
