#include "cmb/inference.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <vector>

#include "cmb/error.hpp"
#include "cmb/normal.hpp"

namespace cmb {

namespace {

std::vector<double> sorted_copy(const Eigen::Ref<const Eigen::VectorXd>& draws) {
    std::vector<double> v(draws.data(), draws.data() + draws.size());
    if (std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); })) {
        throw DomainError("sample contains NaN");
    }
    std::sort(v.begin(), v.end());
    return v;
}

double sorted_quantile(const std::vector<double>& v, double q) {
    const double pos = (double(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - double(lo);
    if (frac == 0.0) return v[lo];
    return v[lo] + frac * (v[hi] - v[lo]);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = double(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

double quantile(const Eigen::Ref<const Eigen::VectorXd>& draws, double q) {
    if (draws.size() == 0) throw DomainError("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
    return sorted_quantile(sorted_copy(draws), q);
}

double posterior_median(const Eigen::Ref<const Eigen::VectorXd>& draws) { return quantile(draws, 0.5); }

Interval equitailed_interval(const Eigen::Ref<const Eigen::VectorXd>& draws, double alpha) {
    if (!(alpha > 0.0 && alpha < 0.5)) throw DomainError("interval level alpha must lie in (0, 1/2)");
    if (draws.size() == 0) throw DomainError("interval of an empty sample");
    const auto v = sorted_copy(draws);
    return {sorted_quantile(v, alpha / 2.0), sorted_quantile(v, 1.0 - alpha / 2.0)};
}

double ks_statistic_normal(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const auto v = sorted_copy(x);
    const double n = double(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double f = norm_cdf(v[i]);
        d = std::max({d, double(i + 1) / n - f, f - double(i) / n});
    }
    return d;
}

BvmDiagnostic bvm_diagnostic(const Eigen::MatrixXd& draws, const Eigen::VectorXd& center,
                             const Eigen::MatrixXd& covariance) {
    const Eigen::Index S = draws.rows();
    const Eigen::Index p = draws.cols();
    if (S < 100) throw DomainError("bvm_diagnostic needs at least 100 draws");
    if (center.size() != p || covariance.rows() != p || covariance.cols() != p) {
        throw DomainError("bvm_diagnostic: reference has the wrong dimension");
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(covariance);
    if (llt.info() != Eigen::Success || !(covariance.diagonal().array() > 0.0).all()) {
        throw FactorizationError("bvm_diagnostic: reference covariance is not positive definite");
    }

    BvmDiagnostic out;
    out.ks_band = 1.36 / std::sqrt(double(S));
    for (Eigen::Index j = 0; j < p; ++j) {
        const Eigen::VectorXd zj =
            (draws.col(j).array() - center[j]) / std::sqrt(covariance(j, j));
        out.ks.push_back(ks_statistic_normal(zj));
        if (draws.col(j).maxCoeff() == draws.col(j).minCoeff()) out.degenerate = true;
    }

    const Eigen::MatrixXd centered = (draws.rowwise() - center.transpose()).transpose();
    const Eigen::MatrixXd whitened = llt.matrixL().solve(centered);
    std::vector<double> d2(S);
    for (Eigen::Index s = 0; s < S; ++s) d2[s] = whitened.col(s).squaredNorm();
    std::sort(d2.begin(), d2.end());
    const boost::math::chi_squared chi{static_cast<double>(p)};
    std::vector<double> ref(S);
    for (Eigen::Index s = 0; s < S; ++s) {
        ref[s] = boost::math::quantile(chi, (double(s) + 0.5) / double(S));
    }
    out.qq_correlation = pearson(d2, ref);
    return out;
}

std::string to_string(Action a) { return a == Action::similar ? "similar" : "different"; }

Decision threshold_decision(const Eigen::Ref<const Eigen::VectorXd>& delta_draws, double c) {
    if (!(c >= 0.0)) throw DomainError("threshold must be >= 0");
    if (delta_draws.size() == 0) throw DomainError("threshold decision on an empty sample");
    Eigen::Index below = 0;
    for (Eigen::Index s = 0; s < delta_draws.size(); ++s) below += delta_draws[s] <= c;
    Decision d;
    d.prob_similar = double(below) / double(delta_draws.size());
    const double above = 1.0 - d.prob_similar;
    d.action = d.prob_similar > above ? Action::similar : Action::different;
    d.posterior_prob = d.action == Action::similar ? d.prob_similar : above;
    return d;
}

}  // namespace cmb
