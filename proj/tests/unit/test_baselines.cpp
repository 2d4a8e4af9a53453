#include <doctest.h>

#include <cmath>

#include "cmb/baselines.hpp"
#include "cmb/error.hpp"
#include "support.hpp"

namespace {

const Eigen::Vector3d kGamma(4.413, -1.631, 0.293);

// Projection form of two-stage least squares.
Eigen::VectorXd two_stage_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd xhat = z * (z.transpose() * z).ldlt().solve(z.transpose() * x);
    return (xhat.transpose() * xhat).ldlt().solve(xhat.transpose() * y);
}

// Second-order Richardson extrapolation of central differences.
Eigen::VectorXd richardson_gradient(const cmb::ScalarFunctional& f, const Eigen::VectorXd& x) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        auto central = [&](double h) {
            Eigen::VectorXd up = x, down = x;
            up[j] += h;
            down[j] -= h;
            return (f(up) - f(down)) / (2 * h);
        };
        const double h = 1e-3 * std::max(1.0, std::abs(x[j]));
        g[j] = (4.0 * central(h / 2) - central(h)) / 3.0;
    }
    return g;
}

}  // namespace

TEST_SUITE("baselines") {
    TEST_CASE("IV estimate matches the two-stage projection oracle") {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const cmb::Dataset d = testgen::iv_dataset(500, seed, kGamma, 0.5, seed % 2);
            const cmb::IvEstimate est = cmb::tsls(d);
            const Eigen::VectorXd oracle = two_stage_oracle(cmb::iv_regressors(d), cmb::iv_instruments(d), d.logQ);
            for (int j = 0; j < 3; ++j) CHECK(std::abs(est.gamma_hat[j] - oracle[j]) <= 1e-8 * std::max(1.0, std::abs(oracle[j])));
        }
    }

    TEST_CASE("sandwich covariance matches a direct computation") {
        const cmb::Dataset d = testgen::iv_dataset(400, 3, kGamma, 0.5, true);
        const cmb::IvEstimate est = cmb::tsls(d);
        const Eigen::MatrixXd x = cmb::iv_regressors(d), z = cmb::iv_instruments(d);
        const Eigen::VectorXd u = d.logQ - x * est.gamma_hat;
        Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(3, 3);
        for (Eigen::Index i = 0; i < 400; ++i) meat += u[i] * u[i] * z.row(i).transpose() * z.row(i);
        const Eigen::MatrixXd a = (z.transpose() * x).inverse();
        const Eigen::MatrixXd v = a * meat * a.transpose();
        CHECK((est.vcov - v).cwiseAbs().maxCoeff() < 1e-10 * v.cwiseAbs().maxCoeff());
        CHECK((est.vcov - est.vcov.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(est.vcov).eigenvalues().minCoeff() > 0.0);
    }

    TEST_CASE("with the regressors as instruments IV is OLS") {
        cmb::Rng rng(4);
        const Eigen::MatrixXd x = testgen::normal_matrix(rng, 200, 4);
        const Eigen::VectorXd y = testgen::normals(rng, 200);
        const Eigen::VectorXd ols = x.colPivHouseholderQr().solve(y);
        CHECK((cmb::tsls(x, x, y).gamma_hat - ols).cwiseAbs().maxCoeff() < 1e-12);
    }

    TEST_CASE("rescaling the instruments leaves the estimate unchanged") {
        cmb::Rng rng(5);
        const cmb::Dataset d = testgen::iv_dataset(300, 6, kGamma);
        const Eigen::MatrixXd x = cmb::iv_regressors(d), z = cmb::iv_instruments(d);
        const Eigen::VectorXd base = cmb::tsls(x, z, d.logQ).gamma_hat;
        for (int rep = 0; rep < 20; ++rep) {
            const Eigen::MatrixXd a = testgen::spd(rng, 3) + testgen::normal_matrix(rng, 3, 3) * 0.3;
            CHECK((cmb::tsls(x, z * a, d.logQ).gamma_hat - base).cwiseAbs().maxCoeff() < 1e-9);
        }
    }

    TEST_CASE("homoskedastic errors: sandwich is close to the classical formula") {
        const cmb::Dataset d = testgen::iv_dataset(20000, 7, kGamma, 0.4, false);
        const cmb::IvEstimate est = cmb::tsls(d);
        const Eigen::MatrixXd x = cmb::iv_regressors(d), z = cmb::iv_instruments(d);
        const double s2 = (d.logQ - x * est.gamma_hat).squaredNorm() / 20000.0;
        const Eigen::MatrixXd a = (z.transpose() * x).inverse();
        const Eigen::MatrixXd classical = s2 * a * (z.transpose() * z) * a.transpose();
        for (int j = 0; j < 3; ++j) CHECK(est.vcov(j, j) / classical(j, j) == doctest::Approx(1.0).epsilon(0.1));
    }

    TEST_CASE("error handling") {
        CHECK_THROWS_AS(cmb::tsls(Eigen::MatrixXd(0, 3), Eigen::MatrixXd(0, 3), Eigen::VectorXd(0)), cmb::DataError);
        CHECK_THROWS_AS(cmb::tsls(Eigen::MatrixXd(5, 3), Eigen::MatrixXd(5, 2), Eigen::VectorXd(5)), cmb::DomainError);
        Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 2);
        CHECK_THROWS_AS(cmb::tsls(x, x, Eigen::VectorXd::Ones(10)), cmb::FactorizationError);
    }

    TEST_CASE("Bayesian bootstrap: unit weights reproduce IV exactly") {
        const cmb::Dataset d = testgen::iv_dataset(300, 8, kGamma, 0.4, true);
        const Eigen::MatrixXd x = cmb::iv_regressors(d), z = cmb::iv_instruments(d);
        const Eigen::VectorXd unit = cmb::weighted_wald(x, z, d.logQ, Eigen::VectorXd::Ones(300));
        CHECK(unit == cmb::tsls(d).gamma_hat);
    }

    TEST_CASE("Bayesian bootstrap: count, determinism and spread") {
        const cmb::Dataset d = testgen::iv_dataset(2500, 9, kGamma, 0.4, true);
        const cmb::BootstrapDraws a = cmb::bayesian_bootstrap(d, 1000, 3);
        const cmb::BootstrapDraws b = cmb::bayesian_bootstrap(d, 1000, 3);
        CHECK(a.gamma.rows() + Eigen::Index(a.skipped) == 1000);
        CHECK(a.skipped == 0);
        CHECK(a.gamma == b.gamma);
        CHECK(cmb::bayesian_bootstrap(d, 10, 4).gamma != a.gamma.topRows(10));

        const Eigen::MatrixXd centered = a.gamma.rowwise() - a.gamma.colwise().mean();
        const Eigen::MatrixXd cov = centered.transpose() * centered / double(a.gamma.rows() - 1);
        const Eigen::MatrixXd v = cmb::tsls(d).vcov;
        for (int j = 0; j < 3; ++j) {
            CHECK(cov(j, j) / v(j, j) > 1.0 / 1.5);
            CHECK(cov(j, j) / v(j, j) < 1.5);
        }
        CHECK_THROWS_AS(cmb::bayesian_bootstrap(d, 0, 1), cmb::DomainError);
    }

    TEST_CASE("series degree rule") {
        CHECK(cmb::default_series_degree(0) == 0);
        CHECK(cmb::default_series_degree(1) == 1);
        CHECK(cmb::default_series_degree(127) == 1);
        CHECK(cmb::default_series_degree(128) == 2);
        CHECK(cmb::default_series_degree(1000) == 2);
        CHECK(cmb::default_series_degree(2186) == 2);
        CHECK(cmb::default_series_degree(2187) == 3);
        CHECK(cmb::default_series_degree(2500) == 3);
        CHECK(cmb::default_series_degree(16383) == 3);
        CHECK(cmb::default_series_degree(16384) == 4);
        for (std::size_t n = 1; n < 100000; n += 97) {
            const int d = cmb::default_series_degree(n);
            CHECK(std::pow(double(d), 7) <= double(n));
            CHECK(std::pow(double(d + 1), 7) > double(n));
        }
    }

    TEST_CASE("tensor polynomial layout") {
        cmb::Rng rng(10);
        const Eigen::VectorXd x = testgen::normals(rng, 50), y = testgen::normals(rng, 50);
        const Eigen::MatrixXd t = cmb::tensor_polynomial(x, y, 2);
        CHECK(t.cols() == 9);
        CHECK((t.col(0).array() == 1.0).all());
        CHECK(t.cwiseAbs().maxCoeff() <= 1.0 + 1e-15);
        // column a*3+b is sx^a sy^b
        CHECK(t.col(4).isApprox(t.col(3).cwiseProduct(t.col(1))));
        CHECK(t.col(8).isApprox(t.col(6).cwiseProduct(t.col(2))));
        CHECK_THROWS_AS(cmb::tensor_polynomial(x, y, -1), cmb::DomainError);
    }

    TEST_CASE("plug-in efficient estimator") {
        SUBCASE("homoskedastic linear design: close to IV") {
            const cmb::Dataset d = testgen::iv_dataset(5000, 11, kGamma, 0.4, false);
            const cmb::IvEstimate iv = cmb::tsls(d);
            cmb::PluginDiagnostics diag;
            const cmb::IvEstimate pe = cmb::plugin_efficient(d, {}, &diag);
            CHECK(diag.degree == 3);
            CHECK(diag.floored == 0);
            for (int j = 0; j < 3; ++j) {
                CHECK(std::abs(pe.gamma_hat[j] - iv.gamma_hat[j]) < 0.5 * std::sqrt(iv.vcov(j, j)));
                CHECK(pe.vcov(j, j) / iv.vcov(j, j) == doctest::Approx(1.0).epsilon(0.15));
            }
        }
        SUBCASE("heteroskedastic design: consistent and more precise than IV") {
            const cmb::Dataset d = testgen::iv_dataset(5000, 12, kGamma, 0.4, true);
            const cmb::IvEstimate iv = cmb::tsls(d);
            const cmb::IvEstimate pe = cmb::plugin_efficient(d);
            for (int j = 0; j < 3; ++j) {
                CHECK(std::abs(pe.gamma_hat[j] - kGamma[j]) < 4.0 * std::sqrt(pe.vcov(j, j)));
            }
            CHECK(pe.vcov(1, 1) < iv.vcov(1, 1));
            CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(pe.vcov).eigenvalues().minCoeff() > 0.0);
        }
        SUBCASE("degree zero cannot separate the fitted price from the intercept") {
            const cmb::Dataset d = testgen::iv_dataset(500, 13, kGamma);
            cmb::SeriesConfig s;
            s.degree = 0;
            CHECK_THROWS_AS(cmb::plugin_efficient(d, s), cmb::FactorizationError);
        }
    }

    TEST_CASE("delta method") {
        const cmb::Dataset d = testgen::iv_dataset(1000, 14, kGamma, 0.4, true);
        cmb::IvEstimate est = cmb::tsls(d);
        const cmb::WelfareQuery q{1.215, 1.436, 42500.0, 1000};

        SUBCASE("gradient matches a Richardson oracle to 1e-6") {
            const cmb::ScalarFunctional f = [&](const Eigen::VectorXd& g) {
                return cmb::dwl({cmb::DemandKind::constant_elasticity, g}, q);
            };
            const Eigen::VectorXd grad = cmb::dwl_gradient(kGamma, cmb::DemandKind::constant_elasticity, q);
            const Eigen::VectorXd oracle = richardson_gradient(f, kGamma);
            for (int j = 0; j < 3; ++j) CHECK(std::abs(grad[j] / oracle[j] - 1.0) < 1e-6);
        }
        SUBCASE("linear functional") {
            const Eigen::Vector3d c(0.5, -2.0, 3.0);
            const cmb::DeltaInterval di = cmb::delta_method([&](const Eigen::VectorXd& g) { return c.dot(g); }, est);
            CHECK((di.gradient - c).cwiseAbs().maxCoeff() < 1e-8);
            const double se = std::sqrt(c.dot(est.vcov * c));
            CHECK(di.se == doctest::Approx(se).epsilon(1e-7));
            CHECK(di.hi - di.point == doctest::Approx(1.959963984540054 * se).epsilon(1e-7));
            CHECK(di.point - di.lo == doctest::Approx(di.hi - di.point).epsilon(1e-12));
        }
        SUBCASE("zero covariance gives a degenerate interval") {
            est.vcov.setZero();
            const cmb::DeltaInterval di = cmb::delta_method_dwl(est, q, cmb::DemandKind::constant_elasticity);
            CHECK(di.se == 0.0);
            CHECK(di.lo == di.point);
            CHECK(di.hi == di.point);
        }
    }
}
