#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cmb/error.hpp"
#include "cmb/inference.hpp"
#include "support.hpp"

TEST_SUITE("inference") {
    TEST_CASE("quantile definition") {
        CHECK(cmb::posterior_median(Eigen::Vector3d(3, 1, 2)) == 2.0);
        CHECK(cmb::posterior_median(Eigen::Vector4d(4, 1, 3, 2)) == 2.5);
        const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(11, 0.0, 10.0);
        CHECK(cmb::quantile(v, 0.0) == 0.0);
        CHECK(cmb::quantile(v, 1.0) == 10.0);
        CHECK(cmb::quantile(v, 0.25) == doctest::Approx(2.5));
        CHECK(cmb::quantile(v, 0.33) == doctest::Approx(3.3));
        CHECK_THROWS_AS(cmb::quantile(Eigen::VectorXd(0), 0.5), cmb::DomainError);
        CHECK_THROWS_AS(cmb::quantile(v, 1.5), cmb::DomainError);
        CHECK_THROWS_AS(cmb::quantile(Eigen::Vector2d(1, std::nan("")), 0.5), cmb::DomainError);
    }

    TEST_CASE("quantile is monotone in q and affine equivariant") {
        cmb::Rng rng(1);
        for (int rep = 0; rep < 50; ++rep) {
            const Eigen::VectorXd x = testgen::normals(rng, testgen::integer(rng, 1, 300));
            const double a = testgen::uniform(rng, 0.1, 5.0), b = testgen::uniform(rng, -3, 3);
            const Eigen::VectorXd y = (a * x.array() + b).matrix();
            double prev = -INFINITY;
            for (double q = 0.0; q <= 1.0; q += 0.05) {
                const double v = cmb::quantile(x, q);
                CHECK(v >= prev);
                prev = v;
                CHECK(cmb::quantile(y, q) == doctest::Approx(a * v + b).epsilon(1e-12).scale(1.0));
            }
        }
    }

    TEST_CASE("equitailed intervals widen as alpha shrinks") {
        cmb::Rng rng(2);
        const Eigen::VectorXd x = testgen::normals(rng, 4000);
        const cmb::Interval i95 = cmb::equitailed_interval(x, 0.05);
        const cmb::Interval i80 = cmb::equitailed_interval(x, 0.2);
        CHECK(i95.lo <= i80.lo);
        CHECK(i95.hi >= i80.hi);
        CHECK(i95.lo == doctest::Approx(-1.96).epsilon(0.05));
        CHECK(i95.hi == doctest::Approx(1.96).epsilon(0.05));
        CHECK(i95.contains(0.0));
        CHECK_FALSE(i95.contains(5.0));
        CHECK(i95.length() == doctest::Approx(i95.hi - i95.lo));
        CHECK_THROWS_AS(cmb::equitailed_interval(x, 0.5), cmb::DomainError);
        CHECK_THROWS_AS(cmb::equitailed_interval(x, 0.0), cmb::DomainError);
    }

    TEST_CASE("KS statistic against a direct empirical-CDF oracle") {
        cmb::Rng rng(3);
        const Eigen::VectorXd x = (1.2 * testgen::normals(rng, 300).array() + 0.1).matrix();
        std::vector<double> v(x.data(), x.data() + x.size());
        std::sort(v.begin(), v.end());
        double d = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double f = 0.5 * std::erfc(-v[i] / std::sqrt(2.0));
            d = std::max({d, std::abs(double(i + 1) / 300 - f), std::abs(f - double(i) / 300)});
        }
        CHECK(cmb::ks_statistic_normal(x) == doctest::Approx(d).epsilon(1e-14));
    }

    TEST_CASE("BvM diagnostic: normal draws pass, shifted draws fail") {
        cmb::Rng rng(4);
        const Eigen::MatrixXd cov = testgen::spd(rng, 3);
        const Eigen::Vector3d center(1.0, -2.0, 0.5);
        const Eigen::MatrixXd l = cov.llt().matrixL();
        const Eigen::MatrixXd draws = (testgen::normal_matrix(rng, 2000, 3) * l.transpose()).rowwise() + center.transpose();
        const cmb::BvmDiagnostic ok = cmb::bvm_diagnostic(draws, center, cov);
        CHECK(ok.ks_band == doctest::Approx(1.36 / std::sqrt(2000.0)));
        for (double k : ok.ks) CHECK(k < ok.ks_band);
        CHECK(ok.qq_correlation > 0.99);
        CHECK_FALSE(ok.degenerate);

        const Eigen::Vector3d shifted = center + Eigen::Vector3d(std::sqrt(cov(0, 0)), 0, 0);
        CHECK(cmb::bvm_diagnostic(draws, shifted, cov).ks[0] > 0.3);

        Eigen::MatrixXd flat = draws;
        flat.col(1).setConstant(-2.0);
        CHECK(cmb::bvm_diagnostic(flat, center, cov).degenerate);

        CHECK_THROWS_AS(cmb::bvm_diagnostic(draws.topRows(99), center, cov), cmb::DomainError);
        CHECK_THROWS_AS(cmb::bvm_diagnostic(draws, center, -cov), cmb::FactorizationError);
    }

    TEST_CASE("BvM diagnostic is invariant to linear reparameterization") {
        cmb::Rng rng(5);
        for (int rep = 0; rep < 10; ++rep) {
            const Eigen::MatrixXd cov = testgen::spd(rng, 3);
            const Eigen::Vector3d center = testgen::normals(rng, 3);
            const Eigen::MatrixXd draws = (testgen::normal_matrix(rng, 500, 3) * 1.3).rowwise() + center.transpose();
            const cmb::BvmDiagnostic base = cmb::bvm_diagnostic(draws, center, cov);

            const Eigen::MatrixXd a = testgen::spd(rng, 3) + 0.5 * testgen::normal_matrix(rng, 3, 3);
            const Eigen::Vector3d shift = testgen::normals(rng, 3);
            const Eigen::MatrixXd d2 = (draws * a.transpose()).rowwise() + shift.transpose();
            const cmb::BvmDiagnostic moved = cmb::bvm_diagnostic(d2, a * center + shift, a * cov * a.transpose());
            CHECK(moved.qq_correlation == doctest::Approx(base.qq_correlation).epsilon(1e-9));

            const Eigen::Vector3d s(0.5, 2.0, 7.0);
            const Eigen::MatrixXd d3 = (draws * s.asDiagonal()).rowwise() + shift.transpose();
            const cmb::BvmDiagnostic scaled =
                cmb::bvm_diagnostic(d3, s.asDiagonal() * center + shift, s.asDiagonal() * cov * s.asDiagonal());
            for (int j = 0; j < 3; ++j) CHECK(scaled.ks[j] == doctest::Approx(base.ks[j]).epsilon(1e-9));
        }
    }

    TEST_CASE("threshold decision") {
        const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(1000, 0.0005, 0.9995);
        const cmb::Decision d = cmb::threshold_decision(u, 0.75);
        CHECK(d.action == cmb::Action::similar);
        CHECK(d.prob_similar == doctest::Approx(0.75));
        CHECK(d.posterior_prob == doctest::Approx(0.75));
        const cmb::Decision tie = cmb::threshold_decision(Eigen::Vector4d(1, 2, 3, 4), 2.0);
        CHECK(tie.prob_similar == 0.5);
        CHECK(tie.action == cmb::Action::different);
        CHECK(cmb::threshold_decision(u, 0.1).action == cmb::Action::different);
        CHECK(cmb::threshold_decision(u, 0.1).posterior_prob == doctest::Approx(0.9));
        CHECK(cmb::to_string(cmb::Action::similar) == "similar");
        CHECK_THROWS_AS(cmb::threshold_decision(u, -1.0), cmb::DomainError);
    }
}
