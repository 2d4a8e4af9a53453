#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "cmb/error.hpp"
#include "cmb/sim_harness.hpp"
#include "support.hpp"

namespace {

const Eigen::Vector3d kGamma(4.413, -1.631, 0.293);

cmb::ReplicationRecord record(const std::string& m, double income, double truth, double point, double lo,
                              double hi, bool ok = true) {
    cmb::ReplicationRecord r;
    r.method = m;
    r.n = 100;
    r.income = income;
    r.truth = truth;
    r.point = point;
    r.interval = {lo, hi};
    r.ok = ok;
    return r;
}

cmb::StudyMethod stub(const std::string& name, double bias, double half_width,
                      const Eigen::Vector3d& gamma = kGamma) {
    return {name, [bias, half_width, gamma](const cmb::Dataset&, const std::vector<cmb::WelfareQuery>& qs,
                                                      std::uint64_t) {
                cmb::MethodOutput out;
                for (const auto& q : qs) {
                    const double t = cmb::dwl_constant_elasticity(gamma, q);
                    out.point.push_back(t + bias);
                    out.interval.push_back({t + bias - half_width, t + bias + half_width});
                }
                return out;
            }};
}

}  // namespace

TEST_SUITE("sim_harness") {
    TEST_CASE("calibration recovers the fitted planes and residuals") {
        const cmb::Dataset src = testgen::iv_dataset(800, 1, kGamma, 0.5, true);
        const cmb::CalibratedDgp dgp = cmb::calibrate(src);
        CHECK((dgp.gamma_hat - cmb::tsls(src).gamma_hat).cwiseAbs().maxCoeff() == 0.0);
        const Eigen::MatrixXd z = cmb::iv_instruments(src);
        const Eigen::VectorXd lambda = (z.transpose() * z).ldlt().solve(z.transpose() * src.logP);
        CHECK((dgp.lambda_hat - lambda).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((src.logQ - cmb::iv_regressors(src) * dgp.gamma_hat - dgp.u1).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((src.logP - z * dgp.lambda_hat - dgp.u2).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs((z.transpose() * dgp.u2).maxCoeff()) < 1e-8);
        const double vy = (src.logY.array() - src.logY.mean()).square().sum() / 799.0;
        CHECK(dgp.noise_var[0] == doctest::Approx(vy / 100.0).epsilon(1e-12));
        CHECK(dgp.source_size() == 800);
        CHECK_THROWS_AS(cmb::calibrate(testgen::iv_dataset(9, 1, kGamma)), cmb::DataError);
    }

    TEST_CASE("generated rows resample source residuals with a shared sign") {
        const cmb::Dataset src = testgen::iv_dataset(50, 2, kGamma, 0.5, true);
        cmb::CalibratedDgp dgp = cmb::calibrate(src);
        dgp.noise_var.setZero();
        const cmb::Dataset d = cmb::generate(dgp, 400, 9);
        CHECK(d.size() == 400);
        int plus = 0;
        for (Eigen::Index i = 0; i < 400; ++i) {
            Eigen::Index idx = -1;
            for (Eigen::Index j = 0; j < 50; ++j) {
                if (src.logY[j] == d.logY[i] && src.logA[j] == d.logA[i]) idx = j;
            }
            REQUIRE(idx >= 0);
            const double r2 = d.logP[i] - dgp.lambda_hat.dot(Eigen::Vector3d(1, d.logY[i], d.logA[i]));
            const double r1 = d.logQ[i] - dgp.gamma_hat.dot(Eigen::Vector3d(1, d.logP[i], d.logY[i]));
            const double sign = r2 / dgp.u2[idx];
            CHECK(std::abs(std::abs(sign) - 1.0) < 1e-8);
            CHECK(r1 == doctest::Approx(sign * dgp.u1[idx]).epsilon(1e-8).scale(1.0));
            plus += sign > 0;
        }
        CHECK(plus > 150);
        CHECK(plus < 250);
        CHECK(cmb::generate(dgp, 30, 4).logQ == cmb::generate(dgp, 30, 4).logQ);
        CHECK(cmb::generate(dgp, 30, 4).logQ != cmb::generate(dgp, 30, 5).logQ);
    }

    TEST_CASE("generated data satisfy the moment condition and keep the endogeneity sign") {
        const cmb::CalibratedDgp dgp = cmb::calibrate(cmb::shipped_source());
        const cmb::Dataset d = cmb::generate(dgp, 100000, 77);
        const Eigen::VectorXd u = d.logQ - cmb::iv_regressors(d) * dgp.gamma_hat;
        const Eigen::MatrixXd z = cmb::iv_instruments(d);
        for (int j = 0; j < 3; ++j) {
            const Eigen::ArrayXd prod = z.col(j).array() * u.array();
            const double mean = prod.mean();
            const double se = std::sqrt((prod - mean).square().sum() / (prod.size() - 1) / prod.size());
            CHECK(std::abs(mean) < 4.0 * se);
        }
        const double src_corr = (dgp.u1.array() * dgp.u2.array()).mean();
        const Eigen::VectorXd pc = d.logP.array() - d.logP.mean();
        const double gen_cov = (u.array() * pc.array()).mean();
        CHECK(src_corr > 0.0);
        CHECK((gen_cov > 0.0) == (src_corr > 0.0));
    }

    TEST_CASE("synthetic source hits its target IV estimate") {
        const cmb::Dataset s = cmb::synthetic_source(2000, 5);
        CHECK((cmb::tsls(s).gamma_hat - kGamma).cwiseAbs().maxCoeff() < 1e-9);
        const Eigen::Vector3d other(1.0, -0.5, 0.1);
        CHECK((cmb::tsls(cmb::synthetic_source(500, 6, other)).gamma_hat - other).cwiseAbs().maxCoeff() < 1e-9);
        CHECK_THROWS_AS(cmb::synthetic_source(5, 1), cmb::DomainError);
    }

    TEST_CASE("shipped source equals the data file") {
        const cmb::Dataset file = cmb::load_dataset(std::filesystem::path(CMB_SOURCE_DIR) / "data" / "synthetic_source.csv");
        const cmb::Dataset built = cmb::shipped_source();
        REQUIRE(file.size() == cmb::kShippedSourceRows);
        CHECK(file.logQ == built.logQ);
        CHECK(file.logP == built.logP);
        CHECK(file.logY == built.logY);
        CHECK(file.logA == built.logA);
    }

    TEST_CASE("aggregation: median absolute error, coverage and interval length") {
        std::vector<cmb::ReplicationRecord> recs{
            record("A", 1.0, 10.0, 11.0, 9.0, 12.0), record("A", 1.0, 10.0, 7.0, 6.0, 8.0),
            record("A", 1.0, 10.0, 10.5, 9.5, 13.5), record("A", 1.0, 10.0, 0.0, 0.0, 0.0, false),
            record("B", 1.0, 10.0, 10.0, 10.0, 10.0), record("A", 2.0, 5.0, 5.0, 4.0, 6.0),
            record("C", 1.0, 10.0, 0.0, 0.0, 0.0, false)};
        const auto rows = cmb::aggregate(recs);
        REQUIRE(rows.size() == 4);
        CHECK(rows[0].method == "A");
        CHECK(rows[0].income == 1.0);
        CHECK(rows[0].replications == 4);
        CHECK(rows[0].successes == 3);
        CHECK(rows[0].mae == doctest::Approx(1.0));
        CHECK(rows[0].coverage == doctest::Approx(2.0 / 3.0));
        CHECK(rows[0].median_length == doctest::Approx(3.0));
        CHECK(rows[1].method == "B");
        CHECK(rows[1].coverage == 1.0);  // closed interval
        CHECK(rows[2].income == 2.0);
        CHECK(std::isnan(rows[3].coverage));
        CHECK(rows[3].successes == 0);
    }

    TEST_CASE("study loop with stub methods") {
        const cmb::CalibratedDgp dgp = cmb::calibrate(testgen::iv_dataset(300, 3, kGamma));
        cmb::StudyConfig cfg;
        cfg.n_values = {50, 80};
        cfg.replications = 4;
        const cmb::StudyMethod failing{"F", [](const cmb::Dataset&, const std::vector<cmb::WelfareQuery>&, std::uint64_t) -> cmb::MethodOutput {
                                           throw cmb::NumericalError("boom");
                                       }};
        std::vector<std::string> progress;
        const cmb::SimulationReport rep = cmb::run_study(
            dgp, cfg, {stub("exact", 0.0, 1.0, dgp.gamma_hat), stub("biased", 5.0, 1.0, dgp.gamma_hat), failing}, 11,
            [&](const std::string& s) { progress.push_back(s); });
        CHECK(rep.records.size() == 2 * 4 * 3 * 2);
        CHECK(progress.size() == 2 * 4 * 3);
        CHECK(rep.rows.size() == 3 * 2 * 2);
        const double truth = cmb::dwl_constant_elasticity(dgp.gamma_hat, cfg.queries[0]);
        CHECK(rep.records[0].truth == doctest::Approx(truth).epsilon(1e-14));
        const cmb::ReportRow& exact = rep.row("exact", 42500.0, 50);
        CHECK(exact.coverage == 1.0);
        CHECK(exact.mae == 0.0);
        CHECK(rep.row("biased", 72500.0, 80).coverage == 0.0);
        CHECK(rep.row("F", 42500.0, 80).successes == 0);
        CHECK(rep.records.back().error == "boom");
        CHECK_THROWS_AS(rep.row("nope", 42500.0, 50), cmb::DomainError);

        cfg.replications = 0;
        CHECK_THROWS_AS(cmb::run_study(dgp, cfg, {stub("x", 0, 1)}, 1), cmb::ConfigError);
    }

    TEST_CASE("datasets depend only on seed, size and replication") {
        const cmb::CalibratedDgp dgp = cmb::calibrate(testgen::iv_dataset(300, 4, kGamma));
        cmb::StudyConfig cfg;
        cfg.n_values = {40};
        cfg.replications = 3;
        auto capture = [](std::vector<double>& sink) {
            return cmb::StudyMethod{"cap", [&sink](const cmb::Dataset& d, const std::vector<cmb::WelfareQuery>& qs, std::uint64_t) {
                                        sink.push_back(d.logQ.sum());
                                        cmb::MethodOutput out;
                                        for (std::size_t q = 0; q < qs.size(); ++q) {
                                            out.point.push_back(0.0);
                                            out.interval.push_back({0.0, 0.0});
                                        }
                                        return out;
                                    }};
        };
        std::vector<double> alone, second;
        cmb::run_study(dgp, cfg, {capture(alone)}, 5);
        cmb::run_study(dgp, cfg, {stub("first", 0, 1), capture(second)}, 5);
        CHECK(alone == second);
        std::set<double> distinct(alone.begin(), alone.end());
        CHECK(distinct.size() == 3);
    }

    TEST_CASE("frequentist methods run end to end and reports are written") {
        const cmb::CalibratedDgp dgp = cmb::calibrate(cmb::shipped_source());
        cmb::StudyConfig cfg;
        cfg.n_values = {1000};
        cfg.replications = 2;
        const auto a = cmb::run_study(dgp, cfg, {cmb::tsls_method(), cmb::bootstrap_method(200), cmb::plugin_method()}, 3);
        const auto b = cmb::run_study(dgp, cfg, {cmb::tsls_method(), cmb::bootstrap_method(200), cmb::plugin_method()}, 3);
        for (const auto& r : a.records) CHECK(r.ok);
        for (std::size_t i = 0; i < a.records.size(); ++i) {
            CHECK(a.records[i].point == b.records[i].point);
            CHECK(a.records[i].interval.lo == b.records[i].interval.lo);
        }
        const auto dir = testgen::scratch_dir("sim_reports");
        cmb::write_report_csv(dir / "report.csv", a);
        cmb::write_records_csv(dir / "records.csv", a);
        std::ifstream in(dir / "report.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "method,income,n,mae,coverage,median_length,successes,replications");
        int lines = 0;
        for (std::string l; std::getline(in, l);) ++lines;
        CHECK(lines == 6);
    }
}
