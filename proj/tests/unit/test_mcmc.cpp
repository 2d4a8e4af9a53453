#include <doctest.h>

#include <cmath>
#include <memory>

#include "cmb/error.hpp"
#include "cmb/mcmc.hpp"
#include "support.hpp"

namespace {

// Standard error of a chain mean by non-overlapping batch means.
double batch_se(const Eigen::VectorXd& x, int batches = 50) {
    const Eigen::Index len = x.size() / batches;
    Eigen::VectorXd means(batches);
    for (int j = 0; j < batches; ++j) means[j] = x.segment(j * len, len).mean();
    const double m = means.mean();
    return std::sqrt((means.array() - m).square().sum() / (batches - 1) / batches);
}

std::shared_ptr<const cmb::KrigingBasis> grid_basis(cmb::Rng& rng, int k) {
    return std::make_shared<const cmb::KrigingBasis>(cmb::MaternKernel(2.5, 1.0),
                                                     testgen::uniform_points(rng, k, 4));
}

cmb::McmcConfig short_config(std::size_t iterations, std::size_t burn_in, std::size_t thin,
                             std::uint64_t seed) {
    cmb::McmcConfig c;
    c.iterations = iterations;
    c.burn_in = burn_in;
    c.thin = thin;
    c.seed = seed;
    c.quadrature_order = 3;
    return c;
}

}  // namespace

TEST_SUITE("mcmc") {
    TEST_CASE("inverse-gamma log density at one") {
        const double expect = 0.001 * std::log(0.001) - std::lgamma(0.001) - 0.001;
        CHECK(cmb::inverse_gamma_logpdf(1.0, 0.001, 0.001) == doctest::Approx(expect).epsilon(1e-14));
        CHECK(cmb::inverse_gamma_logpdf(2.0, 3.0, 1.5) ==
              doctest::Approx(3.0 * std::log(1.5) - std::lgamma(3.0) - 4.0 * std::log(2.0) - 0.75));
        CHECK(std::isinf(cmb::inverse_gamma_logpdf(0.0, 1.0, 1.0)));
    }

    TEST_CASE("adaptation multipliers") {
        CHECK(cmb::adaptation_multiplier(0.35) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(cmb::adaptation_multiplier(1.0) == doctest::Approx(1.015701046).epsilon(1e-9));
        CHECK(cmb::adaptation_multiplier(0.0) == doctest::Approx(0.991338242).epsilon(1e-9));
        // The rule's bounds are 0.95 and 1.05 and it is increasing.
        double prev = 0.0;
        for (double a = 0.0; a <= 1.0; a += 0.01) {
            const double m = cmb::adaptation_multiplier(a);
            CHECK(m > prev);
            CHECK(m > 0.95);
            CHECK(m < 1.05);
            prev = m;
        }
    }

    TEST_CASE("configuration validation") {
        cmb::McmcConfig c = short_config(10, 10, 1, 1);
        CHECK_NOTHROW(c.validate());
        c.burn_in = 11;
        CHECK_THROWS_AS(c.validate(), cmb::ConfigError);
        c = short_config(10, 0, 0, 1);
        CHECK_THROWS_AS(c.validate(), cmb::ConfigError);
        c = short_config(10, 0, 1, 1);
        c.initial_scales.b = 0.0;
        CHECK_THROWS_AS(c.validate(), cmb::ConfigError);
        c = short_config(10, 0, 1, 1);
        c.quadrature_order = 0;
        CHECK_THROWS_AS(c.validate(), cmb::ConfigError);
    }

    TEST_CASE("zero-size steps are always accepted") {
        cmb::Rng rng(1);
        const cmb::Dataset data = testgen::iv_dataset(30, 2, Eigen::Vector3d(1, -1, 0.2));
        const auto basis = grid_basis(rng, 6);
        const cmb::McmcConfig cfg = short_config(10, 0, 1, 3);
        const cmb::ChainContext ctx(data, basis, cmb::Compactifier::fit(data.z_matrix()), {}, cfg);
        cmb::ChainState chain = cmb::init_chain(ctx, cfg);
        chain.scales = {0.0, 0.0, 0.0};
        cmb::Rng draw(5);
        for (int it = 0; it < 50; ++it) {
            cmb::update_b(chain, ctx, draw);
            cmb::update_theta(chain, ctx, draw);
        }
        CHECK(chain.accepted.b == 50);
        CHECK(chain.accepted.mu == 50);
        CHECK(chain.accepted.sigma == 50);
    }

    TEST_CASE("cached likelihood matches a fresh evaluation") {
        cmb::Rng rng(2);
        const cmb::Dataset data = testgen::iv_dataset(60, 4, Eigen::Vector3d(1, -1, 0.2), 0.4, true);
        const auto basis = grid_basis(rng, 12);
        for (auto rule : {cmb::NormalizerRule::gauss_legendre, cmb::NormalizerRule::monte_carlo}) {
            cmb::McmcConfig cfg = short_config(10, 0, 1, 3);
            cfg.normalizer_rule = rule;
            cfg.mc_normalizer_draws = 300;
            cfg.initial_scales = {0.3, 0.5, 0.5};
            const cmb::ChainContext ctx(data, basis, cmb::Compactifier::fit(data.z_matrix()), {}, cfg);
            const cmb::NormalizerGrid grid = cmb::normalizer_grid(cfg);
            cmb::ChainState chain = cmb::init_chain(ctx, cfg);
            cmb::Rng draw(7);
            for (int it = 0; it < 200; ++it) {
                cmb::update_b(chain, ctx, draw);
                cmb::update_theta(chain, ctx, draw);
                if (it % 20 == 0) {
                    const double fresh = cmb::log_likelihood(chain.current, data, grid);
                    CHECK(std::abs(fresh - chain.log_unnorm_lik) < 1e-9 * std::max(1.0, std::abs(fresh)));
                }
            }
            CHECK(chain.accepted.b > 0);
            CHECK(chain.accepted.mu > 0);
        }
    }

    TEST_CASE("kept draw count, empty flag and burn-in bookkeeping") {
        const cmb::Dataset empty;
        cmb::Rng rng(3);
        const auto basis = grid_basis(rng, 4);
        const cmb::Compactifier comp;
        auto d = cmb::run_chain(empty, basis, comp, {}, short_config(12000, 2000, 5, 1));
        CHECK(d.size() == 2000);
        CHECK(d.b.rows() == 2000);
        CHECK_FALSE(d.empty_flag);
        CHECK(d.accepted.tries_b == 12000);
        CHECK(d.accepted_sampling.tries_b == 10000);

        d = cmb::run_chain(empty, basis, comp, {}, short_config(300, 300, 5, 1));
        CHECK(d.size() == 0);
        CHECK(d.empty_flag);
        CHECK(d.accepted_sampling.tries_b == 0);

        d = cmb::run_chain(empty, basis, comp, {}, short_config(53, 0, 5, 1));
        CHECK(d.size() == 10);
    }

    TEST_CASE("same seed gives identical draws, other seeds differ") {
        cmb::Rng rng(4);
        const cmb::Dataset data = testgen::iv_dataset(50, 9, Eigen::Vector3d(1, -1, 0.2));
        const auto basis = grid_basis(rng, 8);
        const auto comp = cmb::Compactifier::fit(data.z_matrix());
        const auto a = cmb::run_chain(data, basis, comp, {}, short_config(400, 100, 3, 21));
        const auto b = cmb::run_chain(data, basis, comp, {}, short_config(400, 100, 3, 21));
        const auto c = cmb::run_chain(data, basis, comp, {}, short_config(400, 100, 3, 22));
        REQUIRE(a.size() == b.size());
        CHECK(a.b == b.b);
        bool same_theta = true;
        for (std::size_t s = 0; s < a.size(); ++s) same_theta = same_theta && a.theta[s] == b.theta[s];
        CHECK(same_theta);
        CHECK(a.b != c.b);
        CHECK(a.final_scales.b == b.final_scales.b);
    }

    TEST_CASE("with no data the chain samples the prior") {
        cmb::Rng rng(5);
        const auto basis = grid_basis(rng, 5);
        cmb::McmcConfig cfg = short_config(102000, 2000, 1, 8);
        const auto d = cmb::run_chain(cmb::Dataset{}, basis, cmb::Compactifier{}, {}, cfg);
        for (Eigen::Index j = 0; j < 5; ++j) {
            const Eigen::VectorXd col = d.b.col(j);
            const double mean = col.mean();
            CHECK(std::abs(mean) < 3.0 * batch_se(col));
            const Eigen::VectorXd sq = col.array().square();
            CHECK(std::abs(sq.mean() - 1.0) < 3.0 * batch_se(sq));
        }
        Eigen::VectorXd mu(d.size());
        for (std::size_t s = 0; s < d.size(); ++s) mu[Eigen::Index(s)] = d.theta[s].mu1[0];
        CHECK(std::abs(mu.mean()) < 3.0 * batch_se(mu));
        const Eigen::VectorXd mu_sq = mu.array().square();
        CHECK(std::abs(mu_sq.mean() - 1000.0) < 3.0 * batch_se(mu_sq));
    }

    TEST_CASE("with b frozen the location posterior centers on OLS") {
        cmb::Rng rng(6);
        cmb::Dataset data = cmb::Dataset::with_size(2000);
        for (Eigen::Index i = 0; i < 2000; ++i) {
            data.logY[i] = testgen::uniform(rng, -1, 1);
            data.logA[i] = testgen::uniform(rng, -1, 1);
            data.logP[i] = 0.5 - 0.3 * data.logY[i] + 0.8 * data.logA[i] + 0.7 * cmb::std_normal(rng);
            data.logQ[i] = 1.0 + 0.2 * data.logY[i] + 0.4 * data.logP[i] + 0.5 * cmb::std_normal(rng);
        }
        Eigen::MatrixXd x(2000, 3);
        x.col(0).setOnes();
        x.col(1) = data.logY;
        x.col(2) = data.logA;
        const Eigen::VectorXd ols = x.colPivHouseholderQr().solve(data.logP);

        cmb::McmcConfig cfg = short_config(6000, 1000, 1, 12);
        cfg.freeze_b = true;
        const auto d = cmb::run_chain(data, grid_basis(rng, 4), cmb::Compactifier::fit(data.z_matrix()), {}, cfg);
        CHECK(d.b.cwiseAbs().maxCoeff() == 0.0);
        for (int j = 0; j < 3; ++j) {
            Eigen::VectorXd col(d.size());
            for (std::size_t s = 0; s < d.size(); ++s) col[Eigen::Index(s)] = d.theta[s].mu1[j];
            const double sd = std::sqrt((col.array() - col.mean()).square().mean());
            CHECK(std::abs(col.mean() - ols[j]) < 3.0 * sd);
        }
    }

    TEST_CASE("stationary distribution of b matches a numerical posterior (one node, one observation)") {
        const Eigen::MatrixXd node = Eigen::MatrixXd::Constant(1, 4, 0.5);
        const auto basis = std::make_shared<const cmb::KrigingBasis>(cmb::MaternKernel(2.5, 1.0), node, 1e-8);
        cmb::BaseParams theta;
        theta.mu1 << 0.1, 0.2, -0.1;
        theta.mu21 << -0.3, 0.0, 0.4;
        theta.mu22 = 0.3;
        const Eigen::Vector2d z(0.5, 0.5);
        const Eigen::Vector2d u_obs(0.15, 0.85);
        cmb::Dataset data = cmb::Dataset::with_size(1);
        const Eigen::Vector2d w = cmb::conditional_quantile(theta, u_obs, z);
        data.logP[0] = w[0];
        data.logQ[0] = w[1];
        data.logY[0] = z[0];
        data.logA[0] = z[1];

        cmb::McmcConfig cfg = short_config(1005000, 5000, 1, 44);
        cfg.freeze_theta = true;
        cfg.initial_theta = theta;
        cfg.quadrature_order = 6;
        cfg.initial_scales.b = 1.0;
        const auto d = cmb::run_chain(data, basis, cmb::Compactifier{}, {}, cfg);

        // Oracle: A(t) = k(t, node) / sqrt(1 + jitter), target over a fine grid of b.
        const cmb::MaternKernel kern(2.5, 1.0);
        auto a_of = [&](const Eigen::Vector2d& u) {
            return kern.at_distance((Eigen::Vector4d(u[0], u[1], 0.5, 0.5) - Eigen::Vector4d::Constant(0.5)).norm()) /
                   std::sqrt(1.0 + 1e-8);
        };
        const cmb::NormalizerGrid grid = cmb::NormalizerGrid::gauss_legendre(6);
        Eigen::VectorXd a_grid(grid.size());
        for (Eigen::Index m = 0; m < grid.size(); ++m) a_grid[m] = a_of(grid.points.row(m).transpose());
        const double a_obs = a_of(u_obs);
        auto log_target = [&](double b) {
            return -0.5 * b * b + b * a_obs - std::log((grid.weights.array() * (b * a_grid.array()).exp()).sum());
        };
        const double lo = -7.0, hi = 7.0, step = 1e-4;
        const int cells = int((hi - lo) / step);
        Eigen::VectorXd cdf(cells + 1);
        cdf[0] = 0.0;
        for (int j = 0; j < cells; ++j) cdf[j + 1] = cdf[j] + std::exp(log_target(lo + (j + 0.5) * step)) * step;
        cdf /= cdf[cells];
        auto oracle_cdf = [&](double b) {
            const double pos = std::clamp((b - lo) / step, 0.0, double(cells));
            const int j = std::min(int(pos), cells - 1);
            return cdf[j] + (pos - j) * (cdf[j + 1] - cdf[j]);
        };
        auto oracle_quantile = [&](double p) {
            const int j = int(std::lower_bound(cdf.data(), cdf.data() + cells + 1, p) - cdf.data());
            return lo + j * step;
        };

        const double b_lo = oracle_quantile(0.0005), b_hi = oracle_quantile(0.9995);
        const int bins = 50;
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(bins + 2);
        for (Eigen::Index s = 0; s < d.b.rows(); ++s) {
            const double b = d.b(s, 0);
            const int j = b < b_lo ? 0 : b >= b_hi ? bins + 1 : 1 + std::min(bins - 1, int((b - b_lo) / (b_hi - b_lo) * bins));
            counts[j] += 1.0;
        }
        counts /= double(d.b.rows());
        double tv = std::abs(counts[0] - oracle_cdf(b_lo)) + std::abs(counts[bins + 1] - (1.0 - oracle_cdf(b_hi)));
        for (int j = 0; j < bins; ++j) {
            const double e0 = b_lo + (b_hi - b_lo) * j / bins, e1 = b_lo + (b_hi - b_lo) * (j + 1) / bins;
            tv += std::abs(counts[j + 1] - (oracle_cdf(e1) - oracle_cdf(e0)));
        }
        tv *= 0.5;
        MESSAGE("total variation " << tv);
        CHECK(tv <= 0.05);
    }

    TEST_CASE("larger b proposals are accepted less often") {
        cmb::Rng rng(7);
        const cmb::Dataset data = testgen::iv_dataset(200, 5, Eigen::Vector3d(1, -1, 0.2), 0.4, true);
        const auto basis = grid_basis(rng, 10);
        const auto comp = cmb::Compactifier::fit(data.z_matrix());
        double small = 0.0, large = 0.0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            cmb::McmcConfig cfg = short_config(1500, 0, 1, seed);
            cfg.freeze_theta = true;
            cfg.initial_scales.b = 0.2;
            small += cmb::run_chain(data, basis, comp, {}, cfg).accepted.rate_b();
            cfg.initial_scales.b = 0.4;
            large += cmb::run_chain(data, basis, comp, {}, cfg).accepted.rate_b();
        }
        MESSAGE("acceptance " << small / 5 << " vs " << large / 5);
        CHECK(large <= small);
    }

    TEST_CASE("OLS start") {
        const cmb::Dataset data = testgen::iv_dataset(500, 3, Eigen::Vector3d(1, -1, 0.2));
        const cmb::BaseParams t = cmb::ols_start(data);
        Eigen::MatrixXd x(500, 3);
        x.col(0).setOnes();
        x.col(1) = data.logY;
        x.col(2) = data.logA;
        const Eigen::VectorXd mu1 = x.colPivHouseholderQr().solve(data.logP);
        CHECK((t.mu1 - mu1).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(t.sigma1_sq > 0.0);
        const cmb::BaseParams tiny = cmb::ols_start(cmb::Dataset::with_size(3));
        CHECK(tiny.sigma1_sq == 1.0);
        CHECK(tiny.mu1.isZero());
    }
}
