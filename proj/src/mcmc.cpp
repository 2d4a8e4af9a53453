#include "cmb/mcmc.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cmb/error.hpp"
#include "cmb/normal.hpp"

namespace cmb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Log-variance proposals beyond this are rejected outright (exp overflows).
constexpr double kMaxLogVariance = 700.0;

double log_variance_target(double eta, const PriorConfig& prior) {
    // inverse-gamma density of exp(eta) times the Jacobian exp(eta)
    return prior.ig_shape * std::log(prior.ig_scale) - std::lgamma(prior.ig_shape) -
           prior.ig_shape * eta - prior.ig_scale * std::exp(-eta);
}

double log_prior_locations(const BaseParams& theta, const PriorConfig& prior) {
    const auto loc = theta.locations();
    return -0.5 * BaseParams::kLocations * std::log(2.0 * M_PI * prior.location_var) -
           0.5 * loc.squaredNorm() / prior.location_var;
}

Eigen::VectorXd standard_normals(Rng& rng, Eigen::Index n) {
    Eigen::VectorXd out(n);
    for (Eigen::Index j = 0; j < n; ++j) out[j] = std_normal(rng);
    return out;
}

double total_normalizer(const ChainContext& ctx, const Eigen::VectorXd& b) {
    if (!ctx.basis() || ctx.data().empty()) return 0.0;
    return ctx.normalizer_table().log_integral(b).sum();
}

double assemble(const ThetaTerms& t, const Eigen::VectorXd& dual, double log_norm) {
    double out = t.base - log_norm;
    if (dual.size() > 0) out += dual.dot(t.kappa_sum);
    return out;
}

// Gauss-Newton information of the base model's locations at theta.
Eigen::Matrix<double, 7, 7> location_information(const Dataset& data, const BaseParams& theta) {
    Eigen::Matrix<double, 7, 7> info = Eigen::Matrix<double, 7, 7>::Zero();
    const double s1 = std::sqrt(theta.sigma1_sq);
    const double s2 = std::sqrt(theta.sigma2_sq);
    for (Eigen::Index i = 0; i < data.logQ.size(); ++i) {
        const Eigen::Vector3d x(1.0, data.logY[i], data.logA[i]);
        const double r1 = (data.logP[i] - theta.mean1(data.z(i))) / s1;
        Eigen::Matrix<double, 2, 7> jac = Eigen::Matrix<double, 2, 7>::Zero();
        jac.block<1, 3>(0, 0) = -x.transpose() / s1;
        jac.block<1, 3>(1, 0) = theta.mu22 * x.transpose() / (s1 * s2);
        jac.block<1, 3>(1, 3) = -x.transpose() / s2;
        jac(1, 6) = -r1 / s2;
        info += jac.transpose() * jac;
    }
    return info;
}

}  // namespace

void McmcConfig::validate() const {
    if (iterations == 0) throw ConfigError("mcmc: iterations must be positive");
    if (burn_in > iterations) throw ConfigError("mcmc: burn_in exceeds iterations");
    if (thin == 0) throw ConfigError("mcmc: thin must be >= 1");
    if (!(initial_scales.b > 0.0) || !(initial_scales.mu > 0.0) || !(initial_scales.sigma > 0.0)) {
        throw ConfigError("mcmc: proposal scales must be positive");
    }
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
        throw ConfigError("mcmc: target acceptance must lie in (0, 1)");
    }
    if (mc_normalizer_draws == 0) throw ConfigError("mcmc: mc_normalizer_draws must be positive");
    if (quadrature_order < 1 || quadrature_order > 64) {
        throw ConfigError("mcmc: quadrature_order must be in [1, 64]");
    }
    if (initial_theta) initial_theta->validate();
}

double inverse_gamma_logpdf(double x, double shape, double scale) {
    if (!(x > 0.0)) return kNegInf;
    return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double log_prior_theta(const BaseParams& theta, const PriorConfig& prior) {
    return log_prior_locations(theta, prior) +
           inverse_gamma_logpdf(theta.sigma1_sq, prior.ig_shape, prior.ig_scale) +
           inverse_gamma_logpdf(theta.sigma2_sq, prior.ig_shape, prior.ig_scale);
}

std::uint64_t normalizer_seed(std::uint64_t chain_seed) { return derive_seed(chain_seed, 2); }

NormalizerGrid normalizer_grid(const McmcConfig& config) {
    if (config.normalizer_rule == NormalizerRule::monte_carlo) {
        return NormalizerGrid::monte_carlo(static_cast<Eigen::Index>(config.mc_normalizer_draws),
                                           normalizer_seed(config.seed));
    }
    return NormalizerGrid::gauss_legendre(config.quadrature_order);
}

double log_likelihood(const DensityState& state, const Dataset& data, std::size_t mc_draws,
                      std::uint64_t seed) {
    if (mc_draws == 0) throw DomainError("log_likelihood: need at least one normalizer draw");
    return log_likelihood(state, data, NormalizerGrid::monte_carlo(static_cast<Eigen::Index>(mc_draws), seed));
}

double log_likelihood(const DensityState& state, const Dataset& data, const NormalizerGrid& grid) {
    const Eigen::Index n = data.logQ.size();
    if (n == 0) return 0.0;
    Eigen::VectorXd log_norm = Eigen::VectorXd::Zero(n);
    if (state.b.size() > 0) {
        if (!state.basis) throw DomainError("log_likelihood: coefficients without a kriging basis");
        Eigen::MatrixX2d fz(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
            fz.row(i) = state.compactifier.apply(data.z(i)).transpose();
        }
        const BasisTable table(*state.basis, fz, grid);
        log_norm = table.log_integral(state.b);
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double term = log_density_unnormalized(state, data.w(i), data.z(i)) - log_norm[i];
        if (!std::isfinite(term)) {
            throw NumericalError("log_likelihood: non-finite term at observation " + std::to_string(i));
        }
        total += term;
    }
    return total;
}

BaseParams ols_start(const Dataset& data) {
    BaseParams theta;
    const Eigen::Index n = data.logQ.size();
    if (n < 5) return theta;

    Eigen::MatrixXd x(n, 3);
    x.col(0).setOnes();
    x.col(1) = data.logY;
    x.col(2) = data.logA;
    const auto qr1 = x.colPivHouseholderQr();
    if (qr1.rank() < 3) return theta;
    theta.mu1 = qr1.solve(data.logP);
    const Eigen::VectorXd e1 = data.logP - x * theta.mu1;
    theta.sigma1_sq = std::max(e1.squaredNorm() / double(n), 1e-12);

    Eigen::MatrixXd x2(n, 4);
    x2.leftCols(3) = x;
    x2.col(3) = e1 / std::sqrt(theta.sigma1_sq);
    const auto qr2 = x2.colPivHouseholderQr();
    if (qr2.rank() < 4) return BaseParams{};
    const Eigen::Vector4d c = qr2.solve(data.logQ);
    theta.mu21 = c.head<3>();
    theta.mu22 = c[3];
    theta.sigma2_sq = std::max((data.logQ - x2 * c).squaredNorm() / double(n), 1e-12);
    return theta;
}

ChainContext::ChainContext(const Dataset& data, std::shared_ptr<const KrigingBasis> basis,
                           Compactifier compactifier, PriorConfig prior, const McmcConfig& config)
    : data_(data), basis_(std::move(basis)), compactifier_(std::move(compactifier)), prior_(prior) {
    data_.validate();
    const Eigen::Index n = data_.logQ.size();
    fz_.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) fz_.row(i) = compactifier_.apply(data_.z(i)).transpose();
    if (basis_ && n > 0) {
        table_ = BasisTable(*basis_, fz_, normalizer_grid(config));
    }

    precond_.setIdentity();
    if (config.precondition && n >= 10) {
        const BaseParams start = config.initial_theta ? *config.initial_theta : ols_start(data_);
        const Eigen::LLT<Eigen::Matrix<double, 7, 7>> info(location_information(data_, start));
        if (info.info() == Eigen::Success) {
            const Eigen::Matrix<double, 7, 7> cov =
                info.solve(Eigen::Matrix<double, 7, 7>::Identity());
            const Eigen::LLT<Eigen::Matrix<double, 7, 7>> chol(cov);
            if (chol.info() == Eigen::Success) precond_ = chol.matrixL();
        }
        log_scale_step_ = std::sqrt(2.0 / double(n));
    }
}

ThetaTerms theta_terms(const ChainContext& ctx, const BaseParams& theta) {
    const Dataset& data = ctx.data();
    const Eigen::Index n = data.logQ.size();
    const auto& basis = ctx.basis();
    ThetaTerms out;
    out.kappa_sum = Eigen::VectorXd::Zero(basis ? basis->size() : 0);
    Eigen::VectorXd kv(out.kappa_sum.size());

    const double s1 = std::sqrt(theta.sigma1_sq);
    const double s2 = std::sqrt(theta.sigma2_sq);
    const double log_s = std::log(s1) + std::log(s2);
    double t[4];
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector2d z = data.z(i);
        const double r1 = (data.logP[i] - theta.mean1(z)) / s1;
        const double r2 = (data.logQ[i] - theta.mean2(z) - theta.mu22 * r1) / s2;
        const double term = -2.0 * kLogSqrt2Pi - log_s - 0.5 * (r1 * r1 + r2 * r2);
        if (!std::isfinite(term)) {
            out.finite = false;
            out.bad_index = i;
            return out;
        }
        out.base += term;
        if (basis) {
            t[0] = norm_cdf(r1);
            t[1] = norm_cdf(r2);
            t[2] = ctx.compact_z()(i, 0);
            t[3] = ctx.compact_z()(i, 1);
            basis->kernel_vector_into(t, kv.data());
            out.kappa_sum += kv;
        }
    }
    return out;
}

ChainState init_chain(const ChainContext& ctx, const McmcConfig& config) {
    ChainState chain;
    chain.current.theta = config.initial_theta ? *config.initial_theta : ols_start(ctx.data());
    chain.current.theta.validate();
    chain.current.basis = ctx.basis();
    chain.current.compactifier = ctx.compactifier();
    const Eigen::Index k = ctx.basis() ? ctx.basis()->size() : 0;
    chain.current.b = Eigen::VectorXd::Zero(k);
    chain.dual = Eigen::VectorXd::Zero(k);
    chain.scales = config.initial_scales;
    chain.theta_part = theta_terms(ctx, chain.current.theta);
    if (!chain.theta_part.finite) {
        throw NumericalError("mcmc: non-finite likelihood at the starting value, observation " +
                             std::to_string(chain.theta_part.bad_index));
    }
    chain.log_normalizer_sum = total_normalizer(ctx, chain.current.b);
    chain.log_unnorm_lik = assemble(chain.theta_part, chain.dual, chain.log_normalizer_sum);
    return chain;
}

void update_b(ChainState& chain, const ChainContext& ctx, Rng& rng) {
    if (!ctx.basis()) return;
    ++chain.accepted.tries_b;
    const Eigen::VectorXd& b = chain.current.b;
    const Eigen::VectorXd prop = b + chain.scales.b * standard_normals(rng, b.size());
    const Eigen::VectorXd dual = ctx.basis()->dual_coefficients(prop);
    const double log_norm = total_normalizer(ctx, prop);
    const double lik = assemble(chain.theta_part, dual, log_norm);
    const double log_ratio =
        (lik - chain.log_unnorm_lik) - 0.5 * (prop.squaredNorm() - b.squaredNorm());
    const double log_u = std::log(uniform_open(rng));
    if (std::isfinite(lik) && log_u < log_ratio) {
        chain.current.b = prop;
        chain.dual = dual;
        chain.log_normalizer_sum = log_norm;
        chain.log_unnorm_lik = lik;
        ++chain.accepted.b;
    }
}

void update_theta(ChainState& chain, const ChainContext& ctx, Rng& rng) {
    const PriorConfig& prior = ctx.prior();

    // Locations. The normalizer does not depend on theta and cancels.
    {
        ++chain.accepted.tries_mu;
        BaseParams prop = chain.current.theta;
        const BaseParams::Locations step =
            ctx.location_preconditioner() * standard_normals(rng, BaseParams::kLocations);
        prop.set_locations(chain.current.theta.locations() + chain.scales.mu * step);
        const ThetaTerms terms = theta_terms(ctx, prop);
        const double lik = assemble(terms, chain.dual, chain.log_normalizer_sum);
        const double log_ratio = (lik - chain.log_unnorm_lik) + log_prior_locations(prop, prior) -
                                 log_prior_locations(chain.current.theta, prior);
        const double log_u = std::log(uniform_open(rng));
        if (terms.finite && std::isfinite(lik) && log_u < log_ratio) {
            chain.current.theta = prop;
            chain.theta_part = terms;
            chain.log_unnorm_lik = lik;
            ++chain.accepted.mu;
        }
    }

    // Variances, random walk on the log scale.
    {
        ++chain.accepted.tries_sigma;
        const double eta1 = std::log(chain.current.theta.sigma1_sq);
        const double eta2 = std::log(chain.current.theta.sigma2_sq);
        const double step = chain.scales.sigma * ctx.log_scale_step();
        const double prop1 = eta1 + step * std_normal(rng);
        const double prop2 = eta2 + step * std_normal(rng);
        const double log_u = std::log(uniform_open(rng));
        if (std::abs(prop1) > kMaxLogVariance || std::abs(prop2) > kMaxLogVariance) return;

        BaseParams prop = chain.current.theta;
        prop.sigma1_sq = std::exp(prop1);
        prop.sigma2_sq = std::exp(prop2);
        const ThetaTerms terms = theta_terms(ctx, prop);
        const double lik = assemble(terms, chain.dual, chain.log_normalizer_sum);
        const double log_ratio = (lik - chain.log_unnorm_lik) + log_variance_target(prop1, prior) +
                                 log_variance_target(prop2, prior) -
                                 log_variance_target(eta1, prior) - log_variance_target(eta2, prior);
        if (terms.finite && std::isfinite(lik) && log_u < log_ratio) {
            chain.current.theta = prop;
            chain.theta_part = terms;
            chain.log_unnorm_lik = lik;
            ++chain.accepted.sigma;
        }
    }
}

double adaptation_multiplier(double acceptance, double target) {
    const double x = acceptance - target;
    return 0.95 + 0.1 / (1.0 + std::exp(-x));
}

void adapt_scales(ChainState& chain, const McmcConfig& config) {
    const auto& a = chain.accepted;
    const double t = config.target_accept;
    if (a.tries_b > 0) chain.scales.b *= adaptation_multiplier(a.rate_b(), t);
    if (a.tries_mu > 0) chain.scales.mu *= adaptation_multiplier(a.rate_mu(), t);
    if (a.tries_sigma > 0) chain.scales.sigma *= adaptation_multiplier(a.rate_sigma(), t);
}

DensityState PosteriorDraws::state(std::size_t s) const {
    DensityState out;
    out.theta = theta.at(s);
    out.b = b.row(static_cast<Eigen::Index>(s)).transpose();
    out.basis = basis;
    out.compactifier = compactifier;
    return out;
}

PosteriorDraws run_chain(const Dataset& data, std::shared_ptr<const KrigingBasis> basis,
                         const Compactifier& compactifier, const PriorConfig& prior,
                         const McmcConfig& config) {
    config.validate();
    const ChainContext ctx(data, basis, compactifier, prior, config);
    ChainState chain = init_chain(ctx, config);
    Rng rng(derive_seed(config.seed, 1));

    const std::size_t kept = (config.iterations - config.burn_in) / config.thin;
    const Eigen::Index k = chain.current.b.size();
    PosteriorDraws out;
    out.theta.reserve(kept);
    out.b.resize(static_cast<Eigen::Index>(kept), k);
    out.basis = basis;
    out.compactifier = compactifier;
    out.seed = config.seed;
    out.iterations = config.iterations;
    out.burn_in = config.burn_in;
    out.thin = config.thin;

    AcceptanceCounts at_burn_in;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        if (it == config.burn_in) at_burn_in = chain.accepted;
        if (!config.freeze_b) update_b(chain, ctx, rng);
        if (!config.freeze_theta) update_theta(chain, ctx, rng);
        if (it < config.burn_in) {
            adapt_scales(chain, config);
        } else if ((it - config.burn_in + 1) % config.thin == 0) {
            const auto row = static_cast<Eigen::Index>(out.theta.size());
            out.theta.push_back(chain.current.theta);
            if (k > 0) out.b.row(row) = chain.current.b.transpose();
        }
    }
    if (config.burn_in == config.iterations) at_burn_in = chain.accepted;

    out.accepted = chain.accepted;
    const auto& a = chain.accepted;
    out.accepted_sampling = {a.b - at_burn_in.b,         a.tries_b - at_burn_in.tries_b,
                             a.mu - at_burn_in.mu,       a.tries_mu - at_burn_in.tries_mu,
                             a.sigma - at_burn_in.sigma, a.tries_sigma - at_burn_in.tries_sigma};
    out.final_scales = chain.scales;
    out.empty_flag = out.theta.empty();
    return out;
}

}  // namespace cmb
