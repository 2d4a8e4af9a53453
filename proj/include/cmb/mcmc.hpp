#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "cmb/cond_density.hpp"
#include "cmb/dataset.hpp"
#include "cmb/rng.hpp"

namespace cmb {

/// Independent priors: locations N(0, location_var), each variance
/// inverse-gamma(ig_shape, ig_scale), kriging coefficients N(0, I).
struct PriorConfig {
    double location_var = 1000.0;
    double ig_shape = 0.001;
    double ig_scale = 0.001;
};

struct ProposalScales {
    double b = 0.1;
    double mu = 1.0;
    double sigma = 1.0;
};

struct McmcConfig {
    std::size_t iterations = 20000;
    std::size_t burn_in = 10000;
    std::size_t thin = 5;
    ProposalScales initial_scales;
    double target_accept = 0.35;
    /// How the per-observation normalizing integral over the unit square is
    /// computed: a fixed block of mc_normalizer_draws uniforms, or a tensor
    /// Gauss-Legendre grid with quadrature_order nodes per half-axis.
    NormalizerRule normalizer_rule = NormalizerRule::gauss_legendre;
    std::size_t mc_normalizer_draws = 2048;
    int quadrature_order = 6;
    std::uint64_t seed = 1;

    /// Location proposals use the Cholesky factor of the inverse Gauss-Newton
    /// information at the starting point, and log-variance steps are scaled by
    /// sqrt(2/n). Ignored for fewer than 10 observations.
    bool precondition = true;
    /// Keep b at zero (parametric base model only).
    bool freeze_b = false;
    /// Keep theta at its starting value.
    bool freeze_theta = false;
    /// Starting value; OLS on the data when empty.
    std::optional<BaseParams> initial_theta;

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

struct AcceptanceCounts {
    std::size_t b = 0, tries_b = 0;
    std::size_t mu = 0, tries_mu = 0;
    std::size_t sigma = 0, tries_sigma = 0;

    static double rate(std::size_t a, std::size_t t) { return t ? double(a) / double(t) : 0.0; }
    double rate_b() const { return rate(b, tries_b); }
    double rate_mu() const { return rate(mu, tries_mu); }
    double rate_sigma() const { return rate(sigma, tries_sigma); }
};

/// Everything about a chain that stays fixed while it runs: the data, the
/// kriging basis evaluated on the normalizer's uniform block, priors and
/// the location preconditioner. Holds a reference to the dataset, which must
/// outlive it. A null basis means the parametric base model (no b).
class ChainContext {
public:
    ChainContext(const Dataset& data, std::shared_ptr<const KrigingBasis> basis,
                 Compactifier compactifier, PriorConfig prior, const McmcConfig& config);

    const Dataset& data() const { return data_; }
    const std::shared_ptr<const KrigingBasis>& basis() const { return basis_; }
    const Compactifier& compactifier() const { return compactifier_; }
    const PriorConfig& prior() const { return prior_; }
    const BasisTable& normalizer_table() const { return table_; }
    const Eigen::MatrixX2d& compact_z() const { return fz_; }

    /// Lower-triangular matrix applied to standard-normal location steps.
    const Eigen::Matrix<double, 7, 7>& location_preconditioner() const { return precond_; }
    /// Multiplier for log-variance steps.
    double log_scale_step() const { return log_scale_step_; }

private:
    const Dataset& data_;
    std::shared_ptr<const KrigingBasis> basis_;
    Compactifier compactifier_;
    PriorConfig prior_;
    Eigen::MatrixX2d fz_;
    BasisTable table_;
    Eigen::Matrix<double, 7, 7> precond_;
    double log_scale_step_ = 1.0;
};

/// The theta-dependent part of the log likelihood:
/// sum_i log f_theta(W_i|z_i) and sum_i kappa(F_theta,z_i(W_i), F0(z_i)).
struct ThetaTerms {
    double base = 0.0;
    Eigen::VectorXd kappa_sum;
    bool finite = true;
    Eigen::Index bad_index = -1;
};

ThetaTerms theta_terms(const ChainContext& ctx, const BaseParams& theta);

struct ChainState {
    DensityState current;
    double log_unnorm_lik = 0.0;
    AcceptanceCounts accepted;
    ProposalScales scales;

    // Cached pieces of log_unnorm_lik.
    ThetaTerms theta_part;
    Eigen::VectorXd dual;           // L^{-T} b
    double log_normalizer_sum = 0.0;  // sum_i log Zhat(z_i)
};

struct PosteriorDraws {
    std::vector<BaseParams> theta;
    Eigen::MatrixXd b;  // draws x k
    std::shared_ptr<const KrigingBasis> basis;
    Compactifier compactifier;

    std::uint64_t seed = 0;
    std::size_t iterations = 0;
    std::size_t burn_in = 0;
    std::size_t thin = 1;
    AcceptanceCounts accepted;          // whole run
    AcceptanceCounts accepted_sampling;  // after burn-in only
    ProposalScales final_scales;
    /// Set when no draws were kept (iterations == burn_in).
    bool empty_flag = false;

    std::size_t size() const { return theta.size(); }
    DensityState state(std::size_t s) const;
};

/// log of the prior density of theta (locations and variances, without the
/// log-variance Jacobian).
double log_prior_theta(const BaseParams& theta, const PriorConfig& prior);

/// inverse-gamma(shape, scale) log density at x > 0.
double inverse_gamma_logpdf(double x, double shape, double scale);

/// sum_i [eta(W_i, z_i) - log Zhat(z_i)] with Zhat from mc_draws uniforms drawn
/// from `seed`. Throws NumericalError naming the first non-finite observation.
double log_likelihood(const DensityState& state, const Dataset& data, std::size_t mc_draws,
                      std::uint64_t seed);

/// Same with an explicit integration grid.
double log_likelihood(const DensityState& state, const Dataset& data, const NormalizerGrid& grid);

/// Seed of the normalizer's uniform block for a chain with the given seed.
std::uint64_t normalizer_seed(std::uint64_t chain_seed);

/// The integration grid a chain with this configuration uses.
NormalizerGrid normalizer_grid(const McmcConfig& config);

/// Starting values: OLS of W1 on (1,z), then of W2 on (1, z, standardized
/// residual); unit variances and zero locations for fewer than 5 rows.
BaseParams ols_start(const Dataset& data);

ChainState init_chain(const ChainContext& ctx, const McmcConfig& config);

/// Random-walk update of b with the normalizer ratio in the acceptance ratio.
void update_b(ChainState& chain, const ChainContext& ctx, Rng& rng);

/// Blocked random-walk update of theta: locations, then log-variances.
void update_theta(ChainState& chain, const ChainContext& ctx, Rng& rng);

/// Multiplier applied to a proposal scale given the running acceptance fraction.
double adaptation_multiplier(double acceptance, double target = 0.35);

/// Applies the multiplier to every block that is being updated.
void adapt_scales(ChainState& chain, const McmcConfig& config);

/// Full sampler: iterations sweeps of update_b / update_theta, adaptation
/// during burn-in, every thin-th post-burn-in state kept.
PosteriorDraws run_chain(const Dataset& data, std::shared_ptr<const KrigingBasis> basis,
                         const Compactifier& compactifier, const PriorConfig& prior,
                         const McmcConfig& config);

}  // namespace cmb
