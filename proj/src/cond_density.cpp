#include "cmb/cond_density.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cmb/error.hpp"
#include "cmb/normal.hpp"
#include "cmb/rng.hpp"

namespace cmb {

BaseParams::Locations BaseParams::locations() const {
    Locations loc;
    loc << mu1, mu21, mu22;
    return loc;
}

void BaseParams::set_locations(const Locations& loc) {
    mu1 = loc.segment<3>(0);
    mu21 = loc.segment<3>(3);
    mu22 = loc[6];
}

void BaseParams::validate() const {
    if (!mu1.allFinite() || !mu21.allFinite() || !std::isfinite(mu22)) {
        throw DomainError("base parameters: non-finite location");
    }
    if (!(sigma1_sq > 0.0) || !(sigma2_sq > 0.0) || !std::isfinite(sigma1_sq) ||
        !std::isfinite(sigma2_sq)) {
        throw DomainError("base parameters: variances must be positive and finite");
    }
}

Compactifier::Compactifier(Eigen::Vector2d lo, Eigen::Vector2d hi) : lo_(lo), hi_(hi) {
    if (!lo.allFinite() || !hi.allFinite() || (hi.array() < lo.array()).any()) {
        throw DomainError("compactifier: invalid range");
    }
}

Compactifier::Compactifier(const Compactifier& other)
    : lo_(other.lo_), hi_(other.hi_), clamped_(other.clamp_count()) {}

Compactifier& Compactifier::operator=(const Compactifier& other) {
    lo_ = other.lo_;
    hi_ = other.hi_;
    clamped_.store(other.clamp_count(), std::memory_order_relaxed);
    return *this;
}

Compactifier Compactifier::fit(const Eigen::Ref<const Eigen::MatrixX2d>& z) {
    if (z.rows() == 0) throw DataError("compactifier: no observations");
    if (!z.allFinite()) throw DataError("compactifier: non-finite external variables");
    return Compactifier(z.colwise().minCoeff().transpose(), z.colwise().maxCoeff().transpose());
}

Eigen::Vector2d Compactifier::apply(const Eigen::Vector2d& z) const {
    Eigen::Vector2d out;
    bool clamped = false;
    for (int c = 0; c < 2; ++c) {
        const double range = hi_[c] - lo_[c];
        // A constant coordinate carries no information; park it mid-cube.
        double v = range > 0.0 ? (z[c] - lo_[c]) / range : 0.5;
        if (v < 0.0) {
            v = 0.0;
            clamped = true;
        } else if (v > 1.0) {
            v = 1.0;
            clamped = true;
        }
        out[c] = v;
    }
    if (clamped) clamped_.fetch_add(1, std::memory_order_relaxed);
    return out;
}

double base_log_density(const BaseParams& theta, const Eigen::Vector2d& w, const Eigen::Vector2d& z) {
    const double s1 = std::sqrt(theta.sigma1_sq);
    const double m1 = theta.mean1(z);
    const double std1 = (w[0] - m1) / s1;
    const double m2 = theta.mean2(z) + theta.mu22 * std1;
    return normal_logpdf(w[0], m1, theta.sigma1_sq) + normal_logpdf(w[1], m2, theta.sigma2_sq);
}

Eigen::Vector2d conditional_cdf(const BaseParams& theta, const Eigen::Vector2d& w,
                                const Eigen::Vector2d& z) {
    const double s1 = std::sqrt(theta.sigma1_sq);
    const double s2 = std::sqrt(theta.sigma2_sq);
    const double std1 = (w[0] - theta.mean1(z)) / s1;
    const double m2 = theta.mean2(z) + theta.mu22 * std1;
    return {norm_cdf(std1), norm_cdf((w[1] - m2) / s2)};
}

Eigen::Vector2d conditional_quantile(const BaseParams& theta, const Eigen::Vector2d& u,
                                     const Eigen::Vector2d& z) {
    if (!(u[0] > 0.0 && u[0] < 1.0 && u[1] > 0.0 && u[1] < 1.0)) {
        throw DomainError("conditional_quantile: u must lie in the open unit square");
    }
    const double e1 = norm_quantile(u[0]);
    const double e2 = norm_quantile(u[1]);
    const double w1 = theta.mean1(z) + std::sqrt(theta.sigma1_sq) * e1;
    const double w2 = theta.mean2(z) + theta.mu22 * e1 + std::sqrt(theta.sigma2_sq) * e2;
    return {w1, w2};
}

Eigen::Vector4d kriging_point(const Eigen::Vector2d& u, const Eigen::Vector2d& fz) {
    return {u[0], u[1], fz[0], fz[1]};
}

double log_density_unnormalized(const DensityState& state, const Eigen::Vector2d& w,
                                const Eigen::Vector2d& z) {
    double out = base_log_density(state.theta, w, z);
    if (state.b.size() == 0) return out;
    if (!state.basis) throw DomainError("density state has coefficients but no kriging basis");
    const Eigen::Vector4d t =
        kriging_point(conditional_cdf(state.theta, w, z), state.compactifier.apply(z));
    return out + state.basis->path_value(state.b, t);
}

// ---------------------------------------------------------------------------

void gauss_legendre_rule(int order, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
    if (order < 1) throw DomainError("Gauss-Legendre rule needs at least one node");
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
    for (int j = 1; j < order; ++j) {
        const double off = j / std::sqrt(4.0 * j * j - 1.0);
        jacobi(j, j - 1) = jacobi(j - 1, j) = off;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    nodes = eig.eigenvalues();
    weights = 2.0 * eig.eigenvectors().row(0).transpose().array().square();
}

NormalizerGrid NormalizerGrid::monte_carlo(Eigen::Index draws, std::uint64_t seed) {
    if (draws < 1) throw DomainError("normalizer grid needs at least one draw");
    NormalizerGrid g;
    g.points = uniform_block(draws, seed);
    g.weights = Eigen::VectorXd::Constant(draws, 1.0 / double(draws));
    return g;
}

NormalizerGrid NormalizerGrid::gauss_legendre(int order) {
    Eigen::VectorXd x, w;
    gauss_legendre_rule(order, x, w);
    const int m = 2 * order;
    Eigen::VectorXd axis(m), axis_w(m);
    for (int panel = 0; panel < 2; ++panel) {
        for (int j = 0; j < order; ++j) {
            axis[panel * order + j] = 0.25 * (x[j] + 1.0) + 0.5 * panel;
            axis_w[panel * order + j] = 0.25 * w[j];
        }
    }
    NormalizerGrid g;
    g.points.resize(m * m, 2);
    g.weights.resize(m * m);
    for (int a = 0; a < m; ++a) {
        for (int c = 0; c < m; ++c) {
            g.points.row(a * m + c) << axis[a], axis[c];
            g.weights[a * m + c] = axis_w[a] * axis_w[c];
        }
    }
    return g;
}

NormalizerRule parse_normalizer_rule(const std::string& s) {
    if (s == "monte_carlo") return NormalizerRule::monte_carlo;
    if (s == "gauss_legendre") return NormalizerRule::gauss_legendre;
    throw ConfigError("unknown normalizer rule '" + s + "' (monte_carlo or gauss_legendre)");
}

std::string to_string(NormalizerRule rule) {
    return rule == NormalizerRule::monte_carlo ? "monte_carlo" : "gauss_legendre";
}

BasisTable::BasisTable(const KrigingBasis& basis, const Eigen::Ref<const Eigen::MatrixX2d>& fz,
                       const NormalizerGrid& grid) {
    if (grid.weights.size() != grid.points.rows() || !(grid.weights.array() > 0.0).all()) {
        throw DomainError("basis table: grid weights must be positive, one per point");
    }
    build(basis, fz, grid.points);
    log_weights_ = grid.weights.array().log();
}

BasisTable::BasisTable(const KrigingBasis& basis, const Eigen::Ref<const Eigen::MatrixX2d>& fz,
                       const Eigen::Ref<const Eigen::MatrixX2d>& uniforms) {
    build(basis, fz, uniforms);
    log_weights_ = Eigen::VectorXd::Constant(m_, -std::log(static_cast<double>(m_)));
}

void BasisTable::build(const KrigingBasis& basis, const Eigen::Ref<const Eigen::MatrixX2d>& fz,
                       const Eigen::Ref<const Eigen::MatrixX2d>& points) {
    if (basis.dim() != 4) throw DomainError("basis table: kriging basis must be 4-dimensional");
    n_ = fz.rows();
    m_ = points.rows();
    k_ = basis.size();
    values_.resize(k_, n_ * m_);
    Eigen::MatrixXd block(k_, m_);
    double t[4];
    for (Eigen::Index i = 0; i < n_; ++i) {
        t[2] = fz(i, 0);
        t[3] = fz(i, 1);
        for (Eigen::Index m = 0; m < m_; ++m) {
            t[0] = points(m, 0);
            t[1] = points(m, 1);
            basis.kernel_vector_into(t, block.col(m).data());
        }
        basis.factor().triangularView<Eigen::Lower>().solveInPlace(block);
        values_.middleCols(i * m_, m_) = block.cast<float>();
    }
}

Eigen::MatrixXd BasisTable::path_values(const Eigen::VectorXd& b) const {
    if (b.size() != k_) throw DomainError("basis table: coefficient vector has wrong length");
    const Eigen::VectorXf flat = values_.transpose() * b.cast<float>();
    using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMatrixF>(flat.data(), n_, m_).cast<double>();
}

Eigen::VectorXd BasisTable::log_integral(const Eigen::VectorXd& b) const {
    if (b.size() != k_) throw DomainError("basis table: coefficient vector has wrong length");
    const Eigen::VectorXf flat = values_.transpose() * b.cast<float>();
    Eigen::VectorXd out(n_);
    for (Eigen::Index i = 0; i < n_; ++i) {
        const float* p = flat.data() + i * m_;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index m = 0; m < m_; ++m) mx = std::max(mx, p[m] + log_weights_[m]);
        double s = 0.0;
        for (Eigen::Index m = 0; m < m_; ++m) s += std::exp(p[m] + log_weights_[m] - mx);
        out[i] = mx + std::log(s);
    }
    return out;
}

Eigen::MatrixX2d uniform_block(Eigen::Index rows, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixX2d u(rows, 2);
    for (Eigen::Index r = 0; r < rows; ++r) {
        u(r, 0) = uniform_open(rng);
        u(r, 1) = uniform_open(rng);
    }
    return u;
}

// ---------------------------------------------------------------------------

SyntheticSampler::SyntheticSampler(std::shared_ptr<const KrigingBasis> basis,
                                   Compactifier compactifier, Eigen::MatrixX2d z, Eigen::Index R,
                                   std::uint64_t seed)
    : basis_(std::move(basis)), compactifier_(std::move(compactifier)), z_(std::move(z)) {
    if (R < 2) throw DomainError("synthetic block needs R >= 2 draws");
    if (!z_.allFinite()) throw DomainError("synthetic block: non-finite external variables");
    uniforms_ = uniform_block(R, seed);
    scores_.resize(R, 2);
    for (Eigen::Index r = 0; r < R; ++r) {
        scores_(r, 0) = norm_quantile(uniforms_(r, 0));
        scores_(r, 1) = norm_quantile(uniforms_(r, 1));
    }
    if (basis_) {
        Eigen::MatrixX2d fz(z_.rows(), 2);
        for (Eigen::Index i = 0; i < z_.rows(); ++i) {
            fz.row(i) = compactifier_.apply(z_.row(i).transpose()).transpose();
        }
        table_ = BasisTable(*basis_, fz, uniforms_);
    }
}

SyntheticBlock SyntheticSampler::block(const BaseParams& theta, const Eigen::VectorXd& b) const {
    SyntheticBlock out;
    fill(theta, b, out);
    return out;
}

void SyntheticSampler::fill(const BaseParams& theta, const Eigen::VectorXd& b,
                            SyntheticBlock& out) const {
    theta.validate();
    const Eigen::Index n = z_.rows();
    const Eigen::Index R = uniforms_.rows();
    out.uniforms = uniforms_;
    out.z = z_;
    out.w1.resize(n, R);
    out.w2.resize(n, R);
    out.weights.resize(n, R);
    out.ess.resize(n);

    const double s1 = std::sqrt(theta.sigma1_sq);
    const double s2 = std::sqrt(theta.sigma2_sq);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector2d zi = z_.row(i).transpose();
        const double m1 = theta.mean1(zi);
        const double m2 = theta.mean2(zi);
        for (Eigen::Index r = 0; r < R; ++r) {
            out.w1(i, r) = m1 + s1 * scores_(r, 0);
            out.w2(i, r) = m2 + theta.mu22 * scores_(r, 0) + s2 * scores_(r, 1);
        }
    }

    const bool flat = b.size() == 0 || b.isZero(0.0);
    if (flat) {
        out.weights.setConstant(1.0 / static_cast<double>(R));
        out.ess.setConstant(static_cast<double>(R));
        return;
    }
    if (!basis_) throw DomainError("synthetic block: coefficients given without a kriging basis");

    const Eigen::MatrixXd paths = table_.path_values(b);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = paths.row(i).maxCoeff();
        if (!std::isfinite(mx)) {
            throw NumericalError("degenerate importance weights at observation " + std::to_string(i));
        }
        double sum = 0.0;
        double sum_sq = 0.0;
        for (Eigen::Index r = 0; r < R; ++r) {
            const double w = std::exp(paths(i, r) - mx);
            out.weights(i, r) = w;
            sum += w;
            sum_sq += w * w;
        }
        if (!(sum > 0.0) || !std::isfinite(sum)) {
            throw NumericalError("degenerate importance weights at observation " + std::to_string(i));
        }
        out.weights.row(i) /= sum;
        out.ess[i] = sum * sum / sum_sq;
    }
}

SyntheticBlock make_synthetic_block(const DensityState& state, const Eigen::Ref<const Eigen::MatrixX2d>& z,
                                    Eigen::Index R, std::uint64_t seed) {
    if (state.b.size() > 0 && !state.basis) {
        throw DomainError("density state has coefficients but no kriging basis");
    }
    SyntheticSampler sampler(state.b.size() > 0 ? state.basis : nullptr, state.compactifier,
                             Eigen::MatrixX2d(z), R, seed);
    return sampler.block(state.theta, state.b);
}

}  // namespace cmb
