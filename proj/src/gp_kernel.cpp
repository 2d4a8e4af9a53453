#include "cmb/gp_kernel.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "cmb/error.hpp"

namespace cmb {

namespace {

int half_integer_order(double alpha) {
    const double p = alpha - 0.5;
    const double r = std::round(p);
    if (r >= 0.0 && r <= 10.0 && std::abs(p - r) < 1e-12) return static_cast<int>(r);
    return -1;
}

}  // namespace

double matern_half_integer(int p, double x) {
    // exp(-x) * p!/(2p)! * sum_{i=0}^{p} (p+i)! / (i! (p-i)!) * (2x)^{p-i}
    double factorial_p = 1.0;
    for (int j = 2; j <= p; ++j) factorial_p *= j;
    double factorial_2p = 1.0;
    for (int j = 2; j <= 2 * p; ++j) factorial_2p *= j;

    double sum = 0.0;
    for (int i = 0; i <= p; ++i) {
        double coef = 1.0;  // (p+i)! / (i! (p-i)!)
        for (int j = p - i + 1; j <= p + i; ++j) coef *= j;
        for (int j = 2; j <= i; ++j) coef /= j;
        sum += coef * std::pow(2.0 * x, p - i);
    }
    return std::exp(-x) * factorial_p / factorial_2p * sum;
}

double matern_bessel(double alpha, double x) {
    if (x == 0.0) return 1.0;
    const double log_norm = (1.0 - alpha) * std::log(2.0) - std::lgamma(alpha);
    const double k = std::cyl_bessel_k(alpha, x);
    if (k == 0.0) return 0.0;
    return std::exp(log_norm + alpha * std::log(x) + std::log(k));
}

MaternKernel::MaternKernel(double alpha, double length_scale)
    : alpha_(alpha), length_scale_(length_scale) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw DomainError("Matern smoothness must be positive and finite");
    }
    if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
        throw DomainError("Matern length scale must be positive and finite");
    }
    scaled_ = std::sqrt(2.0 * alpha) / length_scale;
    half_integer_order_ = half_integer_order(alpha);
    log_norm_ = (1.0 - alpha) * std::log(2.0) - std::lgamma(alpha);
}

double MaternKernel::at_distance(double r) const {
    if (!std::isfinite(r) || r < 0.0) throw DomainError("Matern distance must be finite and >= 0");
    if (r == 0.0) return 1.0;
    const double x = scaled_ * r;
    if (half_integer_order_ >= 0) {
        switch (half_integer_order_) {
            case 0: return std::exp(-x);
            case 1: return (1.0 + x) * std::exp(-x);
            case 2: return (1.0 + x + x * x / 3.0) * std::exp(-x);
            default: return matern_half_integer(half_integer_order_, x);
        }
    }
    const double k = std::cyl_bessel_k(alpha_, x);
    if (k == 0.0) return 0.0;
    return std::exp(log_norm_ + alpha_ * std::log(x) + std::log(k));
}

double MaternKernel::operator()(const Eigen::Ref<const Eigen::VectorXd>& t,
                                const Eigen::Ref<const Eigen::VectorXd>& s) const {
    if (t.size() != s.size()) throw DomainError("Matern: points differ in dimension");
    if (!t.allFinite() || !s.allFinite()) throw DomainError("Matern: non-finite point");
    return at_distance((t - s).norm());
}

KrigingBasis::KrigingBasis(MaternKernel kernel, Eigen::MatrixXd nodes, double jitter)
    : kernel_(kernel), nodes_(std::move(nodes)), jitter_(jitter) {
    const Eigen::Index k = nodes_.rows();
    if (k == 0) throw DomainError("kriging basis needs at least one node");
    if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw DomainError("jitter must be >= 0");
    if (!nodes_.allFinite()) throw DomainError("kriging nodes must be finite");
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
            if ((nodes_.row(i) - nodes_.row(j)).squaredNorm() == 0.0) {
                throw DomainError("kriging nodes " + std::to_string(j) + " and " +
                                  std::to_string(i) + " coincide");
            }
        }
    }

    Eigen::MatrixXd a = gram();
    a.diagonal().array() += jitter_;

    // Cholesky with explicit pivot checks so failures can name the pivot.
    factor_ = Eigen::MatrixXd::Zero(k, k);
    double smallest = std::numeric_limits<double>::infinity();
    Eigen::Index smallest_at = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
        double d = a(j, j) - factor_.row(j).head(j).squaredNorm();
        if (d < smallest) {
            smallest = d;
            smallest_at = j;
        }
        if (!(d > 0.0)) {
            std::ostringstream msg;
            msg << "kriging Gram matrix is not positive definite at jitter " << jitter_
                << ": pivot " << smallest_at << " = " << smallest;
            throw FactorizationError(msg.str());
        }
        const double ljj = std::sqrt(d);
        factor_(j, j) = ljj;
        for (Eigen::Index i = j + 1; i < k; ++i) {
            factor_(i, j) = (a(i, j) - factor_.row(i).head(j).dot(factor_.row(j).head(j))) / ljj;
        }
    }
}

Eigen::MatrixXd KrigingBasis::gram() const {
    const Eigen::Index k = nodes_.rows();
    Eigen::MatrixXd g(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        g(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            g(i, j) = g(j, i) = kernel_.at_distance((nodes_.row(i) - nodes_.row(j)).norm());
        }
    }
    return g;
}

Eigen::VectorXd KrigingBasis::kernel_vector(const Eigen::Ref<const Eigen::VectorXd>& t) const {
    if (t.size() != nodes_.cols()) {
        throw DomainError("kriging: point has dimension " + std::to_string(t.size()) +
                          ", basis has " + std::to_string(nodes_.cols()));
    }
    Eigen::VectorXd kv(nodes_.rows());
    for (Eigen::Index j = 0; j < nodes_.rows(); ++j) {
        kv[j] = kernel_.at_distance((nodes_.row(j).transpose() - t).norm());
    }
    return kv;
}

void KrigingBasis::kernel_vector_into(const double* t, double* out) const {
    const Eigen::Index k = nodes_.rows();
    const Eigen::Index d = nodes_.cols();
    for (Eigen::Index j = 0; j < k; ++j) {
        double r2 = 0.0;
        for (Eigen::Index c = 0; c < d; ++c) {
            const double diff = nodes_(j, c) - t[c];
            r2 += diff * diff;
        }
        out[j] = kernel_.at_distance(std::sqrt(r2));
    }
}

Eigen::VectorXd KrigingBasis::basis_vector(const Eigen::Ref<const Eigen::VectorXd>& t) const {
    return factor_.triangularView<Eigen::Lower>().solve(kernel_vector(t));
}

Eigen::VectorXd KrigingBasis::dual_coefficients(const Eigen::Ref<const Eigen::VectorXd>& b) const {
    if (b.size() != size()) throw DomainError("kriging: coefficient vector has wrong length");
    return factor_.transpose().triangularView<Eigen::Upper>().solve(b);
}

double KrigingBasis::path_value(const Eigen::Ref<const Eigen::VectorXd>& b,
                                const Eigen::Ref<const Eigen::VectorXd>& t) const {
    return b.dot(basis_vector(t));
}

}  // namespace cmb
