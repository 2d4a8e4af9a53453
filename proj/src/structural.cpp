#include "cmb/structural.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cmb/error.hpp"

namespace cmb {

namespace {

void ce_features(const Eigen::Vector2d& w, const Eigen::Vector2d& z, double* out) {
    out[0] = 1.0;
    out[1] = w[0];
    out[2] = z[0];
}

void translog_features(const Eigen::Vector2d& w, const Eigen::Vector2d& z, double* out) {
    out[0] = 1.0;
    out[1] = w[0];
    out[2] = z[0];
    out[3] = w[0] * w[0];
    out[4] = z[0] * z[0];
    out[5] = w[0] * z[0];
}

// Solves a small symmetric system, raising FactorizationError with the
// condition number when it is numerically singular.
Eigen::VectorXd solve_gram(const Eigen::MatrixXd& g, const Eigen::VectorXd& h, const char* what) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() ? sv[0] : 0.0;
    const double smin = sv.size() ? sv[sv.size() - 1] : 0.0;
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!std::isfinite(cond) || cond > 1e14) {
        std::ostringstream msg;
        msg << what << ": Gram matrix is singular (condition number " << cond << ")";
        throw FactorizationError(msg.str());
    }
    return svd.solve(h);
}

Eigen::MatrixXd regularized_inverse(const Eigen::MatrixXd& s, double ridge, Eigen::Index i) {
    const Eigen::Index q = s.rows();
    Eigen::MatrixXd a = s;
    a.diagonal().array() += ridge * s.trace() / double(q);
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("second-moment matrix not invertible at observation " +
                             std::to_string(i));
    }
    return llt.solve(Eigen::MatrixXd::Identity(q, q));
}

void clamp_to_box(const MomentModel& model, Eigen::VectorXd& gamma) {
    if (model.lower) gamma = gamma.cwiseMax(*model.lower);
    if (model.upper) gamma = gamma.cwiseMin(*model.upper);
}

// Numerical Jacobian of every observation's moment vector: n entries of q x p.
std::vector<Eigen::MatrixXd> moment_jacobians(const SyntheticBlock& block, const MomentModel& model,
                                              const Eigen::VectorXd& gamma) {
    const Eigen::Index n = block.observations();
    std::vector<Eigen::MatrixXd> jac(n, Eigen::MatrixXd(model.d_g, model.d_gamma));
    for (int j = 0; j < model.d_gamma; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(gamma[j]));
        Eigen::VectorXd up = gamma, down = gamma;
        up[j] += h;
        down[j] -= h;
        const Eigen::MatrixXd mu = moments_at_direct(block, model, up).m;
        const Eigen::MatrixXd md = moments_at_direct(block, model, down).m;
        for (Eigen::Index i = 0; i < n; ++i) jac[i].col(j) = (mu.row(i) - md.row(i)).transpose() / (2 * h);
    }
    return jac;
}

// Gauss-Newton on sum_i m_i(gamma)' W_i m_i(gamma) with fixed weights.
Eigen::VectorXd weighted_gauss_newton(const SyntheticBlock& block, const MomentModel& model,
                                      const std::vector<Eigen::MatrixXd>* weights,
                                      Eigen::VectorXd gamma, const FixedPointOptions& opts) {
    const Eigen::Index n = block.observations();
    const int p = model.d_gamma;
    for (int it = 0; it < 50; ++it) {
        const MomentTables t = moments_at_direct(block, model, gamma);
        const auto jac = moment_jacobians(block, model, gamma);
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd h = Eigen::VectorXd::Zero(p);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd mi = t.m.row(i).transpose();
            if (weights) {
                g += jac[i].transpose() * (*weights)[i] * jac[i];
                h += jac[i].transpose() * (*weights)[i] * mi;
            } else {
                g += jac[i].transpose() * jac[i];
                h += jac[i].transpose() * mi;
            }
        }
        const Eigen::VectorXd delta = -solve_gram(g, h, "gauss-newton");
        gamma += delta;
        clamp_to_box(model, gamma);
        if (!gamma.allFinite()) throw NumericalError("gauss-newton produced non-finite parameters");
        if (delta.norm() < 1e-3 * opts.tol) break;
    }
    return gamma;
}

double weighted_foc(const SyntheticBlock& block, const MomentModel& model,
                    const Eigen::VectorXd& gamma, const FixedPointOptions& opts) {
    const MomentTables t = moments_at_direct(block, model, gamma);
    const auto jac = moment_jacobians(block, model, gamma);
    const Eigen::Index n = block.observations();
    Eigen::VectorXd foc = Eigen::VectorXd::Zero(model.d_gamma);
    for (Eigen::Index i = 0; i < n; ++i) {
        foc += jac[i].transpose() * regularized_inverse(t.sigma[i], opts.ridge, i) *
               t.m.row(i).transpose();
    }
    return n > 0 ? foc.norm() / double(n) : 0.0;
}

}  // namespace

MomentModel MomentModel::linear_model(std::string name, int d_gamma, Features features, int outcome) {
    MomentModel m;
    m.name = std::move(name);
    m.d_g = 1;
    m.d_gamma = d_gamma;
    m.linear = Linear{features, outcome};
    m.residual = [features, d_gamma, outcome](const Eigen::Vector2d& w, const Eigen::Vector2d& z,
                                              const Eigen::VectorXd& gamma, double* out) {
        double psi[16];
        features(w, z, psi);
        double fit = 0.0;
        for (int j = 0; j < d_gamma; ++j) fit += psi[j] * gamma[j];
        out[0] = w[outcome] - fit;
    };
    return m;
}

MomentModel MomentModel::constant_elasticity() {
    return linear_model("constant_elasticity", 3, ce_features);
}

MomentModel MomentModel::translog() { return linear_model("translog", 6, translog_features); }

void MomentModel::validate() const {
    if (d_g < 1 || d_gamma < 1) throw DomainError("moment model: dimensions must be >= 1");
    if (!residual) throw DomainError("moment model: missing residual function");
    if (linear) {
        if (d_g != 1) throw DomainError("moment model: linear structure requires a scalar residual");
        if (d_gamma > 16) throw DomainError("moment model: at most 16 linear features");
        if (linear->outcome < 0 || linear->outcome > 1) {
            throw DomainError("moment model: outcome index must be 0 or 1");
        }
    }
    if (lower && lower->size() != d_gamma) throw DomainError("moment model: lower bound length");
    if (upper && upper->size() != d_gamma) throw DomainError("moment model: upper bound length");
}

// ---------------------------------------------------------------------------

double LinearMoments::mean(Eigen::Index i, const Eigen::VectorXd& gamma) const {
    return ey[i] - epsi.row(i).dot(gamma);
}

double LinearMoments::second_moment(Eigen::Index i, const Eigen::VectorXd& gamma) const {
    const Eigen::Index p = params();
    double quad = 0.0;
    for (Eigen::Index a = 0; a < p; ++a)
        for (Eigen::Index c = 0; c < p; ++c) quad += gamma[a] * epp(i, a * p + c) * gamma[c];
    return ey2[i] - 2.0 * epsiy.row(i).dot(gamma) + quad;
}

LinearMoments LinearMoments::from_block(const SyntheticBlock& block, const MomentModel& model) {
    if (!model.linear) throw DomainError("linear moments requested for a nonlinear model");
    const Eigen::Index n = block.observations();
    const Eigen::Index R = block.draws();
    const int p = model.d_gamma;
    const int outcome = model.linear->outcome;
    LinearMoments s;
    s.ey = Eigen::VectorXd::Zero(n);
    s.epsi = Eigen::MatrixXd::Zero(n, p);
    s.epsiy = Eigen::MatrixXd::Zero(n, p);
    s.ey2 = Eigen::VectorXd::Zero(n);
    s.epp = Eigen::MatrixXd::Zero(n, p * p);

    double psi[16];
    Eigen::VectorXd a_psi(p), a_psiy(p);
    Eigen::MatrixXd a_pp(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector2d z = block.z.row(i).transpose();
        double a_y = 0.0, a_y2 = 0.0;
        a_psi.setZero();
        a_psiy.setZero();
        a_pp.setZero();
        for (Eigen::Index r = 0; r < R; ++r) {
            const double wt = block.weights(i, r);
            const Eigen::Vector2d w(block.w1(i, r), block.w2(i, r));
            model.linear->features(w, z, psi);
            const double y = w[outcome];
            a_y += wt * y;
            a_y2 += wt * y * y;
            for (int j = 0; j < p; ++j) {
                const double wp = wt * psi[j];
                a_psi[j] += wp;
                a_psiy[j] += wp * y;
                for (int c = 0; c <= j; ++c) a_pp(j, c) += wp * psi[c];
            }
        }
        s.ey[i] = a_y;
        s.ey2[i] = a_y2;
        s.epsi.row(i) = a_psi.transpose();
        s.epsiy.row(i) = a_psiy.transpose();
        for (int j = 0; j < p; ++j) {
            for (int c = 0; c <= j; ++c) {
                s.epp(i, j * p + c) = a_pp(j, c);
                s.epp(i, c * p + j) = a_pp(j, c);
            }
        }
    }
    return s;
}

MomentTables moments_at(const LinearMoments& stats, const Eigen::VectorXd& gamma) {
    const Eigen::Index n = stats.observations();
    MomentTables t;
    t.m.resize(n, 1);
    t.sigma.assign(n, Eigen::MatrixXd(1, 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        t.m(i, 0) = stats.mean(i, gamma);
        t.sigma[i](0, 0) = stats.second_moment(i, gamma);
    }
    return t;
}

MomentTables moments_at(const SyntheticBlock& block, const MomentModel& model,
                        const Eigen::VectorXd& gamma) {
    if (gamma.size() != model.d_gamma) throw DomainError("moments_at: gamma has wrong length");
    if (model.linear) return moments_at(LinearMoments::from_block(block, model), gamma);
    return moments_at_direct(block, model, gamma);
}

MomentTables moments_at_direct(const SyntheticBlock& block, const MomentModel& model,
                               const Eigen::VectorXd& gamma) {
    if (gamma.size() != model.d_gamma) throw DomainError("moments_at: gamma has wrong length");
    const Eigen::Index n = block.observations();
    const Eigen::Index R = block.draws();
    const int q = model.d_g;
    MomentTables t;
    t.m = Eigen::MatrixXd::Zero(n, q);
    t.sigma.assign(n, Eigen::MatrixXd::Zero(q, q));
    Eigen::VectorXd g(q);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector2d z = block.z.row(i).transpose();
        for (Eigen::Index r = 0; r < R; ++r) {
            const double wt = block.weights(i, r);
            model.residual(Eigen::Vector2d(block.w1(i, r), block.w2(i, r)), z, gamma, g.data());
            t.m.row(i) += wt * g.transpose();
            t.sigma[i].noalias() += wt * g * g.transpose();
        }
        for (int a = 0; a < q; ++a)
            for (int b = a + 1; b < q; ++b) t.sigma[i](a, b) = t.sigma[i](b, a);
    }
    return t;
}

Eigen::VectorXd identity_weighted_start(const LinearMoments& stats) {
    const Eigen::MatrixXd g = stats.epsi.transpose() * stats.epsi;
    const Eigen::VectorXd h = stats.epsi.transpose() * stats.ey;
    return solve_gram(g, h, "identity-weighted start");
}

Eigen::VectorXd gls_iterate(const LinearMoments& stats, const Eigen::VectorXd& gamma_old) {
    const Eigen::Index n = stats.observations();
    const Eigen::Index p = stats.params();
    if (gamma_old.size() != p) throw DomainError("gls_iterate: gamma has wrong length");
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s2 = stats.second_moment(i, gamma_old);
        if (!(s2 > 0.0) || !std::isfinite(s2)) {
            throw NumericalError("conditional variance is not positive at observation " +
                                 std::to_string(i));
        }
        const double wt = 1.0 / s2;
        const Eigen::VectorXd m = stats.epsi.row(i).transpose();
        g.noalias() += wt * m * m.transpose();
        h.noalias() += wt * m * stats.ey[i];
    }
    return solve_gram(g, h, "weighted update");
}

FixedPointResult solve_fixed_point(const LinearMoments& stats, const FixedPointOptions& opts) {
    if (!(opts.tol > 0.0)) throw DomainError("fixed point: tolerance must be positive");
    FixedPointResult res;
    Eigen::VectorXd gamma = identity_weighted_start(stats);
    for (int it = 1; it <= opts.max_iter; ++it) {
        const Eigen::VectorXd next = gls_iterate(stats, gamma);
        const double step = (next - gamma).norm();
        gamma = next;
        res.iterations = it;
        res.final_step_norm = step;
        res.step_norms.push_back(step);
        if (step < opts.tol) {
            res.converged = true;
            break;
        }
    }
    res.gamma = gamma;

    const Eigen::Index n = stats.observations();
    Eigen::VectorXd foc = Eigen::VectorXd::Zero(stats.params());
    for (Eigen::Index i = 0; i < n; ++i) {
        foc += stats.epsi.row(i).transpose() * stats.mean(i, gamma) / stats.second_moment(i, gamma);
    }
    res.foc_residual_norm = n > 0 ? foc.norm() / double(n) : 0.0;
    return res;
}

Eigen::VectorXd identity_weighted_start(const SyntheticBlock& block, const MomentModel& model,
                                        const Eigen::VectorXd& guess, const FixedPointOptions& opts) {
    return weighted_gauss_newton(block, model, nullptr, guess, opts);
}

Eigen::VectorXd gls_iterate(const SyntheticBlock& block, const MomentModel& model,
                            const Eigen::VectorXd& gamma_old, const FixedPointOptions& opts) {
    const MomentTables t = moments_at_direct(block, model, gamma_old);
    std::vector<Eigen::MatrixXd> weights(t.sigma.size());
    for (std::size_t i = 0; i < t.sigma.size(); ++i) {
        weights[i] = regularized_inverse(t.sigma[i], opts.ridge, static_cast<Eigen::Index>(i));
    }
    return weighted_gauss_newton(block, model, &weights, gamma_old, opts);
}

FixedPointResult solve_fixed_point(const SyntheticBlock& block, const MomentModel& model,
                                   const FixedPointOptions& opts) {
    model.validate();
    if (model.linear) return solve_fixed_point(LinearMoments::from_block(block, model), opts);
    if (!(opts.tol > 0.0)) throw DomainError("fixed point: tolerance must be positive");

    FixedPointResult res;
    Eigen::VectorXd gamma =
        identity_weighted_start(block, model, Eigen::VectorXd::Zero(model.d_gamma), opts);
    for (int it = 1; it <= opts.max_iter; ++it) {
        const Eigen::VectorXd next = gls_iterate(block, model, gamma, opts);
        const double step = (next - gamma).norm();
        gamma = next;
        res.iterations = it;
        res.final_step_norm = step;
        res.step_norms.push_back(step);
        if (step < opts.tol) {
            res.converged = true;
            break;
        }
    }
    res.gamma = gamma;
    res.foc_residual_norm = weighted_foc(block, model, gamma, opts);
    return res;
}

// ---------------------------------------------------------------------------

std::size_t StructuralDraws::failures() const {
    std::size_t c = 0;
    for (bool f : failed) c += f;
    return c;
}

std::size_t StructuralDraws::converged_count() const {
    std::size_t c = 0;
    for (bool f : converged) c += f;
    return c;
}

Eigen::MatrixXd StructuralDraws::successful() const {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index s = 0; s < gamma.rows(); ++s) {
        if (!failed[s] && gamma.row(s).allFinite()) keep.push_back(s);
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), gamma.cols());
    for (std::size_t j = 0; j < keep.size(); ++j) out.row(static_cast<Eigen::Index>(j)) = gamma.row(keep[j]);
    return out;
}

std::vector<StructuralDraws> structural_posterior(const PosteriorDraws& draws,
                                                  const Eigen::Ref<const Eigen::MatrixX2d>& z,
                                                  const std::vector<MomentModel>& models,
                                                  const StructuralOptions& opts) {
    if (draws.size() == 0) throw DomainError("structural posterior: no density draws");
    if (models.empty()) throw DomainError("structural posterior: no moment models");
    for (const auto& m : models) m.validate();

    const Eigen::Index S = static_cast<Eigen::Index>(draws.size());
    const bool parametric = draws.b.cols() == 0;
    const SyntheticSampler sampler(parametric ? nullptr : draws.basis, draws.compactifier,
                                   Eigen::MatrixX2d(z), opts.R, opts.seed);

    std::vector<StructuralDraws> out(models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
        auto& d = out[m];
        d.model = models[m].name;
        d.gamma = Eigen::MatrixXd::Constant(S, models[m].d_gamma,
                                            std::numeric_limits<double>::quiet_NaN());
        d.iterations.assign(S, 0);
        d.converged.assign(S, false);
        d.foc_residual.assign(S, std::numeric_limits<double>::quiet_NaN());
        d.failed.assign(S, false);
        d.errors.assign(S, {});
    }
    // std::vector<bool> is not safe for concurrent writes to neighbouring
    // elements, so collect flags in plain arrays first.
    std::vector<std::vector<char>> conv(models.size(), std::vector<char>(S, 0));
    std::vector<std::vector<char>> fail(models.size(), std::vector<char>(S, 0));

#pragma omp parallel
    {
        SyntheticBlock block;
#pragma omp for schedule(dynamic)
        for (Eigen::Index s = 0; s < S; ++s) {
            std::string block_error;
            try {
                sampler.fill(draws.theta[s], draws.b.row(s).transpose(), block);
            } catch (const std::exception& e) {
                block_error = e.what();
            }
            for (std::size_t m = 0; m < models.size(); ++m) {
                auto& d = out[m];
                if (!block_error.empty()) {
                    fail[m][s] = 1;
                    d.errors[s] = block_error;
                    continue;
                }
                try {
                    const FixedPointResult r = solve_fixed_point(block, models[m], opts.fixed_point);
                    d.gamma.row(s) = r.gamma.transpose();
                    d.iterations[s] = r.iterations;
                    conv[m][s] = r.converged;
                    d.foc_residual[s] = r.foc_residual_norm;
                    if (!r.gamma.allFinite()) {
                        fail[m][s] = 1;
                        d.errors[s] = "non-finite fixed point";
                    }
                } catch (const std::exception& e) {
                    fail[m][s] = 1;
                    d.errors[s] = e.what();
                }
            }
        }
    }

    for (std::size_t m = 0; m < models.size(); ++m) {
        auto& d = out[m];
        for (Eigen::Index s = 0; s < S; ++s) {
            d.converged[s] = conv[m][s];
            d.failed[s] = fail[m][s];
        }
        const double frac = double(d.failures()) / double(S);
        if (frac > opts.max_failure_fraction) {
            std::ostringstream msg;
            msg << "structural posterior (" << d.model << "): " << d.failures() << " of " << S
                << " draws failed";
            for (Eigen::Index s = 0; s < S; ++s) {
                if (d.failed[s]) {
                    msg << "; first failure at draw " << s << ": " << d.errors[s];
                    break;
                }
            }
            throw NumericalError(msg.str());
        }
    }
    return out;
}

}  // namespace cmb
