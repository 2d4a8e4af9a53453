#include "cmb/sim_harness.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cmb/error.hpp"
#include "cmb/rng.hpp"

namespace cmb {

namespace {

double sample_variance(const Eigen::VectorXd& v) {
    const double m = v.mean();
    return (v.array() - m).square().sum() / double(v.size() - 1);
}

}  // namespace

CalibratedDgp calibrate(const Dataset& source) {
    source.validate();
    const Eigen::Index n = source.logQ.size();
    if (n < 10) throw DataError("calibrate: need at least 10 source rows, got " + std::to_string(n));

    CalibratedDgp dgp;
    const IvEstimate iv = tsls(source);
    dgp.gamma_hat = iv.gamma_hat;

    const Eigen::MatrixXd z = iv_instruments(source);
    const auto qr = z.colPivHouseholderQr();
    if (qr.rank() < z.cols()) throw FactorizationError("calibrate: first-stage design is rank deficient");
    dgp.lambda_hat = qr.solve(source.logP);

    dgp.u1 = source.logQ - iv_regressors(source) * dgp.gamma_hat;
    dgp.u2 = source.logP - z * dgp.lambda_hat;
    dgp.logY = source.logY;
    dgp.logA = source.logA;
    dgp.noise_var << sample_variance(source.logY), sample_variance(source.logA),
        sample_variance(source.logP), sample_variance(source.logQ);
    dgp.noise_var /= 100.0;
    return dgp;
}

Dataset generate(const CalibratedDgp& dgp, std::size_t n, std::uint64_t seed) {
    const auto N = static_cast<Eigen::Index>(dgp.source_size());
    if (N == 0) throw DomainError("generate: calibrated DGP has no source rows");
    const Eigen::Vector4d sd = dgp.noise_var.cwiseSqrt();
    Rng rng(seed);
    Dataset d = Dataset::with_size(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        const Eigen::Index idx = std::min(static_cast<Eigen::Index>(uniform_open(rng) * double(N)), N - 1);
        double eps[4];
        for (double& e : eps) e = std_normal(rng);
        const double sign = (rng() >> 63) ? 1.0 : -1.0;
        const double ly = dgp.logY[idx] + sd[0] * eps[0];
        const double la = dgp.logA[idx] + sd[1] * eps[1];
        const double lp = dgp.lambda_hat[0] + dgp.lambda_hat[1] * ly + dgp.lambda_hat[2] * la +
                          sign * dgp.u2[idx] + sd[2] * eps[2];
        const double lq = dgp.gamma_hat[0] + dgp.gamma_hat[1] * lp + dgp.gamma_hat[2] * ly +
                          sign * dgp.u1[idx] + sd[3] * eps[3];
        d.logY[i] = ly;
        d.logA[i] = la;
        d.logP[i] = lp;
        d.logQ[i] = lq;
    }
    return d;
}

Dataset synthetic_source(std::size_t n, std::uint64_t seed, const Eigen::Vector3d& target) {
    if (n < 10) throw DomainError("synthetic_source: need at least 10 rows");
    Rng rng(seed);
    Dataset d = Dataset::with_size(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        // Bounded, unit-variance covariates: survey incomes and distances have no long tails.
        const double sy = std::sqrt(3.0) * (2.0 * uniform_open(rng) - 1.0);
        const double sa = std::sqrt(3.0) * (2.0 * uniform_open(rng) - 1.0);
        const double e1 = std_normal(rng);
        const double e2 = std_normal(rng);
        // Demand shocks get noisier with income and quieter with the instrument.
        // The variance multipliers stay within [0.6, 1.4] and [0.8, 1.2].
        const double h1 = std::sqrt(1.0 + 0.4 * std::tanh(0.6 * (sy - sa)));
        const double h2 = std::sqrt(1.0 + 0.2 * std::tanh(0.6 * sa));
        const double v2 = e2;
        const double v1 = 0.4 * e2 + std::sqrt(1.0 - 0.16) * e1;
        d.logY[i] = 10.7 + 0.7 * sy;
        d.logA[i] = 0.6 * sa;
        d.logP[i] = 0.25 + 0.005 * (d.logY[i] - 10.7) + 0.085 * d.logA[i] + 0.06 * h2 * v2;
        d.logQ[i] = target[0] + target[1] * d.logP[i] + target[2] * d.logY[i] + 0.7 * h1 * v1;
    }
    // IV is linear in the outcome, so this shift makes the estimate hit the target.
    const Eigen::VectorXd shift = target - tsls(d).gamma_hat;
    d.logQ += iv_regressors(d) * shift;
    return d;
}

Dataset shipped_source() { return synthetic_source(kShippedSourceRows, kShippedSourceSeed); }

// ---------------------------------------------------------------------------

StudyMethod tsls_method(double alpha) {
    return {"TSLS", [alpha](const Dataset& data, const std::vector<WelfareQuery>& queries, std::uint64_t) {
                const IvEstimate est = tsls(data);
                MethodOutput out;
                for (const auto& q : queries) {
                    const DeltaInterval d = delta_method_dwl(est, q, DemandKind::constant_elasticity, alpha);
                    out.point.push_back(d.point);
                    out.interval.push_back({d.lo, d.hi});
                }
                return out;
            }};
}

StudyMethod bootstrap_method(std::size_t reps, double alpha) {
    return {"BB", [reps, alpha](const Dataset& data, const std::vector<WelfareQuery>& queries,
                                std::uint64_t seed) {
                const BootstrapDraws bb = bayesian_bootstrap(data, reps, seed);
                if (bb.gamma.rows() == 0) throw NumericalError("bootstrap: every replication failed");
                MethodOutput out;
                for (const auto& q : queries) {
                    const WelfareSummary s = summarize(
                        welfare_posterior(bb.gamma, DemandKind::constant_elasticity, q), alpha);
                    out.point.push_back(s.median);
                    out.interval.push_back(s.interval);
                }
                return out;
            }};
}

StudyMethod plugin_method(SeriesConfig series, double alpha) {
    return {"PE", [series, alpha](const Dataset& data, const std::vector<WelfareQuery>& queries,
                                  std::uint64_t) {
                const IvEstimate est = plugin_efficient(data, series);
                MethodOutput out;
                for (const auto& q : queries) {
                    const DeltaInterval d = delta_method_dwl(est, q, DemandKind::constant_elasticity, alpha);
                    out.point.push_back(d.point);
                    out.interval.push_back({d.lo, d.hi});
                }
                return out;
            }};
}

SbResult semiparametric_bayes(const Dataset& data, const SbSettings& settings,
                              const std::vector<WelfareQuery>& queries, std::uint64_t seed,
                              double alpha) {
    SbResult out;
    out.fit = fit_density(data, settings.fit, seed);
    if (out.fit.draws.size() == 0) throw NumericalError("semiparametric Bayes: no posterior draws kept");
    StructuralOptions sopts = settings.structural;
    sopts.seed = structural_seed(seed);
    out.gamma = structural_posterior(out.fit.draws, data.z_matrix(),
                                     {MomentModel::constant_elasticity()}, sopts)
                    .front();
    const Eigen::MatrixXd ok = out.gamma.successful();
    for (const auto& q : queries) {
        out.welfare.push_back(summarize(welfare_posterior(ok, DemandKind::constant_elasticity, q), alpha));
    }
    return out;
}

StudyMethod sb_method(SbSettings settings, double alpha) {
    return {"SB", [settings, alpha](const Dataset& data, const std::vector<WelfareQuery>& queries,
                                    std::uint64_t seed) {
                const SbResult r = semiparametric_bayes(data, settings, queries, seed, alpha);
                MethodOutput out;
                for (const auto& s : r.welfare) {
                    out.point.push_back(s.median);
                    out.interval.push_back(s.interval);
                }
                return out;
            }};
}

// ---------------------------------------------------------------------------

const ReportRow& SimulationReport::row(const std::string& method, double income, std::size_t n) const {
    for (const auto& r : rows) {
        if (r.method == method && r.income == income && r.n == n) return r;
    }
    throw DomainError("simulation report has no row for " + method);
}

std::vector<ReportRow> aggregate(const std::vector<ReplicationRecord>& records) {
    std::vector<ReportRow> rows;
    std::vector<std::vector<const ReplicationRecord*>> groups;
    for (const auto& rec : records) {
        std::size_t g = 0;
        for (; g < rows.size(); ++g) {
            if (rows[g].method == rec.method && rows[g].income == rec.income && rows[g].n == rec.n) break;
        }
        if (g == rows.size()) {
            ReportRow r;
            r.method = rec.method;
            r.income = rec.income;
            r.n = rec.n;
            rows.push_back(r);
            groups.emplace_back();
        }
        groups[g].push_back(&rec);
    }
    for (std::size_t g = 0; g < rows.size(); ++g) {
        auto& row = rows[g];
        std::vector<double> err, len;
        double covered = 0.0;
        row.replications = groups[g].size();
        for (const auto* rec : groups[g]) {
            if (!rec->ok) continue;
            err.push_back(std::abs(rec->point - rec->truth));
            len.push_back(rec->interval.length());
            covered += rec->interval.contains(rec->truth);
        }
        row.successes = err.size();
        if (err.empty()) {
            row.mae = row.coverage = row.median_length = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        row.mae = posterior_median(Eigen::Map<const Eigen::VectorXd>(err.data(), Eigen::Index(err.size())));
        row.median_length =
            posterior_median(Eigen::Map<const Eigen::VectorXd>(len.data(), Eigen::Index(len.size())));
        row.coverage = covered / double(err.size());
    }
    return rows;
}

SimulationReport run_study(const CalibratedDgp& dgp, const StudyConfig& config,
                           const std::vector<StudyMethod>& methods, std::uint64_t seed,
                           const ProgressFn& progress) {
    if (config.replications == 0) throw ConfigError("study: replications must be >= 1");
    if (config.n_values.empty()) throw ConfigError("study: no sample sizes");
    if (methods.empty()) throw ConfigError("study: no methods");
    if (config.queries.empty()) throw ConfigError("study: no welfare queries");

    std::vector<double> truth;
    for (const auto& q : config.queries) truth.push_back(dwl_constant_elasticity(dgp.gamma_hat, q));

    SimulationReport report;
    report.seed = seed;
    report.replications = config.replications;
    for (std::size_t n : config.n_values) {
        for (std::size_t rep = 0; rep < config.replications; ++rep) {
            const std::uint64_t data_seed = derive_seed(seed, n, rep);
            const Dataset data = generate(dgp, n, data_seed);
            for (std::size_t m = 0; m < methods.size(); ++m) {
                MethodOutput out;
                std::string error;
                try {
                    out = methods[m].run(data, config.queries, derive_seed(data_seed, m + 1));
                    if (out.point.size() != config.queries.size() ||
                        out.interval.size() != config.queries.size()) {
                        error = "method returned the wrong number of results";
                    }
                } catch (const std::exception& e) {
                    error = e.what();
                }
                for (std::size_t q = 0; q < config.queries.size(); ++q) {
                    ReplicationRecord rec;
                    rec.method = methods[m].name;
                    rec.n = n;
                    rec.replication = rep;
                    rec.income = config.queries[q].y;
                    rec.truth = truth[q];
                    rec.ok = error.empty() && std::isfinite(out.point[q]) &&
                             std::isfinite(out.interval[q].lo) && std::isfinite(out.interval[q].hi);
                    if (rec.ok) {
                        rec.point = out.point[q];
                        rec.interval = out.interval[q];
                    } else {
                        rec.error = error.empty() ? "non-finite result" : error;
                    }
                    report.records.push_back(rec);
                }
                if (progress) {
                    std::ostringstream msg;
                    msg << "n=" << n << " rep=" << rep << " " << methods[m].name
                        << (error.empty() ? " ok" : " FAILED: " + error);
                    progress(msg.str());
                }
            }
        }
    }
    report.rows = aggregate(report.records);
    return report;
}

void write_report_csv(const std::filesystem::path& path, const SimulationReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(10);
    out << "method,income,n,mae,coverage,median_length,successes,replications\n";
    for (const auto& r : report.rows) {
        out << r.method << ',' << r.income << ',' << r.n << ',' << r.mae << ',' << r.coverage << ','
            << r.median_length << ',' << r.successes << ',' << r.replications << '\n';
    }
}

void write_records_csv(const std::filesystem::path& path, const SimulationReport& report) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(10);
    out << "method,n,replication,income,truth,point,lo,hi,covered,ok,error\n";
    for (const auto& r : report.records) {
        std::string err = r.error;
        for (char& c : err) {
            if (c == ',' || c == '\n') c = ';';
        }
        out << r.method << ',' << r.n << ',' << r.replication << ',' << r.income << ',' << r.truth << ','
            << r.point << ',' << r.interval.lo << ',' << r.interval.hi << ','
            << (r.ok && r.interval.contains(r.truth)) << ',' << r.ok << ',' << err << '\n';
    }
}

}  // namespace cmb
