#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cmb/baselines.hpp"
#include "cmb/dataset.hpp"
#include "cmb/inference.hpp"
#include "cmb/pipeline.hpp"
#include "cmb/structural.hpp"
#include "cmb/welfare.hpp"

namespace cmb {

/// Wild-bootstrap data-generating process calibrated to a source dataset.
struct CalibratedDgp {
    Eigen::Vector3d gamma_hat;   // IV fit of logQ on (1, logP, logY)
    Eigen::Vector3d lambda_hat;  // OLS fit of logP on (1, logY, logA)
    Eigen::VectorXd u1;          // structural residuals
    Eigen::VectorXd u2;          // first-stage residuals
    Eigen::VectorXd logY;
    Eigen::VectorXd logA;
    /// Variances of (logY, logA, logP, logQ) divided by 100.
    Eigen::Vector4d noise_var;

    std::size_t source_size() const { return static_cast<std::size_t>(logY.size()); }
};

/// Requires at least 10 rows; throws on rank deficiency.
CalibratedDgp calibrate(const Dataset& source);

/// Draws n rows: resample source indices, perturb (logY, logA) with Gaussian
/// noise, rebuild logP and logQ from the fitted planes with one Rademacher
/// sign per row multiplying both residuals.
Dataset generate(const CalibratedDgp& dgp, std::size_t n, std::uint64_t seed);

/// Stand-in for a household survey: a linear IV design with heteroskedastic,
/// correlated errors, shifted so that its IV estimate is exactly `target`.
Dataset synthetic_source(std::size_t n, std::uint64_t seed,
                         const Eigen::Vector3d& target = Eigen::Vector3d(4.413, -1.631, 0.293));

inline constexpr std::size_t kShippedSourceRows = 4812;
inline constexpr std::uint64_t kShippedSourceSeed = 20190417;

/// The calibration source shipped as data/synthetic_source.csv.
Dataset shipped_source();

/// Output of one estimation method on one dataset, one entry per query.
struct MethodOutput {
    std::vector<double> point;
    std::vector<Interval> interval;
};

struct StudyMethod {
    std::string name;
    std::function<MethodOutput(const Dataset&, const std::vector<WelfareQuery>&, std::uint64_t seed)> run;
};

StudyMethod tsls_method(double alpha = 0.05);
StudyMethod bootstrap_method(std::size_t reps, double alpha = 0.05);
StudyMethod plugin_method(SeriesConfig series = {}, double alpha = 0.05);

struct SbSettings {
    FitSettings fit;
    StructuralOptions structural;
};

struct SbResult {
    FitResult fit;
    StructuralDraws gamma;
    std::vector<WelfareSummary> welfare;
};

/// Density posterior, constant-elasticity structural posterior and the
/// welfare summaries for each query.
SbResult semiparametric_bayes(const Dataset& data, const SbSettings& settings,
                              const std::vector<WelfareQuery>& queries, std::uint64_t seed,
                              double alpha = 0.05);

StudyMethod sb_method(SbSettings settings, double alpha = 0.05);

struct StudyConfig {
    std::vector<std::size_t> n_values{1000};
    std::size_t replications = 100;
    std::vector<WelfareQuery> queries{WelfareQuery{1.215, 1.436, 42500.0, 10000},
                                      WelfareQuery{1.215, 1.436, 72500.0, 10000}};
};

struct ReplicationRecord {
    std::string method;
    std::size_t n = 0;
    std::size_t replication = 0;
    double income = 0.0;
    double truth = 0.0;
    double point = 0.0;
    Interval interval;
    bool ok = false;
    std::string error;
};

struct ReportRow {
    std::string method;
    double income = 0.0;
    std::size_t n = 0;
    double mae = 0.0;
    double coverage = 0.0;
    double median_length = 0.0;
    std::size_t successes = 0;
    std::size_t replications = 0;
};

struct SimulationReport {
    std::vector<ReportRow> rows;
    std::vector<ReplicationRecord> records;
    std::uint64_t seed = 0;
    std::size_t replications = 0;

    const ReportRow& row(const std::string& method, double income, std::size_t n) const;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs every method on every replication. Truth is the constant-elasticity
/// DWL at the calibrated IV coefficients. Method failures are recorded, not
/// fatal. Dataset seeds depend only on (seed, n, replication).
SimulationReport run_study(const CalibratedDgp& dgp, const StudyConfig& config,
                           const std::vector<StudyMethod>& methods, std::uint64_t seed,
                           const ProgressFn& progress = {});

/// Aggregates replication records into report rows (MAE = median absolute error).
std::vector<ReportRow> aggregate(const std::vector<ReplicationRecord>& records);

void write_report_csv(const std::filesystem::path& path, const SimulationReport& report);
void write_records_csv(const std::filesystem::path& path, const SimulationReport& report);

}  // namespace cmb
