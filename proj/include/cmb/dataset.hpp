#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <string>

namespace cmb {

/// Household demand data in logs: quantity, price, income, instrument.
///
/// Internal variables are w = (logP, logQ); external variables are
/// z = (logY, logA).
struct Dataset {
    Eigen::VectorXd logQ;
    Eigen::VectorXd logP;
    Eigen::VectorXd logY;
    Eigen::VectorXd logA;

    std::size_t size() const { return static_cast<std::size_t>(logQ.size()); }
    bool empty() const { return logQ.size() == 0; }

    Eigen::Vector2d w(Eigen::Index i) const { return {logP[i], logQ[i]}; }
    Eigen::Vector2d z(Eigen::Index i) const { return {logY[i], logA[i]}; }

    /// n x 2 matrix of external variables.
    Eigen::MatrixX2d z_matrix() const;

    /// Throws DataError on unequal lengths or non-finite entries.
    void validate() const;

    static Dataset with_size(Eigen::Index n);
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t rows_rejected = 0;
};

/// Reads a CSV file with a header row containing logQ, logP, logY, logA
/// (case-insensitive, any order, extra columns ignored). Rows with an empty
/// or non-finite field in one of those columns are skipped and counted.
/// Unparseable numbers and ragged rows raise DataError with the line number.
Dataset load_dataset(const std::filesystem::path& path, LoadReport* report = nullptr);

/// Writes the four columns with round-trip precision.
void write_dataset(const std::filesystem::path& path, const Dataset& data);

}  // namespace cmb
