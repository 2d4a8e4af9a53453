#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cmb/mcmc.hpp"
#include "cmb/structural.hpp"

namespace cmb {

/// Shortest text form that reads back to the identical double.
std::string format_double(double x);
/// Throws DataError unless the whole string parses as a double.
double parse_double(const std::string& s);

/// Density draws as CSV. Header lines start with '#' and carry key=value
/// metadata (kernel, jitter, compactifier, one `node` line per kriging node,
/// chain settings). One row per draw: the nine base parameters then b_1..b_k.
void write_density_draws(const std::filesystem::path& path, const PosteriorDraws& draws);

/// Rebuilds the kriging basis and compactifier from the header. Throws
/// DataError if the columns do not match the header's k.
PosteriorDraws read_density_draws(const std::filesystem::path& path);

/// Structural draws as CSV: gamma_0..gamma_{p-1}, iterations, converged,
/// foc_residual, failed, error. Failed rows hold "nan".
void write_gamma_draws(const std::filesystem::path& path, const StructuralDraws& draws);
StructuralDraws read_gamma_draws(const std::filesystem::path& path);

/// key=value pairs from the '#' header of a draw file.
std::multimap<std::string, std::string> read_header(const std::filesystem::path& path);

}  // namespace cmb
