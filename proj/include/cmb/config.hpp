#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmb/baselines.hpp"
#include "cmb/pipeline.hpp"
#include "cmb/structural.hpp"
#include "cmb/welfare.hpp"

namespace cmb {

struct WelfareSetting {
    WelfareQuery query;
    DemandKind kind = DemandKind::constant_elasticity;
    bool per_income = false;
};

struct SimulateSetting {
    std::vector<std::size_t> n_values{1000};
    std::size_t replications = 100;
    double alpha = 0.05;
    std::size_t bootstrap_reps = 1000;
    std::vector<std::string> methods{"TSLS", "BB", "PE", "SB"};
    std::vector<double> incomes{42500.0, 72500.0};
    /// Calibration source; the shipped synthetic source when empty.
    std::filesystem::path source;
};

/// Everything a CLI command needs. Defaults reproduce the documented
/// settings; every field can be set from a TOML file.
struct RunConfig {
    std::uint64_t seed = 1;
    FitSettings fit;
    StructuralOptions structural;
    std::vector<std::string> models{"constant_elasticity"};
    std::vector<WelfareSetting> welfare;
    double alpha = 0.05;
    SeriesConfig series;
    std::filesystem::path input;
    std::filesystem::path output;
    SimulateSetting simulate;

    /// Throws ConfigError on any invalid value.
    void validate() const;
};

/// Parses TOML text. Relative paths resolve against `base_dir`. Unknown keys
/// and wrong types are ConfigErrors.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Canonical TOML rendering of every field, used for manifests.
std::string to_toml(const RunConfig& config);

/// 64-bit FNV-1a of the canonical rendering, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Model factory by name (constant_elasticity, translog).
MomentModel model_by_name(const std::string& name);

}  // namespace cmb
