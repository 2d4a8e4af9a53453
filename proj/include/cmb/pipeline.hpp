#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "cmb/cond_density.hpp"
#include "cmb/dataset.hpp"
#include "cmb/inference.hpp"
#include "cmb/kmeans.hpp"
#include "cmb/mcmc.hpp"
#include "cmb/structural.hpp"
#include "cmb/welfare.hpp"

namespace cmb {

/// Gaussian-process prior settings.
struct GpPrior {
    double alpha = 2.5;
    double length_scale = 1.0;
    /// Grid width: nodes are ({0, 1/delta, ..., 1})^2 x (delta + 1) cluster centers.
    int delta = 2;
    double jitter = 1e-8;
};

struct NodeSet {
    Eigen::MatrixXd nodes;  // k x 4, rows (u1, u2, F0(z)1, F0(z)2)
    Compactifier compactifier;
    Eigen::MatrixXd centers;  // (delta+1) x 2 in compactified coordinates
};

/// k-means on the compactified external variables crossed with the uniform grid.
NodeSet select_nodes(const Eigen::Ref<const Eigen::MatrixX2d>& z, int delta, std::uint64_t seed);

struct FitSettings {
    GpPrior gp;
    PriorConfig prior;
    McmcConfig mcmc;
};

struct FitResult {
    PosteriorDraws draws;
    NodeSet nodes;
};

/// Node selection, kriging basis and the sampler. Sub-seeds are derived from
/// `seed`; the seed in settings.mcmc is ignored.
FitResult fit_density(const Dataset& data, const FitSettings& settings, std::uint64_t seed);

/// Seeds used by the pipeline stages.
std::uint64_t node_seed(std::uint64_t master);
std::uint64_t chain_seed(std::uint64_t master);
std::uint64_t structural_seed(std::uint64_t master);

/// Point estimate (posterior median) and equitailed interval of a welfare functional.
struct WelfareSummary {
    double median = 0.0;
    Interval interval;
    std::size_t draws = 0;
    std::size_t failed = 0;
};

WelfareSummary summarize(const WelfareDraws& draws, double alpha = 0.05);

}  // namespace cmb
