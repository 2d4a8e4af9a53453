#include "cmb/pipeline.hpp"

#include "cmb/error.hpp"
#include "cmb/rng.hpp"

namespace cmb {

std::uint64_t node_seed(std::uint64_t master) { return derive_seed(master, 10); }
std::uint64_t chain_seed(std::uint64_t master) { return derive_seed(master, 11); }
std::uint64_t structural_seed(std::uint64_t master) { return derive_seed(master, 12); }

NodeSet select_nodes(const Eigen::Ref<const Eigen::MatrixX2d>& z, int delta, std::uint64_t seed) {
    if (delta < 1) throw DomainError("select_nodes: delta must be >= 1");
    NodeSet out;
    out.compactifier = Compactifier::fit(z);
    Eigen::MatrixXd fz(z.rows(), 2);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        fz.row(i) = out.compactifier.apply(z.row(i).transpose()).transpose();
    }
    const KMeansResult km = kmeans(fz, delta + 1, seed);
    out.centers = km.centers;

    const int g = delta + 1;
    out.nodes.resize(static_cast<Eigen::Index>(g) * g * g, 4);
    Eigen::Index row = 0;
    for (int c = 0; c < g; ++c) {
        for (int a = 0; a < g; ++a) {
            for (int b = 0; b < g; ++b) {
                out.nodes.row(row++) << double(a) / delta, double(b) / delta, km.centers(c, 0),
                    km.centers(c, 1);
            }
        }
    }
    return out;
}

FitResult fit_density(const Dataset& data, const FitSettings& settings, std::uint64_t seed) {
    data.validate();
    if (data.empty()) throw DataError("fit: dataset is empty");
    FitResult out;
    out.nodes = select_nodes(data.z_matrix(), settings.gp.delta, node_seed(seed));
    auto basis = std::make_shared<const KrigingBasis>(
        MaternKernel(settings.gp.alpha, settings.gp.length_scale), out.nodes.nodes, settings.gp.jitter);
    McmcConfig mcmc = settings.mcmc;
    mcmc.seed = chain_seed(seed);
    out.draws = run_chain(data, basis, out.nodes.compactifier, settings.prior, mcmc);
    return out;
}

WelfareSummary summarize(const WelfareDraws& draws, double alpha) {
    const Eigen::VectorXd v = draws.finite();
    if (v.size() == 0) throw NumericalError("welfare summary: no finite draws");
    WelfareSummary s;
    s.median = posterior_median(v);
    s.interval = equitailed_interval(v, alpha);
    s.draws = static_cast<std::size_t>(v.size());
    s.failed = draws.failed.size();
    return s;
}

}  // namespace cmb
