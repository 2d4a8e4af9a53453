// Command-line driver: fit, structural, dwl, estimate-freq, simulate, nodes,
// make-source.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cmb/baselines.hpp"
#include "cmb/config.hpp"
#include "cmb/dataset.hpp"
#include "cmb/draws_io.hpp"
#include "cmb/error.hpp"
#include "cmb/inference.hpp"
#include "cmb/pipeline.hpp"
#include "cmb/rng.hpp"
#include "cmb/sim_harness.hpp"
#include "cmb/structural.hpp"
#include "cmb/welfare.hpp"

#ifndef CMB_VERSION
#define CMB_VERSION "dev"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string out;
    bool timing = false;
};

cmb::RunConfig resolve_config(const Globals& g) {
    cmb::RunConfig c = g.config_path.empty() ? cmb::RunConfig{} : cmb::load_config(g.config_path);
    if (g.seed) c.seed = *g.seed;
    if (!g.out.empty()) c.output = g.out;
    if (c.output.empty()) c.output = "out";
    c.validate();
    return c;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw cmb::DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw cmb::DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw cmb::DataError(path.string() + ": " + e.what());
    }
}

json manifest_base(const std::string& command, const cmb::RunConfig& c, const std::vector<std::string>& argv) {
    json m;
    m["command"] = command;
    m["version"] = CMB_VERSION;
    m["seed"] = c.seed;
    m["config_hash"] = cmb::config_hash(c);
    m["config"] = cmb::to_toml(c);
    m["argv"] = argv;
    return m;
}

fs::path prepare_out(const cmb::RunConfig& c) {
    fs::create_directories(c.output);
    return c.output;
}

cmb::Dataset load_input(const fs::path& path, json& manifest) {
    if (path.empty()) throw cmb::ConfigError("no input dataset (use --data or io.input)");
    cmb::LoadReport rep;
    cmb::Dataset d = cmb::load_dataset(path, &rep);
    if (rep.rows_rejected > 0) {
        std::cerr << "warning: " << rep.rows_rejected << " row(s) with missing or non-finite values skipped\n";
    }
    manifest["data"] = {{"path", path.generic_string()},
                        {"rows", d.size()},
                        {"rows_rejected", rep.rows_rejected}};
    return d;
}

json vector_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

std::vector<cmb::WelfareSetting> default_welfare(cmb::DemandKind kind) {
    std::vector<cmb::WelfareSetting> out;
    for (double y : {42500.0, 72500.0}) {
        cmb::WelfareSetting w;
        w.query.y = y;
        w.kind = kind;
        out.push_back(w);
    }
    return out;
}

json summary_json(const std::string& functional, const cmb::WelfareDraws& draws, double alpha,
                  const fs::path& draw_file, const cmb::WelfareQuery& q, bool per_income) {
    json j;
    j["functional"] = functional;
    j["query"] = {{"p0", q.p0}, {"p1", q.p1}, {"y", q.y}, {"steps", q.steps}, {"per_income", per_income}};
    j["alpha"] = alpha;
    const Eigen::VectorXd v = draws.finite();
    j["n_draws"] = v.size();
    if (v.size() > 0) {
        const cmb::Interval iv = cmb::equitailed_interval(v, alpha);
        j["median"] = cmb::posterior_median(v);
        j["lo"] = iv.lo;
        j["hi"] = iv.hi;
    } else {
        j["median"] = j["lo"] = j["hi"] = nullptr;
    }
    std::size_t negative = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) negative += v[i] < 0;
    j["diagnostics"] = {{"failed_draws", draws.failed.size()}, {"negative_draws", negative}};
    j["draw_file"] = draw_file.generic_string();
    return j;
}

void write_values_csv(const fs::path& path, const std::string& column, const Eigen::VectorXd& v) {
    std::ofstream out(path);
    if (!out) throw cmb::DataError("cannot write " + path.string());
    out << column << '\n';
    for (Eigen::Index i = 0; i < v.size(); ++i) out << cmb::format_double(v[i]) << '\n';
}

// ---------------------------------------------------------------------------

int cmd_fit(const Globals& g, const std::string& data_path, const std::vector<std::string>& argv) {
    const cmb::RunConfig c = resolve_config(g);
    json m = manifest_base("fit", c, argv);
    const cmb::Dataset data = load_input(data_path.empty() ? c.input : fs::path(data_path), m);
    const fs::path out = prepare_out(c);

    const cmb::FitResult fit = cmb::fit_density(data, c.fit, c.seed);
    const fs::path draws_file = out / "density_draws.csv";
    cmb::write_density_draws(draws_file, fit.draws);

    const auto& d = fit.draws;
    m["draws"] = {{"file", "density_draws.csv"},
                  {"count", d.size()},
                  {"k", d.basis->size()},
                  {"empty", d.empty_flag}};
    m["acceptance"] = {{"b", d.accepted_sampling.rate_b()},
                       {"mu", d.accepted_sampling.rate_mu()},
                       {"sigma", d.accepted_sampling.rate_sigma()}};
    m["final_scales"] = {{"b", d.final_scales.b}, {"mu", d.final_scales.mu}, {"sigma", d.final_scales.sigma}};
    if (d.empty_flag) std::cerr << "warning: no draws kept after burn-in\n";
    write_json(out / "fit_manifest.json", m);
    return 0;
}

int cmd_structural(const Globals& g, const std::string& draws_path, const std::string& data_path,
                   const std::vector<std::string>& argv) {
    const cmb::RunConfig c = resolve_config(g);
    json m = manifest_base("structural", c, argv);
    const cmb::PosteriorDraws draws = cmb::read_density_draws(draws_path);

    // The fit manifest next to the draw file, when present, must describe it.
    fs::path data_file = data_path.empty() ? c.input : fs::path(data_path);
    const fs::path fit_manifest = fs::path(draws_path).parent_path() / "fit_manifest.json";
    if (fs::exists(fit_manifest)) {
        const json fm = read_json(fit_manifest);
        const auto k = fm.at("draws").at("k").get<long long>();
        const auto count = fm.at("draws").at("count").get<std::size_t>();
        if (k != draws.basis->size() || count != draws.size()) {
            throw cmb::DataError("draw file " + draws_path + " does not match " + fit_manifest.string());
        }
        if (data_file.empty() && fm.contains("data")) data_file = fm["data"]["path"].get<std::string>();
    }
    if (draws.size() == 0) throw cmb::DataError("draw file holds no draws");
    const cmb::Dataset data = load_input(data_file, m);
    const fs::path out = prepare_out(c);

    std::vector<cmb::MomentModel> models;
    for (const auto& name : c.models) models.push_back(cmb::model_by_name(name));
    cmb::StructuralOptions opts = c.structural;
    opts.seed = cmb::structural_seed(c.seed);
    const auto results = cmb::structural_posterior(draws, data.z_matrix(), models, opts);

    m["density_draws"] = fs::path(draws_path).generic_string();
    json outputs = json::array();
    for (const auto& r : results) {
        const std::string file = "gamma_" + r.model + ".csv";
        cmb::write_gamma_draws(out / file, r);
        const Eigen::MatrixXd ok = r.successful();
        outputs.push_back({{"model", r.model},
                           {"file", file},
                           {"draws", r.size()},
                           {"failures", r.failures()},
                           {"converged", r.converged_count()},
                           {"convergence_rate", r.size() ? double(r.converged_count()) / double(r.size()) : 0.0},
                           {"posterior_median", ok.rows() ? json(vector_json(
                                                                [&] {
                                                                    Eigen::VectorXd med(ok.cols());
                                                                    for (Eigen::Index j = 0; j < ok.cols(); ++j)
                                                                        med[j] = cmb::posterior_median(ok.col(j));
                                                                    return med;
                                                                }()))
                                                          : json(nullptr)}});
    }
    m["outputs"] = outputs;
    write_json(out / "structural_manifest.json", m);
    return 0;
}

struct DwlArgs {
    std::string gamma;
    std::string compare;
    std::optional<double> p0, p1, y, threshold;
    std::optional<int> steps;
    std::string kind;
    bool per_income = false;
};

int cmd_dwl(const Globals& g, const DwlArgs& a, const std::vector<std::string>& argv) {
    const cmb::RunConfig c = resolve_config(g);
    json m = manifest_base("dwl", c, argv);
    const cmb::StructuralDraws gd = cmb::read_gamma_draws(a.gamma);
    const cmb::DemandKind kind = cmb::parse_demand_kind(a.kind.empty() ? gd.model : a.kind);
    if (gd.gamma.cols() != cmb::demand_dimension(kind)) {
        throw cmb::DataError(a.gamma + " has " + std::to_string(gd.gamma.cols()) + " coefficients, " +
                             cmb::to_string(kind) + " needs " + std::to_string(cmb::demand_dimension(kind)));
    }

    std::vector<cmb::WelfareSetting> settings;
    if (a.p0 || a.p1 || a.y || a.steps) {
        cmb::WelfareSetting w;
        if (a.p0) w.query.p0 = *a.p0;
        if (a.p1) w.query.p1 = *a.p1;
        if (a.y) w.query.y = *a.y;
        if (a.steps) w.query.steps = *a.steps;
        w.kind = kind;
        w.per_income = a.per_income;
        w.query.validate();
        settings.push_back(w);
    } else if (!c.welfare.empty()) {
        settings = c.welfare;
        for (auto& w : settings) {
            w.kind = kind;
            w.per_income = w.per_income || a.per_income;
        }
    } else {
        settings = default_welfare(kind);
        for (auto& w : settings) w.per_income = a.per_income;
    }

    std::optional<cmb::StructuralDraws> other;
    if (!a.compare.empty()) {
        other = cmb::read_gamma_draws(a.compare);
        if (other->size() != gd.size()) {
            throw cmb::DataError("paired draw files differ in length: " + a.gamma + ", " + a.compare);
        }
    }

    const fs::path out = prepare_out(c);
    m["gamma_draws"] = fs::path(a.gamma).generic_string();
    json summaries = json::array();
    for (std::size_t q = 0; q < settings.size(); ++q) {
        const auto& w = settings[q];
        const cmb::WelfareDraws wd = cmb::welfare_posterior(gd.gamma, w.kind, w.query, w.per_income);
        const std::string file = "dwl_" + cmb::to_string(w.kind) + "_" + std::to_string(q) + ".csv";
        write_values_csv(out / file, "dwl", wd.values);
        summaries.push_back(summary_json("dwl_" + cmb::to_string(w.kind), wd, c.alpha, out / file, w.query,
                                         w.per_income));
        if (other) {
            const bool ce_first = kind == cmb::DemandKind::constant_elasticity;
            const Eigen::MatrixXd& ce = ce_first ? gd.gamma : other->gamma;
            const Eigen::MatrixXd& tl = ce_first ? other->gamma : gd.gamma;
            const cmb::WelfareDraws diff = cmb::welfare_difference(ce, tl, w.query, w.per_income);
            const std::string dfile = "dwl_difference_" + std::to_string(q) + ".csv";
            write_values_csv(out / dfile, "abs_difference", diff.values);
            json s = summary_json("dwl_abs_difference", diff, c.alpha, out / dfile, w.query, w.per_income);
            if (a.threshold) {
                const cmb::Decision dec = cmb::threshold_decision(diff.finite(), *a.threshold);
                s["decision"] = {{"threshold", *a.threshold},
                                 {"action", cmb::to_string(dec.action)},
                                 {"prob_similar", dec.prob_similar}};
            }
            summaries.push_back(s);
        }
    }
    m["summaries"] = summaries;
    write_json(out / "dwl_summary.json", m);
    std::cout << summaries.dump(2) << '\n';
    return 0;
}

json iv_json(const cmb::IvEstimate& est, const std::vector<cmb::WelfareSetting>& settings, double alpha) {
    json j;
    j["estimate"] = vector_json(est.gamma_hat);
    j["se"] = vector_json(est.standard_errors());
    json dwl = json::array();
    for (const auto& w : settings) {
        const cmb::DeltaInterval d = cmb::delta_method_dwl(est, w.query, cmb::DemandKind::constant_elasticity, alpha);
        const double scale = w.per_income ? 1e4 / w.query.y : 1.0;
        dwl.push_back({{"y", w.query.y},
                       {"point", d.point * scale},
                       {"se", d.se * scale},
                       {"lo", d.lo * scale},
                       {"hi", d.hi * scale}});
    }
    j["dwl"] = dwl;
    return j;
}

int cmd_estimate_freq(const Globals& g, const std::string& data_path, const std::vector<std::string>& argv) {
    const cmb::RunConfig c = resolve_config(g);
    json m = manifest_base("estimate-freq", c, argv);
    const cmb::Dataset data = load_input(data_path.empty() ? c.input : fs::path(data_path), m);
    const fs::path out = prepare_out(c);
    auto settings = c.welfare.empty() ? default_welfare(cmb::DemandKind::constant_elasticity) : c.welfare;

    json methods;
    methods["TSLS"] = iv_json(cmb::tsls(data), settings, c.alpha);

    cmb::PluginDiagnostics diag;
    const cmb::IvEstimate pe = cmb::plugin_efficient(data, c.series, &diag);
    methods["PE"] = iv_json(pe, settings, c.alpha);
    methods["PE"]["series_degree"] = diag.degree;
    methods["PE"]["floored_variances"] = diag.floored;

    const cmb::BootstrapDraws bb = cmb::bayesian_bootstrap(data, c.simulate.bootstrap_reps, cmb::derive_seed(c.seed, 20));
    if (bb.gamma.rows() < 2) throw cmb::NumericalError("bootstrap: fewer than two usable replications");
    const Eigen::VectorXd mean = bb.gamma.colwise().mean();
    const Eigen::VectorXd sd =
        ((bb.gamma.rowwise() - mean.transpose()).array().square().colwise().sum() / double(bb.gamma.rows() - 1))
            .sqrt();
    json bbj;
    bbj["estimate"] = vector_json(mean);
    bbj["se"] = vector_json(sd);
    bbj["replications"] = bb.gamma.rows();
    bbj["skipped"] = bb.skipped;
    json dwl = json::array();
    for (const auto& w : settings) {
        const cmb::WelfareDraws wd =
            cmb::welfare_posterior(bb.gamma, cmb::DemandKind::constant_elasticity, w.query, w.per_income);
        const cmb::WelfareSummary s = cmb::summarize(wd, c.alpha);
        dwl.push_back({{"y", w.query.y}, {"point", s.median}, {"lo", s.interval.lo}, {"hi", s.interval.hi}});
    }
    bbj["dwl"] = dwl;
    methods["BB"] = bbj;

    m["alpha"] = c.alpha;
    m["methods"] = methods;
    write_json(out / "estimate_freq.json", m);
    std::cout << methods.dump(2) << '\n';
    return 0;
}

int cmd_nodes(const Globals& g, const std::string& data_path, const std::vector<std::string>& argv) {
    const cmb::RunConfig c = resolve_config(g);
    json m = manifest_base("nodes", c, argv);
    const cmb::Dataset data = load_input(data_path.empty() ? c.input : fs::path(data_path), m);
    const fs::path out = prepare_out(c);
    const cmb::NodeSet ns = cmb::select_nodes(data.z_matrix(), c.fit.gp.delta, cmb::node_seed(c.seed));
    std::ofstream f(out / "nodes.csv");
    if (!f) throw cmb::DataError("cannot write nodes.csv");
    f << "u1,u2,z1,z2\n";
    for (Eigen::Index i = 0; i < ns.nodes.rows(); ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) f << (j ? "," : "") << cmb::format_double(ns.nodes(i, j));
        f << '\n';
    }
    json centers = json::array();
    for (Eigen::Index i = 0; i < ns.centers.rows(); ++i) {
        centers.push_back({ns.centers(i, 0), ns.centers(i, 1)});
    }
    m["nodes"] = {{"file", "nodes.csv"}, {"k", ns.nodes.rows()}, {"centers", centers}};
    m["compactifier"] = {{"lo", {ns.compactifier.lo()[0], ns.compactifier.lo()[1]}},
                         {"hi", {ns.compactifier.hi()[0], ns.compactifier.hi()[1]}}};
    write_json(out / "nodes_manifest.json", m);
    return 0;
}

int cmd_simulate(const Globals& g, bool smoke, const std::vector<std::string>& argv) {
    cmb::RunConfig c = resolve_config(g);
    if (smoke) c.simulate.replications = std::min<std::size_t>(c.simulate.replications, 10);
    json m = manifest_base("simulate", c, argv);
    m["smoke"] = smoke;

    cmb::Dataset source;
    if (c.simulate.source.empty()) {
        source = cmb::shipped_source();
        m["source"] = "builtin";
    } else {
        cmb::LoadReport rep;
        source = cmb::load_dataset(c.simulate.source, &rep);
        m["source"] = c.simulate.source.generic_string();
    }
    const cmb::CalibratedDgp dgp = cmb::calibrate(source);
    const fs::path out = prepare_out(c);

    cmb::StudyConfig study;
    study.n_values = c.simulate.n_values;
    study.replications = c.simulate.replications;
    study.queries.clear();
    for (double y : c.simulate.incomes) study.queries.push_back(cmb::WelfareQuery{1.215, 1.436, y, 10000});

    const double alpha = c.simulate.alpha;
    std::vector<cmb::StudyMethod> methods;
    for (const auto& name : c.simulate.methods) {
        if (name == "TSLS") methods.push_back(cmb::tsls_method(alpha));
        if (name == "BB") methods.push_back(cmb::bootstrap_method(c.simulate.bootstrap_reps, alpha));
        if (name == "PE") methods.push_back(cmb::plugin_method(c.series, alpha));
        if (name == "SB") methods.push_back(cmb::sb_method({c.fit, c.structural}, alpha));
    }
    const cmb::SimulationReport report =
        cmb::run_study(dgp, study, methods, c.seed, [](const std::string& s) { std::cerr << s << '\n'; });
    cmb::write_report_csv(out / "report.csv", report);
    cmb::write_records_csv(out / "records.csv", report);
    m["calibration"] = {{"gamma_hat", vector_json(dgp.gamma_hat)}, {"source_rows", dgp.source_size()}};
    m["files"] = {"report.csv", "records.csv"};
    write_json(out / "simulate_manifest.json", m);
    return 0;
}

int cmd_make_source(const Globals& g, std::size_t rows, const std::string& path) {
    const std::uint64_t seed = g.seed.value_or(cmb::kShippedSourceSeed);
    cmb::write_dataset(path, cmb::synthetic_source(rows, seed));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semiparametric Bayesian demand estimation and welfare analysis"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CMB_VERSION);
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config_path, "TOML configuration file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the config)");
    app.add_option("--threads", g.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
    app.add_option("--out", g.out, "Output directory (overrides the config)");
    app.add_flag("--timing", g.timing, "Print wall time to stderr");

    std::string data_path, draws_path;
    auto* fit = app.add_subcommand("fit", "Sample the conditional-density posterior");
    fit->add_option("--data", data_path, "Input CSV");

    auto* structural = app.add_subcommand("structural", "Map density draws to structural draws");
    structural->add_option("--draws", draws_path, "Density draw file")->required();
    structural->add_option("--data", data_path, "Input CSV (default: the one recorded by fit)");

    DwlArgs dwl_args;
    auto* dwl = app.add_subcommand("dwl", "Deadweight-loss posterior from structural draws");
    dwl->add_option("--gamma", dwl_args.gamma, "Structural draw file")->required();
    dwl->add_option("--compare", dwl_args.compare, "Paired draw file of the other demand model");
    dwl->add_option("--p0", dwl_args.p0, "Initial price");
    dwl->add_option("--p1", dwl_args.p1, "New price");
    dwl->add_option("--y", dwl_args.y, "Income");
    dwl->add_option("--steps", dwl_args.steps, "ODE steps for translog demand");
    dwl->add_option("--kind", dwl_args.kind, "constant_elasticity or translog (default: from the file)");
    dwl->add_flag("--per-income", dwl_args.per_income, "Report DWL per 10,000 dollars of income");
    dwl->add_option("--threshold", dwl_args.threshold, "Tolerance for the similar/different decision");

    auto* freq = app.add_subcommand("estimate-freq", "TSLS, Bayesian bootstrap and plug-in efficient estimates");
    freq->add_option("--data", data_path, "Input CSV");

    bool smoke = false;
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on the calibrated design");
    simulate->add_flag("--smoke", smoke, "At most 10 replications");

    auto* nodes = app.add_subcommand("nodes", "Print the kriging nodes for a dataset");
    nodes->add_option("--data", data_path, "Input CSV");

    std::size_t rows = cmb::kShippedSourceRows;
    std::string source_path = "synthetic_source.csv";
    auto* make_source = app.add_subcommand("make-source", "Write the synthetic calibration source");
    make_source->add_option("--rows", rows, "Number of rows")->check(CLI::Range(10, 100000000));
    make_source->add_option("--path", source_path, "Output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (*seed_opt) g.seed = seed;
#ifdef _OPENMP
    if (g.threads > 0) omp_set_num_threads(g.threads);
#endif

    const std::vector<std::string> args(argv + 1, argv + argc);
    const auto start = std::chrono::steady_clock::now();
    int rc = 0;
    try {
        if (*fit) rc = cmd_fit(g, data_path, args);
        else if (*structural) rc = cmd_structural(g, draws_path, data_path, args);
        else if (*dwl) rc = cmd_dwl(g, dwl_args, args);
        else if (*freq) rc = cmd_estimate_freq(g, data_path, args);
        else if (*simulate) rc = cmd_simulate(g, smoke, args);
        else if (*nodes) rc = cmd_nodes(g, data_path, args);
        else if (*make_source) rc = cmd_make_source(g, rows, source_path);
    } catch (const cmb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const cmb::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const cmb::Error& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    if (g.timing) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << "wall time: " << secs << " s\n";
    }
    return rc;
}
