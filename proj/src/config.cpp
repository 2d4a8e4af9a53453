#include "cmb/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "cmb/error.hpp"

namespace cmb {

namespace {

/// Reads typed values from one TOML table and rejects keys nobody asked for.
class Section {
public:
    Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

    template <class T>
    void read(const std::string& key, T& target) {
        seen_.insert(key);
        if (!table_) return;
        const toml::node* node = table_->get(key);
        if (!node) return;
        target = convert<T>(*node, key);
    }

    const toml::node* raw(const std::string& key) {
        seen_.insert(key);
        return table_ ? table_->get(key) : nullptr;
    }

    void finish() const {
        if (!table_) return;
        for (const auto& [k, v] : *table_) {
            const std::string key(k.str());
            if (!seen_.count(key)) throw ConfigError("unknown key '" + qualified(key) + "'");
        }
    }

    std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

private:
    template <class T>
    T convert(const toml::node& node, const std::string& key) const {
        if constexpr (std::is_same_v<T, bool>) {
            if (auto v = node.value_exact<bool>()) return *v;
            throw ConfigError("'" + qualified(key) + "' must be a boolean");
        } else if constexpr (std::is_same_v<T, double>) {
            if (auto v = node.value<double>()) return *v;
            throw ConfigError("'" + qualified(key) + "' must be a number");
        } else if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
            if (auto v = node.value_exact<std::string>()) return T(*v);
            throw ConfigError("'" + qualified(key) + "' must be a string");
        } else if constexpr (std::is_integral_v<T>) {
            const auto v = node.value_exact<std::int64_t>();
            if (!v) throw ConfigError("'" + qualified(key) + "' must be an integer");
            if (std::is_unsigned_v<T> && *v < 0) throw ConfigError("'" + qualified(key) + "' must be >= 0");
            return static_cast<T>(*v);
        } else if constexpr (std::is_same_v<T, std::vector<std::string>> ||
                             std::is_same_v<T, std::vector<double>> ||
                             std::is_same_v<T, std::vector<std::size_t>>) {
            const toml::array* arr = node.as_array();
            if (!arr) throw ConfigError("'" + qualified(key) + "' must be an array");
            T out;
            for (const auto& el : *arr) out.push_back(convert<typename T::value_type>(el, key));
            return out;
        } else {
            static_assert(sizeof(T) == 0, "unsupported config type");
        }
    }

    const toml::table* table_;
    std::string name_;
    std::set<std::string> seen_;
};

const toml::table* subtable(const toml::table& root, const std::string& key) {
    const toml::node* node = root.get(key);
    if (!node) return nullptr;
    if (!node->is_table()) throw ConfigError("'" + key + "' must be a table");
    return node->as_table();
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

}  // namespace

MomentModel model_by_name(const std::string& name) {
    if (name == "constant_elasticity") return MomentModel::constant_elasticity();
    if (name == "translog") return MomentModel::translog();
    throw ConfigError("unknown structural model '" + name + "'");
}

void RunConfig::validate() const {
    const GpPrior& gp = fit.gp;
    check(gp.alpha > 0 && std::isfinite(gp.alpha), "prior.alpha must be positive");
    check(gp.length_scale > 0 && std::isfinite(gp.length_scale), "prior.length_scale must be positive");
    check(gp.delta >= 1 && gp.delta <= 10, "prior.delta must be in [1, 10]");
    check(gp.jitter >= 0 && std::isfinite(gp.jitter), "prior.jitter must be >= 0");
    check(fit.prior.location_var > 0, "prior.location_var must be positive");
    check(fit.prior.ig_shape > 0 && fit.prior.ig_scale > 0, "prior.ig_shape and prior.ig_scale must be positive");
    fit.mcmc.validate();
    check(structural.R >= 2, "structural.R must be >= 2");
    check(structural.fixed_point.tol > 0, "structural.tol must be positive");
    check(structural.fixed_point.max_iter >= 1, "structural.max_iter must be >= 1");
    check(structural.max_failure_fraction >= 0 && structural.max_failure_fraction <= 1,
          "structural.max_failure_fraction must be in [0, 1]");
    check(!models.empty(), "structural.models must not be empty");
    for (const auto& m : models) model_by_name(m);
    for (const auto& w : welfare) w.query.validate();
    check(alpha > 0 && alpha < 0.5, "alpha must be in (0, 0.5)");
    check(series.variance_floor > 0, "series.variance_floor must be positive");
    if (!input.empty()) {
        check(std::filesystem::exists(input), "io.input does not exist: " + input.string());
    }
    const SimulateSetting& sim = simulate;
    check(!sim.n_values.empty(), "simulate.n must not be empty");
    for (auto n : sim.n_values) check(n >= 10, "simulate.n entries must be >= 10");
    check(sim.replications >= 1, "simulate.replications must be >= 1");
    check(sim.alpha > 0 && sim.alpha < 0.5, "simulate.alpha must be in (0, 0.5)");
    check(sim.bootstrap_reps >= 2, "simulate.bootstrap_reps must be >= 2");
    check(!sim.methods.empty(), "simulate.methods must not be empty");
    for (const auto& m : sim.methods) {
        check(m == "TSLS" || m == "BB" || m == "PE" || m == "SB", "unknown simulate method '" + m + "'");
    }
    check(!sim.incomes.empty(), "simulate.incomes must not be empty");
    for (double y : sim.incomes) check(y > 0 && std::isfinite(y), "simulate.incomes must be positive");
    if (!sim.source.empty()) {
        check(std::filesystem::exists(sim.source), "simulate.source does not exist: " + sim.source.string());
    }
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config parse error at line " << e.source().begin.line << ": " << e.description();
        throw ConfigError(msg.str());
    }

    RunConfig c;
    Section top(&root, "");
    if (const toml::node* s = top.raw("seed")) {
        if (auto v = s->value_exact<std::int64_t>(); v && *v >= 0) {
            c.seed = static_cast<std::uint64_t>(*v);
        } else if (auto str = s->value_exact<std::string>()) {
            try {
                std::size_t used = 0;
                c.seed = std::stoull(*str, &used);
                if (used != str->size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("'seed' must be a non-negative integer");
            }
        } else {
            throw ConfigError("'seed' must be a non-negative integer");
        }
    }
    top.read("alpha", c.alpha);
    top.raw("prior");
    top.raw("mcmc");
    top.raw("structural");
    top.raw("welfare");
    top.raw("io");
    top.raw("series");
    top.raw("simulate");
    top.finish();

    Section prior(subtable(root, "prior"), "prior");
    prior.read("alpha", c.fit.gp.alpha);
    prior.read("length_scale", c.fit.gp.length_scale);
    prior.read("delta", c.fit.gp.delta);
    prior.read("jitter", c.fit.gp.jitter);
    prior.read("location_var", c.fit.prior.location_var);
    prior.read("ig_shape", c.fit.prior.ig_shape);
    prior.read("ig_scale", c.fit.prior.ig_scale);
    prior.finish();

    Section mcmc(subtable(root, "mcmc"), "mcmc");
    McmcConfig& m = c.fit.mcmc;
    mcmc.read("iterations", m.iterations);
    mcmc.read("burn_in", m.burn_in);
    mcmc.read("thin", m.thin);
    mcmc.read("scale_b", m.initial_scales.b);
    mcmc.read("scale_mu", m.initial_scales.mu);
    mcmc.read("scale_sigma", m.initial_scales.sigma);
    mcmc.read("target_accept", m.target_accept);
    std::string rule = to_string(m.normalizer_rule);
    mcmc.read("normalizer", rule);
    m.normalizer_rule = parse_normalizer_rule(rule);
    mcmc.read("normalizer_draws", m.mc_normalizer_draws);
    mcmc.read("quadrature_order", m.quadrature_order);
    mcmc.read("precondition", m.precondition);
    mcmc.read("freeze_b", m.freeze_b);
    mcmc.finish();

    Section st(subtable(root, "structural"), "structural");
    std::int64_t R = c.structural.R;
    st.read("R", R);
    c.structural.R = static_cast<Eigen::Index>(R);
    st.read("tol", c.structural.fixed_point.tol);
    st.read("max_iter", c.structural.fixed_point.max_iter);
    st.read("ridge", c.structural.fixed_point.ridge);
    st.read("max_failure_fraction", c.structural.max_failure_fraction);
    st.read("models", c.models);
    st.finish();

    if (const toml::node* w = root.get("welfare")) {
        const toml::array* arr = w->as_array();
        if (!arr || !arr->is_array_of_tables()) throw ConfigError("'welfare' must be an array of tables");
        for (const auto& el : *arr) {
            WelfareSetting ws;
            Section s(el.as_table(), "welfare");
            s.read("p0", ws.query.p0);
            s.read("p1", ws.query.p1);
            s.read("y", ws.query.y);
            s.read("steps", ws.query.steps);
            std::string kind = to_string(ws.kind);
            s.read("kind", kind);
            ws.kind = parse_demand_kind(kind);
            s.read("per_income", ws.per_income);
            s.finish();
            c.welfare.push_back(ws);
        }
    }

    Section io(subtable(root, "io"), "io");
    io.read("input", c.input);
    io.read("output", c.output);
    io.finish();
    c.input = resolve(c.input, base_dir);
    c.output = resolve(c.output, base_dir);

    Section series(subtable(root, "series"), "series");
    series.read("degree", c.series.degree);
    series.read("variance_floor", c.series.variance_floor);
    series.finish();

    Section sim(subtable(root, "simulate"), "simulate");
    sim.read("n", c.simulate.n_values);
    sim.read("replications", c.simulate.replications);
    sim.read("alpha", c.simulate.alpha);
    sim.read("bootstrap_reps", c.simulate.bootstrap_reps);
    sim.read("methods", c.simulate.methods);
    sim.read("incomes", c.simulate.incomes);
    sim.read("source", c.simulate.source);
    sim.finish();
    c.simulate.source = resolve(c.simulate.source, base_dir);

    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path.parent_path());
}

std::string to_toml(const RunConfig& c) {
    auto num = [](double x) { return x; };
    auto i64 = [](auto x) { return static_cast<std::int64_t>(x); };

    toml::table root;
    if (c.seed <= static_cast<std::uint64_t>(INT64_MAX)) {
        root.insert("seed", i64(c.seed));
    } else {
        root.insert("seed", std::to_string(c.seed));
    }
    root.insert("alpha", num(c.alpha));
    root.insert("prior", toml::table{{"alpha", num(c.fit.gp.alpha)},
                                     {"length_scale", num(c.fit.gp.length_scale)},
                                     {"delta", i64(c.fit.gp.delta)},
                                     {"jitter", num(c.fit.gp.jitter)},
                                     {"location_var", num(c.fit.prior.location_var)},
                                     {"ig_shape", num(c.fit.prior.ig_shape)},
                                     {"ig_scale", num(c.fit.prior.ig_scale)}});
    const McmcConfig& m = c.fit.mcmc;
    root.insert("mcmc", toml::table{{"iterations", i64(m.iterations)},
                                    {"burn_in", i64(m.burn_in)},
                                    {"thin", i64(m.thin)},
                                    {"scale_b", num(m.initial_scales.b)},
                                    {"scale_mu", num(m.initial_scales.mu)},
                                    {"scale_sigma", num(m.initial_scales.sigma)},
                                    {"target_accept", num(m.target_accept)},
                                    {"normalizer", to_string(m.normalizer_rule)},
                                    {"normalizer_draws", i64(m.mc_normalizer_draws)},
                                    {"quadrature_order", i64(m.quadrature_order)},
                                    {"precondition", m.precondition},
                                    {"freeze_b", m.freeze_b}});
    toml::array models;
    for (const auto& s : c.models) models.push_back(s);
    root.insert("structural", toml::table{{"R", i64(c.structural.R)},
                                          {"tol", num(c.structural.fixed_point.tol)},
                                          {"max_iter", i64(c.structural.fixed_point.max_iter)},
                                          {"ridge", num(c.structural.fixed_point.ridge)},
                                          {"max_failure_fraction", num(c.structural.max_failure_fraction)},
                                          {"models", models}});
    toml::array welfare;
    for (const auto& w : c.welfare) {
        welfare.push_back(toml::table{{"p0", num(w.query.p0)},
                                      {"p1", num(w.query.p1)},
                                      {"y", num(w.query.y)},
                                      {"steps", i64(w.query.steps)},
                                      {"kind", to_string(w.kind)},
                                      {"per_income", w.per_income}});
    }
    root.insert("welfare", welfare);
    root.insert("io", toml::table{{"input", c.input.generic_string()}, {"output", c.output.generic_string()}});
    root.insert("series", toml::table{{"degree", i64(c.series.degree)},
                                      {"variance_floor", num(c.series.variance_floor)}});
    toml::array n_values, methods, incomes;
    for (auto n : c.simulate.n_values) n_values.push_back(i64(n));
    for (const auto& s : c.simulate.methods) methods.push_back(s);
    for (double y : c.simulate.incomes) incomes.push_back(y);
    root.insert("simulate", toml::table{{"n", n_values},
                                        {"replications", i64(c.simulate.replications)},
                                        {"alpha", num(c.simulate.alpha)},
                                        {"bootstrap_reps", i64(c.simulate.bootstrap_reps)},
                                        {"methods", methods},
                                        {"incomes", incomes},
                                        {"source", c.simulate.source.generic_string()}});
    std::ostringstream out;
    out << root << '\n';
    return out.str();
}

std::string config_hash(const RunConfig& config) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : to_toml(config)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cmb
