#include "cmb/draws_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "cmb/error.hpp"

namespace cmb {

namespace {

constexpr const char* kDensityFormat = "density-draws/1";
constexpr const char* kGammaFormat = "gamma-draws/1";

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

std::string join_doubles(const double* v, Eigen::Index n, char sep) {
    std::string out;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i) out += sep;
        out += format_double(v[i]);
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

const std::string& header_value(const std::multimap<std::string, std::string>& h, const std::string& key,
                                const std::filesystem::path& path) {
    const auto it = h.find(key);
    if (it == h.end()) throw DataError(path.string() + ": header lacks '" + key + "'");
    return it->second;
}

std::size_t parse_count(const std::string& s) {
    const double v = parse_double(s);
    if (v < 0 || v != std::floor(v)) throw DataError("expected a non-negative integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
}

std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw DataError("expected an unsigned integer, got '" + s + "'");
    }
    return v;
}

}  // namespace

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* begin = s.data();
    if (!s.empty() && s[0] == '+') ++begin;
    const auto res = std::from_chars(begin, s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw DataError("cannot parse '" + s + "' as a number");
    }
    return v;
}

std::multimap<std::string, std::string> read_header(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::multimap<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty() || line[0] != '#') break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out.emplace(line.substr(1, eq - 1), line.substr(eq + 1));
    }
    return out;
}

void write_density_draws(const std::filesystem::path& path, const PosteriorDraws& draws) {
    if (!draws.basis) throw DomainError("write_density_draws: draws carry no basis");
    const KrigingBasis& basis = *draws.basis;
    const Eigen::Index k = basis.size();
    auto out = open_out(path);
    out << "#format=" << kDensityFormat << '\n';
    out << "#k=" << k << '\n';
    out << "#dim=" << basis.dim() << '\n';
    out << "#alpha=" << format_double(basis.kernel().alpha()) << '\n';
    out << "#length_scale=" << format_double(basis.kernel().length_scale()) << '\n';
    out << "#jitter=" << format_double(basis.jitter()) << '\n';
    out << "#seed=" << draws.seed << '\n';
    out << "#iterations=" << draws.iterations << '\n';
    out << "#burn_in=" << draws.burn_in << '\n';
    out << "#thin=" << draws.thin << '\n';
    out << "#empty=" << (draws.empty_flag ? 1 : 0) << '\n';
    const Eigen::Vector4d comp(draws.compactifier.lo()[0], draws.compactifier.lo()[1],
                               draws.compactifier.hi()[0], draws.compactifier.hi()[1]);
    out << "#compactifier=" << join_doubles(comp.data(), 4, ';') << '\n';
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::RowVectorXd node = basis.nodes().row(j);
        out << "#node=" << join_doubles(node.data(), node.size(), ';') << '\n';
    }
    out << "mu1_0,mu1_1,mu1_2,mu21_0,mu21_1,mu21_2,mu22,sigma1_sq,sigma2_sq";
    for (Eigen::Index j = 0; j < k; ++j) out << ",b" << j + 1;
    out << '\n';
    for (std::size_t s = 0; s < draws.size(); ++s) {
        const BaseParams& t = draws.theta[s];
        const double base[9] = {t.mu1[0],  t.mu1[1],  t.mu1[2],   t.mu21[0], t.mu21[1],
                                t.mu21[2], t.mu22,    t.sigma1_sq, t.sigma2_sq};
        out << join_doubles(base, 9, ',');
        const Eigen::RowVectorXd b = draws.b.row(static_cast<Eigen::Index>(s));
        for (Eigen::Index j = 0; j < k; ++j) out << ',' << format_double(b[j]);
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

PosteriorDraws read_density_draws(const std::filesystem::path& path) {
    const auto h = read_header(path);
    if (header_value(h, "format", path) != kDensityFormat) {
        throw DataError(path.string() + ": not a density draw file");
    }
    const std::size_t k = parse_count(header_value(h, "k", path));
    const std::size_t dim = parse_count(header_value(h, "dim", path));
    if (k == 0 || dim != 4) throw DataError(path.string() + ": bad basis shape in header");

    Eigen::MatrixXd nodes(static_cast<Eigen::Index>(k), 4);
    std::size_t row = 0;
    for (auto [it, end] = h.equal_range("node"); it != end; ++it, ++row) {
        const auto parts = split(it->second, ';');
        if (parts.size() != dim || row >= k) throw DataError(path.string() + ": malformed node list");
        for (std::size_t c = 0; c < dim; ++c) nodes(Eigen::Index(row), Eigen::Index(c)) = parse_double(parts[c]);
    }
    if (row != k) {
        throw DataError(path.string() + ": header lists " + std::to_string(row) + " nodes, k=" +
                        std::to_string(k));
    }
    const auto comp = split(header_value(h, "compactifier", path), ';');
    if (comp.size() != 4) throw DataError(path.string() + ": malformed compactifier");

    PosteriorDraws d;
    d.basis = std::make_shared<const KrigingBasis>(
        MaternKernel(parse_double(header_value(h, "alpha", path)),
                     parse_double(header_value(h, "length_scale", path))),
        nodes, parse_double(header_value(h, "jitter", path)));
    d.compactifier = Compactifier(Eigen::Vector2d(parse_double(comp[0]), parse_double(comp[1])),
                                  Eigen::Vector2d(parse_double(comp[2]), parse_double(comp[3])));
    d.seed = parse_u64(header_value(h, "seed", path));
    d.iterations = parse_count(header_value(h, "iterations", path));
    d.burn_in = parse_count(header_value(h, "burn_in", path));
    d.thin = parse_count(header_value(h, "thin", path));
    d.empty_flag = header_value(h, "empty", path) == "1";

    auto in = open_in(path);
    std::string line;
    std::size_t line_no = 0;
    bool saw_columns = false;
    std::vector<std::vector<double>> rows;
    const std::size_t width = 9 + k;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const auto parts = split(line, ',');
        if (parts.size() != width) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " columns, found " + std::to_string(parts.size()));
        }
        if (!saw_columns) {
            saw_columns = true;
            continue;
        }
        std::vector<double> v(width);
        try {
            for (std::size_t c = 0; c < width; ++c) v[c] = parse_double(parts[c]);
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        rows.push_back(std::move(v));
    }
    if (!saw_columns) throw DataError(path.string() + ": missing column header");

    d.b.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k));
    d.theta.resize(rows.size());
    for (std::size_t s = 0; s < rows.size(); ++s) {
        const auto& v = rows[s];
        BaseParams& t = d.theta[s];
        t.mu1 << v[0], v[1], v[2];
        t.mu21 << v[3], v[4], v[5];
        t.mu22 = v[6];
        t.sigma1_sq = v[7];
        t.sigma2_sq = v[8];
        for (std::size_t j = 0; j < k; ++j) d.b(Eigen::Index(s), Eigen::Index(j)) = v[9 + j];
    }
    return d;
}

void write_gamma_draws(const std::filesystem::path& path, const StructuralDraws& draws) {
    auto out = open_out(path);
    const Eigen::Index p = draws.gamma.cols();
    out << "#format=" << kGammaFormat << '\n';
    out << "#model=" << draws.model << '\n';
    for (Eigen::Index j = 0; j < p; ++j) out << "gamma_" << j << ',';
    out << "iterations,converged,foc_residual,failed,error\n";
    for (std::size_t s = 0; s < draws.size(); ++s) {
        const Eigen::RowVectorXd g = draws.gamma.row(static_cast<Eigen::Index>(s));
        for (Eigen::Index j = 0; j < p; ++j) out << format_double(g[j]) << ',';
        std::string err = s < draws.errors.size() ? draws.errors[s] : std::string();
        for (char& c : err) {
            if (c == ',' || c == '\n' || c == '\r') c = ';';
        }
        out << draws.iterations[s] << ',' << (draws.converged[s] ? 1 : 0) << ','
            << format_double(draws.foc_residual[s]) << ',' << (draws.failed[s] ? 1 : 0) << ',' << err << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

StructuralDraws read_gamma_draws(const std::filesystem::path& path) {
    const auto h = read_header(path);
    if (header_value(h, "format", path) != kGammaFormat) {
        throw DataError(path.string() + ": not a structural draw file");
    }
    StructuralDraws d;
    d.model = header_value(h, "model", path);

    auto in = open_in(path);
    std::string line;
    std::size_t line_no = 0;
    std::size_t p = 0;
    bool saw_columns = false;
    std::vector<std::vector<double>> gammas;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const auto parts = split(line, ',');
        if (!saw_columns) {
            if (parts.size() < 6 || parts[parts.size() - 5] != "iterations") {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad column header");
            }
            p = parts.size() - 5;
            saw_columns = true;
            continue;
        }
        if (parts.size() != p + 5) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(p + 5) + " columns, found " + std::to_string(parts.size()));
        }
        try {
            std::vector<double> g(p);
            for (std::size_t j = 0; j < p; ++j) g[j] = parse_double(parts[j]);
            gammas.push_back(std::move(g));
            d.iterations.push_back(static_cast<int>(parse_double(parts[p])));
            d.converged.push_back(parts[p + 1] == "1");
            d.foc_residual.push_back(parse_double(parts[p + 2]));
            d.failed.push_back(parts[p + 3] == "1");
            d.errors.push_back(parts[p + 4]);
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!saw_columns) throw DataError(path.string() + ": missing column header");
    d.gamma.resize(static_cast<Eigen::Index>(gammas.size()), static_cast<Eigen::Index>(p));
    for (std::size_t s = 0; s < gammas.size(); ++s) {
        for (std::size_t j = 0; j < p; ++j) d.gamma(Eigen::Index(s), Eigen::Index(j)) = gammas[s][j];
    }
    return d;
}

}  // namespace cmb
