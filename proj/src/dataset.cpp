#include "cmb/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include "cmb/error.hpp"

namespace cmb {

Eigen::MatrixX2d Dataset::z_matrix() const {
    Eigen::MatrixX2d out(logY.size(), 2);
    out.col(0) = logY;
    out.col(1) = logA;
    return out;
}

void Dataset::validate() const {
    const auto n = logQ.size();
    if (logP.size() != n || logY.size() != n || logA.size() != n) {
        throw DataError("dataset columns have unequal lengths");
    }
    if (!logQ.allFinite() || !logP.allFinite() || !logY.allFinite() || !logA.allFinite()) {
        throw DataError("dataset contains non-finite values");
    }
}

Dataset Dataset::with_size(Eigen::Index n) {
    Dataset d;
    d.logQ.resize(n);
    d.logP.resize(n);
    d.logY.resize(n);
    d.logA.resize(n);
    return d;
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\"");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\"");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// nullopt for empty or NaN/Inf fields (rejected rows); throws on garbage.
std::optional<double> parse_field(const std::string& s, std::size_t line_no, const std::string& col) {
    if (s.empty()) return std::nullopt;
    const std::string l = lower(s);
    if (l == "na" || l == "nan" || l == "inf" || l == "-inf" || l == "+inf") return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + s + "' in column " + col);
    }
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, LoadReport* report) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file " + path.string());

    std::string line;
    std::size_t line_no = 0;
    // Header: first non-blank line.
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_csv(line);
            break;
        }
    }
    if (header.empty()) throw DataError("dataset file " + path.string() + " is empty");

    static const std::array<std::string, 4> names = {"logq", "logp", "logy", "loga"};
    static const std::array<std::string, 4> pretty = {"logQ", "logP", "logY", "logA"};
    std::array<std::size_t, 4> idx{};
    for (std::size_t c = 0; c < 4; ++c) {
        auto it = std::find_if(header.begin(), header.end(),
                               [&](const std::string& h) { return lower(h) == names[c]; });
        if (it == header.end()) {
            throw DataError("dataset " + path.string() + " is missing column " + pretty[c]);
        }
        idx[c] = static_cast<std::size_t>(it - header.begin());
    }

    std::array<std::vector<double>, 4> cols;
    LoadReport rep;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != header.size()) {
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        }
        ++rep.rows_read;
        std::array<double, 4> row{};
        bool ok = true;
        for (std::size_t c = 0; c < 4; ++c) {
            const auto v = parse_field(fields[idx[c]], line_no, pretty[c]);
            if (!v) {
                ok = false;
            } else {
                row[c] = *v;
            }
        }
        if (!ok) {
            ++rep.rows_rejected;
            continue;
        }
        for (std::size_t c = 0; c < 4; ++c) cols[c].push_back(row[c]);
    }
    if (report) *report = rep;

    const auto n = static_cast<Eigen::Index>(cols[0].size());
    if (n == 0) throw DataError("dataset " + path.string() + " has no valid rows");
    Dataset d = Dataset::with_size(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.logQ[i] = cols[0][i];
        d.logP[i] = cols[1][i];
        d.logY[i] = cols[2][i];
        d.logA[i] = cols[3][i];
    }
    return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file " + path.string());
    out.precision(17);
    out << "logQ,logP,logY,logA\n";
    for (Eigen::Index i = 0; i < data.logQ.size(); ++i) {
        out << data.logQ[i] << ',' << data.logP[i] << ',' << data.logY[i] << ',' << data.logA[i]
            << '\n';
    }
}

}  // namespace cmb
