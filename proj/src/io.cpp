#include "pmlds/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace pmlds::io {

namespace {

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

bool parse_number(const std::string& s, double& v)
{
    if (s.empty()) {
        return false;
    }
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    return res.ec == std::errc{} && res.ptr == end;
}

}  // namespace

std::string format_double(double v)
{
    return fmt::format("{:.17g}", v);
}

void write_csv(const std::string& path, const Matrix& m, const std::vector<std::string>& header)
{
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write '{}'", path));
    }
    if (!header.empty()) {
        if (static_cast<Eigen::Index>(header.size()) != m.cols()) {
            throw InvalidArgument("write_csv: header length does not match the column count");
        }
        out << fmt::format("{}\n", fmt::join(header, ","));
    }
    std::string line;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        line.clear();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j > 0) {
                line += ',';
            }
            line += format_double(m(i, j));
        }
        out << line << '\n';
    }
}

Matrix read_csv(const std::string& path, std::vector<std::string>* header)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot read '{}'", path));
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    std::size_t cols = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto cells = split(line);
        std::vector<double> row(cells.size());
        bool numeric = true;
        for (std::size_t c = 0; c < cells.size() && numeric; ++c) {
            numeric = parse_number(cells[c], row[c]);
        }
        if (first) {
            first = false;
            cols = cells.size();
            if (!numeric) {
                if (header) {
                    *header = cells;
                }
                continue;
            }
        }
        const auto r = rows.size() + 1;
        if (cells.size() != cols) {
            throw DataError(fmt::format("{}: data row {} has {} columns, expected {}", path, r, cells.size(), cols));
        }
        if (!numeric) {
            throw DataError(fmt::format("{}: data row {} contains a non-numeric value", path, r));
        }
        for (double v : row) {
            if (!std::isfinite(v)) {
                throw DataError(fmt::format("{}: data row {} contains a non-finite value", path, r));
            }
        }
        rows.push_back(std::move(row));
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

std::vector<std::string> observation_header(int d)
{
    std::vector<std::string> h;
    for (int j = 1; j <= d; ++j) {
        h.push_back(fmt::format("y{}", j));
    }
    return h;
}

nlohmann::json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot read '{}'", path));
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("{}: invalid JSON: {}", path, e.what()));
    }
}

void write_json(const std::string& path, const nlohmann::json& j)
{
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write '{}'", path));
    }
    out << j.dump(2) << '\n';
}

}  // namespace pmlds::io
