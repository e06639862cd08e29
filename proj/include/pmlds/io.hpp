#pragma once

#include <string>
#include <vector>

#include "pmlds/core.hpp"

namespace pmlds::io {

/// Writes a numeric matrix as CSV with 17 significant digits. An optional
/// header row is written first.
void write_csv(const std::string& path, const Matrix& m, const std::vector<std::string>& header = {});

/// Reads a numeric CSV. A first row that does not parse as numbers is taken
/// as a header; lines starting with '#' are skipped. Ragged rows and
/// non-finite values raise DataError naming the 1-based data row.
Matrix read_csv(const std::string& path, std::vector<std::string>* header = nullptr);

/// Default observation header y1..yd.
std::vector<std::string> observation_header(int d);

nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

/// Full-precision decimal text for a double.
std::string format_double(double v);

}  // namespace pmlds::io
