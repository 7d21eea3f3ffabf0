#pragma once

#include "advspheres/common.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace advspheres::csv {

/// Shortest round-trip decimal form of a double.
std::string format(double value);

/// Opens a file for writing, creating parent directories. Throws DataError on failure.
std::ofstream open_out(const std::filesystem::path& path);

/// Parses a numeric CSV. When has_header is set the first line is returned in
/// `header` and skipped. Throws DataError on unreadable files or bad cells.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};
Table read(const std::filesystem::path& path, bool has_header);

/// Writes the rows of a matrix, one comma-separated line per row.
void write_rows(std::ostream& out, const Eigen::Ref<const Matrix>& m);

std::vector<std::string> split(const std::string& line, char sep = ',');

}  // namespace advspheres::csv
