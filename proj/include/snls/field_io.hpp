#pragma once

#include "snls/grid.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <vector>

namespace snls {

/// Snapshot files: `<base>.json` sidecar plus `<base>.bin` holding 2 n^d
/// little-endian float64 values (re, im interleaved, row-major).
struct Snapshot {
    Field field;
    double t = 0.0;
};

void write_snapshot(const std::filesystem::path& base, const Field& u, double t);
/// Accepts either the base path or the sidecar path; sizes are validated exactly.
Snapshot read_snapshot(const std::filesystem::path& path, GridPtr grid = nullptr);

/// Real row blocks (kernel matrices, rank-R pairs, control values): sidecar
/// {d, n, L, rows, dtype, layout: "row-major real", endianness} plus `<base>.bin`.
void write_real_rows(const std::filesystem::path& base, const Grid& grid, const Eigen::MatrixXd& rows);
Eigen::MatrixXd read_real_rows(const std::filesystem::path& path, const Grid& grid);

void write_f64_le(const std::filesystem::path& file, std::span<const double> data);
std::vector<double> read_f64_le(const std::filesystem::path& file, std::size_t expected_count);

std::filesystem::path sidecar_path(const std::filesystem::path& path);
std::filesystem::path binary_path(const std::filesystem::path& path);

} // namespace snls
