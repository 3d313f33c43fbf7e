#include "snls/field_io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace snls {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFieldLayout = "row-major interleaved re,im";
constexpr const char* kRowsLayout = "row-major real";

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffU) << (8 * (7 - i));
    return r;
}

fs::path strip(const fs::path& p) {
    if (p.extension() == ".json" || p.extension() == ".bin") return p.parent_path() / p.stem();
    return p;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

void check_grid_keys(const json& j, const Grid& grid, const fs::path& p) {
    if (j.at("d").get<int>() != grid.dim() || j.at("n").get<int>() != grid.points_per_dim() ||
        j.at("L").get<double>() != grid.length())
        throw Error(p.string() + ": grid (d, n, L) does not match");
}

void check_encoding(const json& j, const char* layout, const fs::path& p) {
    if (j.at("dtype") != "f64" || j.at("layout") != layout || j.at("endianness") != "little")
        throw Error(p.string() + ": unsupported dtype/layout/endianness");
}

} // namespace

fs::path sidecar_path(const fs::path& path) { return fs::path(strip(path).string() + ".json"); }
fs::path binary_path(const fs::path& path) { return fs::path(strip(path).string() + ".bin"); }

void write_f64_le(const fs::path& file, std::span<const double> data) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    for (double v : data) {
        std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
}

std::vector<double> read_f64_le(const fs::path& file, std::size_t expected_count) {
    std::error_code ec;
    const auto bytes = fs::file_size(file, ec);
    if (ec) throw Error("cannot stat " + file.string());
    if (bytes != expected_count * sizeof(double))
        throw Error(file.string() + ": expected " + std::to_string(expected_count * sizeof(double)) +
                    " bytes, found " + std::to_string(bytes));
    std::ifstream in(file, std::ios::binary);
    std::vector<double> out(expected_count);
    for (auto& v : out) {
        std::uint64_t bits = 0;
        in.read(reinterpret_cast<char*>(&bits), sizeof bits);
        v = std::bit_cast<double>(to_le(bits));
    }
    if (!in) throw Error("short read on " + file.string());
    return out;
}

void write_snapshot(const fs::path& base, const Field& u, double t) {
    const Grid& g = *u.grid;
    json j = {{"d", g.dim()}, {"n", g.points_per_dim()}, {"L", g.length()}, {"t", t},
              {"dtype", "f64"}, {"layout", kFieldLayout}, {"endianness", "little"}};
    write_json(sidecar_path(base), j);
    std::vector<double> flat(2 * u.values.size());
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        flat[2 * i] = u.values[i].real();
        flat[2 * i + 1] = u.values[i].imag();
    }
    write_f64_le(binary_path(base), flat);
}

Snapshot read_snapshot(const fs::path& path, GridPtr grid) {
    const auto side = sidecar_path(path);
    const json j = read_json(side);
    try {
        check_encoding(j, kFieldLayout, side);
        if (!grid) grid = Grid::make(j.at("d").get<int>(), j.at("n").get<int>(), j.at("L").get<double>());
        check_grid_keys(j, *grid, side);
        const auto flat = read_f64_le(binary_path(path), 2 * grid->size());
        Field u(grid);
        for (std::size_t i = 0; i < u.values.size(); ++i) u.values[i] = cplx(flat[2 * i], flat[2 * i + 1]);
        return {std::move(u), j.at("t").get<double>()};
    } catch (const json::exception& e) {
        throw Error(side.string() + ": " + e.what());
    }
}

void write_real_rows(const fs::path& base, const Grid& grid, const Eigen::MatrixXd& rows) {
    if (rows.cols() != static_cast<Eigen::Index>(grid.size())) throw Error("row length must equal n^d");
    json j = {{"d", grid.dim()}, {"n", grid.points_per_dim()}, {"L", grid.length()}, {"rows", rows.rows()},
              {"dtype", "f64"}, {"layout", kRowsLayout}, {"endianness", "little"}};
    write_json(sidecar_path(base), j);
    std::vector<double> flat(static_cast<std::size_t>(rows.size()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
        for (Eigen::Index c = 0; c < rows.cols(); ++c)
            flat[static_cast<std::size_t>(r * rows.cols() + c)] = rows(r, c);
    write_f64_le(binary_path(base), flat);
}

Eigen::MatrixXd read_real_rows(const fs::path& path, const Grid& grid) {
    const auto side = sidecar_path(path);
    const json j = read_json(side);
    try {
        check_encoding(j, kRowsLayout, side);
        check_grid_keys(j, grid, side);
        const auto nrows = j.at("rows").get<std::size_t>();
        const auto flat = read_f64_le(binary_path(path), nrows * grid.size());
        Eigen::MatrixXd m(static_cast<Eigen::Index>(nrows), static_cast<Eigen::Index>(grid.size()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat[static_cast<std::size_t>(r * m.cols() + c)];
        return m;
    } catch (const json::exception& e) {
        throw Error(side.string() + ": " + e.what());
    }
}

} // namespace snls
