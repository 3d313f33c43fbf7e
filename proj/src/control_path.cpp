#include "snls/control_path.hpp"

#include "snls/field_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace snls {

using nlohmann::json;

ControlPath ControlPath::zero(const GridPtr& grid, double T, std::size_t intervals) {
    if (intervals == 0 || !(T > 0.0)) throw Error("control needs T > 0 and at least one interval");
    ControlPath h;
    h.knots.resize(intervals + 1);
    for (std::size_t k = 0; k <= intervals; ++k) h.knots[k] = T * static_cast<double>(k) / static_cast<double>(intervals);
    h.values.assign(intervals, RealField(grid));
    return h;
}

ControlPath ControlPath::uniform(std::vector<RealField> values, double T) {
    if (values.empty()) throw Error("control needs at least one interval");
    ControlPath h = zero(values.front().grid, T, values.size());
    h.values = std::move(values);
    return h;
}

long ControlPath::interval_at(double t) const {
    if (values.empty() || t < knots.front() || t >= knots.back()) return -1;
    const auto it = std::upper_bound(knots.begin(), knots.end(), t);
    return static_cast<long>(it - knots.begin()) - 1;
}

void ControlPath::validate() const {
    if (knots.size() != values.size() + 1) throw Error("control: need one more knot than values");
    if (values.empty()) return;
    if (knots.front() != 0.0) throw Error("control: first knot must be 0");
    for (std::size_t k = 0; k + 1 < knots.size(); ++k)
        if (!(knots[k + 1] > knots[k])) throw Error("control: knots must be strictly increasing");
    for (const auto& v : values) {
        if (!v.grid || !v.grid->same_as(*values.front().grid)) throw Error("control: values on different grids");
        if (!v.all_finite()) throw Error("control: non-finite value");
    }
}

ControlPath ControlPath::truncated(double t_end) const {
    ControlPath out;
    out.knots.push_back(knots.empty() ? 0.0 : knots.front());
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (knots[k] >= t_end) break;
        out.values.push_back(values[k]);
        out.knots.push_back(std::min(knots[k + 1], t_end));
    }
    if (out.values.empty()) out.knots.clear();
    return out;
}

ControlPath ControlPath::scaled(double factor) const {
    ControlPath out = *this;
    for (auto& v : out.values)
        for (auto& x : v.values) x *= factor;
    return out;
}

ControlPath add_controls(const ControlPath& a, const ControlPath& b) {
    if (a.values.empty()) return b;
    if (b.values.empty()) return a;
    a.validate();
    b.validate();
    require_same_grid(*a.values.front().grid, *b.values.front().grid, "add_controls");
    std::vector<double> knots = a.knots;
    knots.insert(knots.end(), b.knots.begin(), b.knots.end());
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    ControlPath out;
    out.knots = knots;
    const GridPtr& grid = a.values.front().grid;
    for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
        const double mid = 0.5 * (knots[k] + knots[k + 1]);
        RealField v(grid);
        for (const ControlPath* c : {&a, &b}) {
            const long i = c->interval_at(mid);
            if (i < 0) continue;
            const auto& src = c->values[static_cast<std::size_t>(i)].values;
            for (std::size_t j = 0; j < v.size(); ++j) v.values[j] += src[j];
        }
        out.values.push_back(std::move(v));
    }
    return out;
}

double control_energy(const ControlPath& h) {
    h.validate();
    double acc = 0.0;
    for (std::size_t k = 0; k < h.values.size(); ++k) {
        const auto& v = h.values[k];
        double sq = 0.0;
        for (double x : v.values) sq += x * x;
        acc += sq * v.grid->cell_volume() * (h.knots[k + 1] - h.knots[k]);
    }
    return 0.5 * acc;
}

void write_control(const std::filesystem::path& base, const ControlPath& h) {
    h.validate();
    if (h.values.empty()) throw Error("cannot write an empty control");
    const Grid& g = *h.values.front().grid;
    json j = {{"format", "snls-control"}, {"d", g.dim()}, {"n", g.points_per_dim()}, {"L", g.length()},
              {"knots", h.knots}, {"dtype", "f64"}, {"layout", "interval-major real"}, {"endianness", "little"}};
    std::ofstream(sidecar_path(base)) << j.dump(2) << '\n';
    std::vector<double> flat;
    flat.reserve(h.values.size() * g.size());
    for (const auto& v : h.values) flat.insert(flat.end(), v.values.begin(), v.values.end());
    write_f64_le(binary_path(base), flat);
}

ControlPath read_control(const std::filesystem::path& path, const GridPtr& grid) {
    const auto side = sidecar_path(path);
    std::ifstream in(side);
    if (!in) throw Error("cannot open " + side.string());
    json j;
    try {
        j = json::parse(in);
        if (j.at("format") != "snls-control" || j.at("dtype") != "f64" || j.at("endianness") != "little" ||
            j.at("layout") != "interval-major real")
            throw Error(side.string() + ": not a control file");
        if (j.at("d").get<int>() != grid->dim() || j.at("n").get<int>() != grid->points_per_dim() ||
            j.at("L").get<double>() != grid->length())
            throw Error(side.string() + ": control grid does not match");
        ControlPath h;
        h.knots = j.at("knots").get<std::vector<double>>();
        if (h.knots.size() < 2) throw Error(side.string() + ": control needs at least two knots");
        const std::size_t m = h.knots.size() - 1;
        const auto flat = read_f64_le(binary_path(path), m * grid->size());
        for (std::size_t k = 0; k < m; ++k)
            h.values.emplace_back(grid, std::vector<double>(flat.begin() + static_cast<long>(k * grid->size()),
                                                            flat.begin() + static_cast<long>((k + 1) * grid->size())));
        h.validate();
        return h;
    } catch (const json::exception& e) {
        throw Error(side.string() + ": " + e.what());
    }
}

} // namespace snls
