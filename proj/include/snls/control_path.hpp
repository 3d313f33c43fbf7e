#pragma once

#include "snls/grid.hpp"

#include <filesystem>
#include <vector>

namespace snls {

/**
 * Piecewise-constant real control h(t, x). `knots` has one more entry than
 * `values`: values[k] is held on [knots[k], knots[k+1]). Outside
 * [knots.front(), knots.back()) the control is zero.
 */
struct ControlPath {
    std::vector<double> knots;
    std::vector<RealField> values;

    static ControlPath zero(const GridPtr& grid, double T, std::size_t intervals);
    static ControlPath uniform(std::vector<RealField> values, double T);

    std::size_t intervals() const { return values.size(); }
    double end_time() const { return knots.empty() ? 0.0 : knots.back(); }
    /// Interval index holding t, or -1 when h(t) = 0.
    long interval_at(double t) const;
    void validate() const;

    /// Restriction to [0, t_end]; the interval straddling t_end is cut.
    ControlPath truncated(double t_end) const;
    ControlPath scaled(double factor) const;
};

/// Pointwise sum on the union of both knot sets (zero outside each path's support).
ControlPath add_controls(const ControlPath& a, const ControlPath& b);

/// 1/2 sum_k ||h_k||^2_{L2} (t_{k+1} - t_k)
double control_energy(const ControlPath& h);

/// Control files: `<base>.json` {format, d, n, L, knots, dtype, layout, endianness}
/// plus `<base>.bin` with one real field per interval.
void write_control(const std::filesystem::path& base, const ControlPath& h);
ControlPath read_control(const std::filesystem::path& path, const GridPtr& grid);

} // namespace snls
