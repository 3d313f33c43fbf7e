#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace snls {

using cplx = std::complex<double>;

/// Raised for invalid input to any toolkit operation.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Periodic box [0, L)^d sampled with n points per dimension, row-major
 * (last index fastest). Owns the FFTW plans; plans are created once and only
 * executed afterwards, so a Grid can be shared read-only across threads.
 */
class Grid {
public:
    Grid(int d, int n, double L);
    ~Grid();
    Grid(const Grid&) = delete;
    Grid& operator=(const Grid&) = delete;

    static std::shared_ptr<const Grid> make(int d, int n, double L);

    int dim() const { return d_; }
    int points_per_dim() const { return n_; }
    double length() const { return L_; }
    std::size_t size() const { return size_; }
    double spacing() const { return L_ / n_; }
    double cell_volume() const { return cell_volume_; }
    double volume() const { return volume_; }

    /// Wavenumber 2*pi*m/L for symmetric index m of FFT slot `slot` (0 <= slot < n).
    double wavenumber(int slot) const { return k1d_[static_cast<std::size_t>(slot)]; }
    std::span<const double> wavenumbers() const { return k1d_; }
    /// |k|^2 per flat FFT slot, Nyquist included.
    std::span<const double> k_squared() const { return ksq_; }
    /// k_j per flat slot with the Nyquist component zeroed (odd derivatives).
    std::span<const double> k_component(int j) const { return kcomp_[static_cast<std::size_t>(j)]; }

    /// Coordinate x_j of grid index i along one axis: i * L / n.
    double coordinate(int i) const { return i * spacing(); }
    /// Multi-index of a flat index.
    std::vector<int> unflatten(std::size_t flat) const;
    std::size_t flatten(std::span<const int> idx) const;

    /// Unnormalized forward DFT (sign -1) in place.
    void forward(std::span<cplx> data) const;
    /// Inverse DFT in place, including the 1/N normalization.
    void backward(std::span<cplx> data) const;

    bool same_as(const Grid& other) const {
        return d_ == other.d_ && n_ == other.n_ && L_ == other.L_;
    }

private:
    int d_;
    int n_;
    double L_;
    std::size_t size_;
    double cell_volume_;
    double volume_;
    std::vector<double> k1d_;
    std::vector<double> ksq_;
    std::vector<std::vector<double>> kcomp_;
    void* plan_fwd_ = nullptr;
    void* plan_bwd_ = nullptr;
    int plan_alignment_ = 0;
    void execute(void* plan, std::span<cplx> data) const;
};

using GridPtr = std::shared_ptr<const Grid>;

/// Complex field sampled on a grid.
struct Field {
    GridPtr grid;
    std::vector<cplx> values;

    Field() = default;
    explicit Field(GridPtr g) : grid(std::move(g)), values(grid->size(), cplx{}) {}
    Field(GridPtr g, std::vector<cplx> v);

    std::size_t size() const { return values.size(); }
    bool all_finite() const;
};

/// Real field sampled on a grid (noise, potentials, controls).
struct RealField {
    GridPtr grid;
    std::vector<double> values;

    RealField() = default;
    explicit RealField(GridPtr g) : grid(std::move(g)), values(grid->size(), 0.0) {}
    RealField(GridPtr g, std::vector<double> v);

    std::size_t size() const { return values.size(); }
    bool all_finite() const;
};

struct NormKind {
    enum class Tag { L2, H1, Hs, W1p, Linf };
    Tag tag = Tag::L2;
    double param = 0.0; // s for Hs, p for W1p (p may be +inf)

    static NormKind l2() { return {Tag::L2, 0.0}; }
    static NormKind h1() { return {Tag::H1, 1.0}; }
    static NormKind hs(double s);
    static NormKind w1p(double p);
    static NormKind linf() { return {Tag::Linf, 0.0}; }

    std::string describe() const;
    static NormKind parse(const std::string& text);
};

void require_same_grid(const Grid& a, const Grid& b, const char* where);

/// e^{-it Delta} on the grid: Fourier mode m is multiplied by exp(i |k_m|^2 t).
Field free_group_apply(const Field& u, double t);

/// Same as free_group_apply but acting on spectral coefficients in place.
void free_group_apply_spectral(const Grid& grid, std::span<cplx> spectrum, double t);

double norm(const Field& u, NormKind kind);
double norm(const RealField& u, NormKind kind);

/// Spectral gradient; one field per dimension.
std::vector<Field> gradient(const Field& u);
std::vector<RealField> gradient(const RealField& u);

/// L2 inner product Re <a, b> = dV * sum a * b for real fields.
double inner(const RealField& a, const RealField& b);

/// M(u) = ||u||_{L2}
double momentum(const Field& u);

/// H(u) = 1/2 int |grad u|^2 - lambda/(2 sigma + 2) int |u|^{2 sigma + 2}
double hamiltonian(const Field& u, int lambda, double sigma);

/// Strichartz exponent r(p) with 2/r = d (1/2 - 1/p); returns +inf for p = 2.
double admissible_rate(double p, int d);

/// Zero out modes outside the 2/3 band (|m| > n/3 along any axis).
void dealias_two_thirds(const Grid& grid, std::span<cplx> spectrum);

/// Trigonometric interpolation onto a grid with `factor` times more points per dimension.
Field refine(const Field& u, int factor, GridPtr fine);
RealField refine(const RealField& u, int factor, GridPtr fine);

} // namespace snls
