#include "snls/grid.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>

namespace snls {

namespace {

// The FFTW planner is not re-entrant; execution with new-array calls is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

int symmetric_index(int slot, int n) { return slot < n / 2 ? slot : slot - n; }

std::vector<cplx> to_spectrum(const Field& u) {
    std::vector<cplx> s = u.values;
    u.grid->forward(s);
    return s;
}

std::vector<cplx> to_spectrum(const RealField& u) {
    std::vector<cplx> s(u.values.begin(), u.values.end());
    u.grid->forward(s);
    return s;
}

double hs_from_spectrum(const Grid& g, std::span<const cplx> spec, double s) {
    const auto ksq = g.k_squared();
    double acc = 0.0;
    for (std::size_t i = 0; i < spec.size(); ++i) {
        const double w = s == 1.0 ? 1.0 + ksq[i] : s == 0.0 ? 1.0 : std::pow(1.0 + ksq[i], s);
        acc += w * std::norm(spec[i]);
    }
    return std::sqrt(acc * g.cell_volume() / static_cast<double>(g.size()));
}

double w1p_norm(const Grid& g, std::span<const cplx> values, const std::vector<std::vector<cplx>>& grads,
                double p) {
    if (std::isinf(p)) {
        double m = 0.0;
        for (const auto& v : values) m = std::max(m, std::abs(v));
        for (const auto& gr : grads)
            for (const auto& v : gr) m = std::max(m, std::abs(v));
        return m;
    }
    double acc = 0.0;
    for (const auto& v : values) acc += std::pow(std::abs(v), p);
    for (const auto& gr : grads)
        for (const auto& v : gr) acc += std::pow(std::abs(v), p);
    return std::pow(acc * g.cell_volume(), 1.0 / p);
}

std::vector<std::vector<cplx>> gradient_values(const Grid& g, std::span<const cplx> spectrum) {
    std::vector<std::vector<cplx>> out;
    for (int j = 0; j < g.dim(); ++j) {
        const auto kj = g.k_component(j);
        std::vector<cplx> d(spectrum.begin(), spectrum.end());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= cplx(0.0, kj[i]);
        g.backward(d);
        out.push_back(std::move(d));
    }
    return out;
}

double norm_impl(const Grid& g, std::span<const cplx> values, NormKind kind) {
    switch (kind.tag) {
    case NormKind::Tag::Linf: {
        double m = 0.0;
        for (const auto& v : values) m = std::max(m, std::abs(v));
        return m;
    }
    case NormKind::Tag::L2:
    case NormKind::Tag::H1:
    case NormKind::Tag::Hs: {
        std::vector<cplx> spec(values.begin(), values.end());
        g.forward(spec);
        const double s = kind.tag == NormKind::Tag::L2 ? 0.0 : kind.param;
        return hs_from_spectrum(g, spec, s);
    }
    case NormKind::Tag::W1p: {
        std::vector<cplx> spec(values.begin(), values.end());
        g.forward(spec);
        return w1p_norm(g, values, gradient_values(g, spec), kind.param);
    }
    }
    throw Error("unknown norm kind");
}

} // namespace

Grid::Grid(int d, int n, double L) : d_(d), n_(n), L_(L) {
    if (d < 1 || d > 3) throw Error("grid dimension must be 1, 2 or 3");
    if (n < 8 || n % 2 != 0) throw Error("grid needs n >= 8 and even");
    if ((n & (n - 1)) != 0) throw Error("grid n must be a power of two");
    if (!(L > 0.0) || !std::isfinite(L)) throw Error("grid length L must be positive");

    size_ = 1;
    for (int j = 0; j < d; ++j) size_ *= static_cast<std::size_t>(n);
    cell_volume_ = std::pow(L / n, d);
    volume_ = std::pow(L, d);

    k1d_.resize(static_cast<std::size_t>(n));
    for (int slot = 0; slot < n; ++slot)
        k1d_[static_cast<std::size_t>(slot)] = 2.0 * std::numbers::pi * symmetric_index(slot, n) / L;

    ksq_.assign(size_, 0.0);
    kcomp_.assign(static_cast<std::size_t>(d), std::vector<double>(size_, 0.0));
    for (std::size_t flat = 0; flat < size_; ++flat) {
        const auto idx = unflatten(flat);
        double k2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double k = k1d_[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
            k2 += k * k;
            kcomp_[static_cast<std::size_t>(j)][flat] = idx[static_cast<std::size_t>(j)] == n / 2 ? 0.0 : k;
        }
        ksq_[flat] = k2;
    }

    // ESTIMATE plans are chosen deterministically, so reruns are bit-identical.
    std::vector<int> dims(static_cast<std::size_t>(d), n);
    auto* buf = fftw_alloc_complex(size_);
    std::lock_guard lock(planner_mutex());
    plan_fwd_ = fftw_plan_dft(d, dims.data(), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    plan_bwd_ = fftw_plan_dft(d, dims.data(), buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    plan_alignment_ = fftw_alignment_of(reinterpret_cast<double*>(buf));
    fftw_free(buf);
    if (plan_fwd_ == nullptr || plan_bwd_ == nullptr) throw Error("FFTW planning failed");
}

Grid::~Grid() {
    std::lock_guard lock(planner_mutex());
    if (plan_fwd_ != nullptr) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
    if (plan_bwd_ != nullptr) fftw_destroy_plan(static_cast<fftw_plan>(plan_bwd_));
}

std::shared_ptr<const Grid> Grid::make(int d, int n, double L) { return std::make_shared<const Grid>(d, n, L); }

std::vector<int> Grid::unflatten(std::size_t flat) const {
    std::vector<int> idx(static_cast<std::size_t>(d_));
    for (int j = d_ - 1; j >= 0; --j) {
        idx[static_cast<std::size_t>(j)] = static_cast<int>(flat % static_cast<std::size_t>(n_));
        flat /= static_cast<std::size_t>(n_);
    }
    return idx;
}

std::size_t Grid::flatten(std::span<const int> idx) const {
    std::size_t flat = 0;
    for (int j = 0; j < d_; ++j) {
        const int i = ((idx[static_cast<std::size_t>(j)] % n_) + n_) % n_;
        flat = flat * static_cast<std::size_t>(n_) + static_cast<std::size_t>(i);
    }
    return flat;
}

void Grid::execute(void* plan, std::span<cplx> data) const {
    if (data.size() != size_) throw Error("FFT size mismatch");
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    if (fftw_alignment_of(reinterpret_cast<double*>(buf)) == plan_alignment_) {
        fftw_execute_dft(static_cast<fftw_plan>(plan), buf, buf);
        return;
    }
    // Misaligned input: run the same plan on an aligned copy.
    thread_local std::unique_ptr<fftw_complex, decltype(&fftw_free)> scratch(nullptr, &fftw_free);
    thread_local std::size_t scratch_size = 0;
    if (scratch_size < size_) {
        scratch.reset(fftw_alloc_complex(size_));
        scratch_size = size_;
    }
    std::copy(data.begin(), data.end(), reinterpret_cast<cplx*>(scratch.get()));
    fftw_execute_dft(static_cast<fftw_plan>(plan), scratch.get(), scratch.get());
    std::copy_n(reinterpret_cast<cplx*>(scratch.get()), size_, data.begin());
}

void Grid::forward(std::span<cplx> data) const { execute(plan_fwd_, data); }

void Grid::backward(std::span<cplx> data) const {
    execute(plan_bwd_, data);
    const double scale = 1.0 / static_cast<double>(size_);
    for (auto& v : data) v *= scale;
}

Field::Field(GridPtr g, std::vector<cplx> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid->size()) throw Error("field size does not match grid");
}

bool Field::all_finite() const {
    return std::all_of(values.begin(), values.end(),
                       [](const cplx& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
}

RealField::RealField(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid->size()) throw Error("field size does not match grid");
}

bool RealField::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

NormKind NormKind::hs(double s) {
    if (!(s >= 0.0)) throw Error("Hs norm requires s >= 0");
    return {Tag::Hs, s};
}

NormKind NormKind::w1p(double p) {
    if (!(p >= 2.0)) throw Error("W1p norm requires p >= 2");
    return {Tag::W1p, p};
}

std::string NormKind::describe() const {
    std::ostringstream os;
    switch (tag) {
    case Tag::L2: return "L2";
    case Tag::H1: return "H1";
    case Tag::Linf: return "Linf";
    case Tag::Hs: os << "Hs(" << param << ")"; return os.str();
    case Tag::W1p:
        if (std::isinf(param)) return "W1p(inf)";
        os << "W1p(" << param << ")";
        return os.str();
    }
    return "?";
}

NormKind NormKind::parse(const std::string& text) {
    if (text == "L2") return l2();
    if (text == "H1") return h1();
    if (text == "Linf") return linf();
    auto arg = [&](std::size_t prefix) {
        if (text.size() < prefix + 2 || text.back() != ')') throw Error("bad norm spec '" + text + "'");
        const std::string inner = text.substr(prefix + 1, text.size() - prefix - 2);
        if (inner == "inf") return std::numeric_limits<double>::infinity();
        try {
            return std::stod(inner);
        } catch (const std::exception&) {
            throw Error("bad norm spec '" + text + "'");
        }
    };
    if (text.rfind("Hs(", 0) == 0) return hs(arg(2));
    if (text.rfind("W1p(", 0) == 0) return w1p(arg(3));
    throw Error("unknown norm '" + text + "'");
}

void require_same_grid(const Grid& a, const Grid& b, const char* where) {
    if (!a.same_as(b)) throw Error(std::string(where) + ": grid mismatch");
}

void free_group_apply_spectral(const Grid& grid, std::span<cplx> spectrum, double t) {
    const auto ksq = grid.k_squared();
    for (std::size_t i = 0; i < spectrum.size(); ++i) spectrum[i] *= std::polar(1.0, ksq[i] * t);
}

Field free_group_apply(const Field& u, double t) {
    if (!u.all_finite()) throw Error("non-finite field");
    Field out = u;
    if (t == 0.0) return out;
    u.grid->forward(out.values);
    free_group_apply_spectral(*u.grid, out.values, t);
    u.grid->backward(out.values);
    return out;
}

double norm(const Field& u, NormKind kind) {
    if (!u.all_finite()) throw Error("non-finite field");
    return norm_impl(*u.grid, u.values, kind);
}

double norm(const RealField& u, NormKind kind) {
    if (!u.all_finite()) throw Error("non-finite field");
    std::vector<cplx> v(u.values.begin(), u.values.end());
    return norm_impl(*u.grid, v, kind);
}

std::vector<Field> gradient(const Field& u) {
    const auto spec = to_spectrum(u);
    std::vector<Field> out;
    for (auto& g : gradient_values(*u.grid, spec)) out.emplace_back(u.grid, std::move(g));
    return out;
}

std::vector<RealField> gradient(const RealField& u) {
    const auto spec = to_spectrum(u);
    std::vector<RealField> out;
    for (auto& g : gradient_values(*u.grid, spec)) {
        std::vector<double> re(g.size());
        std::transform(g.begin(), g.end(), re.begin(), [](const cplx& z) { return z.real(); });
        out.emplace_back(u.grid, std::move(re));
    }
    return out;
}

double inner(const RealField& a, const RealField& b) {
    require_same_grid(*a.grid, *b.grid, "inner");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
    return acc * a.grid->cell_volume();
}

double momentum(const Field& u) { return norm(u, NormKind::l2()); }

double hamiltonian(const Field& u, int lambda, double sigma) {
    if (!(sigma >= 0.5)) throw Error("hamiltonian requires sigma >= 1/2");
    if (!u.all_finite()) throw Error("non-finite field");
    const Grid& g = *u.grid;
    const auto spec = to_spectrum(u);
    const auto ksq = g.k_squared();
    double kinetic = 0.0;
    for (std::size_t i = 0; i < spec.size(); ++i) kinetic += ksq[i] * std::norm(spec[i]);
    kinetic *= g.cell_volume() / static_cast<double>(g.size());
    double potential = 0.0;
    for (const auto& v : u.values) potential += std::pow(std::abs(v), 2.0 * sigma + 2.0);
    potential *= g.cell_volume();
    return 0.5 * kinetic - lambda / (2.0 * sigma + 2.0) * potential;
}

double admissible_rate(double p, int d) {
    if (d < 1) throw Error("dimension must be positive");
    if (!(p >= 2.0)) throw Error("admissible pair requires p >= 2");
    if (d == 2 && std::isinf(p)) throw Error("p = inf is not admissible for d = 2");
    if (d > 2 && p >= 2.0 * d / (d - 2.0)) throw Error("p must be < 2d/(d-2) for d > 2");
    if (p == 2.0) return std::numeric_limits<double>::infinity();
    const double inv = std::isinf(p) ? 0.0 : 1.0 / p;
    return 2.0 / (d * (0.5 - inv));
}

void dealias_two_thirds(const Grid& grid, std::span<cplx> spectrum) {
    const int n = grid.points_per_dim();
    const int cutoff = n / 3;
    for (std::size_t flat = 0; flat < spectrum.size(); ++flat) {
        const auto idx = grid.unflatten(flat);
        for (int slot : idx) {
            if (std::abs(symmetric_index(slot, n)) > cutoff) {
                spectrum[flat] = 0.0;
                break;
            }
        }
    }
}

namespace {

std::vector<cplx> refine_values(const Grid& coarse, std::span<const cplx> values, int factor, const Grid& fine) {
    if (factor < 1 || fine.dim() != coarse.dim() || fine.points_per_dim() != coarse.points_per_dim() * factor ||
        fine.length() != coarse.length())
        throw Error("refine: incompatible grids");
    std::vector<cplx> spec(values.begin(), values.end());
    coarse.forward(spec);
    const int n = coarse.points_per_dim();
    const int nf = fine.points_per_dim();
    const double scale = static_cast<double>(fine.size()) / static_cast<double>(coarse.size());
    std::vector<cplx> out(fine.size(), cplx{});
    const int d = coarse.dim();
    for (std::size_t flat = 0; flat < spec.size(); ++flat) {
        const auto idx = coarse.unflatten(flat);
        // Nyquist coefficients are split evenly between +n/2 and -n/2 on the fine grid.
        int nyq = 0;
        for (int slot : idx)
            if (slot == n / 2) ++nyq;
        const int copies = 1 << nyq;
        const double w = scale / copies;
        for (int c = 0; c < copies; ++c) {
            std::vector<int> fidx(static_cast<std::size_t>(d));
            int bit = 0;
            for (int j = 0; j < d; ++j) {
                const int slot = idx[static_cast<std::size_t>(j)];
                int m = symmetric_index(slot, n);
                if (slot == n / 2) {
                    m = ((c >> bit) & 1) ? n / 2 : -n / 2;
                    ++bit;
                }
                fidx[static_cast<std::size_t>(j)] = (m + nf) % nf;
            }
            out[fine.flatten(fidx)] += w * spec[flat];
        }
    }
    fine.backward(out);
    return out;
}

} // namespace

Field refine(const Field& u, int factor, GridPtr fine) {
    return Field(fine, refine_values(*u.grid, u.values, factor, *fine));
}

RealField refine(const RealField& u, int factor, GridPtr fine) {
    std::vector<cplx> v(u.values.begin(), u.values.end());
    auto out = refine_values(*u.grid, v, factor, *fine);
    std::vector<double> re(out.size());
    std::transform(out.begin(), out.end(), re.begin(), [](const cplx& z) { return z.real(); });
    return RealField(fine, std::move(re));
}

} // namespace snls
