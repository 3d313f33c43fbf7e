#include "snls/noise.hpp"

#include "snls/field_io.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

namespace snls {

struct KernelOperator::Impl {
    GridPtr grid;
    Form form = Form::Convolution;
    double s = 0.0;
    double cutoff = 1e-10;
    std::optional<KernelConfig> cfg;

    // Convolution: kernel profile at offsets and the circulant eigenvalues dV * FFT(profile).
    std::vector<double> profile;
    std::vector<double> eigen;

    // Explicit kernel values K(x_i, y_j).
    Eigen::MatrixXd K;

    // Rank-R factors as columns.
    Eigen::MatrixXd phis;
    Eigen::MatrixXd psis;

    RealField fphi;

    // Truncated SVD of the discrete operator (explicit / rank-R), built on first use.
    mutable std::once_flag svd_once;
    mutable Eigen::MatrixXd svd_u;
    mutable Eigen::VectorXd svd_s;
    mutable Eigen::MatrixXd svd_v;

    void build_svd() const;
};

namespace {

void check_assumption(const Grid& g, double s) {
    const double bound = g.dim() / 4.0 + 1.0;
    if (!(s > bound))
        throw Error("noise Sobolev index s = " + std::to_string(s) + " must satisfy s > d/4 + 1 = " +
                    std::to_string(bound));
}

Eigen::Map<const Eigen::VectorXd> as_vec(const RealField& f) {
    return {f.values.data(), static_cast<Eigen::Index>(f.values.size())};
}

RealField from_vec(const GridPtr& g, const Eigen::VectorXd& v) {
    return RealField(g, std::vector<double>(v.data(), v.data() + v.size()));
}

double hs_sq_of_real(const Grid& g, std::span<const double> values, double s) {
    std::vector<cplx> spec(values.begin(), values.end());
    g.forward(spec);
    const auto ksq = g.k_squared();
    double acc = 0.0;
    for (std::size_t i = 0; i < spec.size(); ++i) acc += std::pow(1.0 + ksq[i], s) * std::norm(spec[i]);
    return acc * g.cell_volume() / static_cast<double>(g.size());
}

} // namespace

void KernelOperator::Impl::build_svd() const {
    std::call_once(svd_once, [this] {
        const double dV = grid->cell_volume();
        if (form == Form::Explicit) {
            Eigen::BDCSVD<Eigen::MatrixXd> svd(K * dV, Eigen::ComputeThinU | Eigen::ComputeThinV);
            svd_u = svd.matrixU();
            svd_s = svd.singularValues();
            svd_v = svd.matrixV();
        } else if (form == Form::RankR) {
            // M = A B^T with A = phis, B = dV psis; SVD through thin QR factors.
            if (phis.cols() == 0) {
                svd_u.resize(static_cast<Eigen::Index>(grid->size()), 0);
                svd_v = svd_u;
                svd_s.resize(0);
                return;
            }
            Eigen::HouseholderQR<Eigen::MatrixXd> qa(phis);
            Eigen::HouseholderQR<Eigen::MatrixXd> qb(psis * dV);
            const Eigen::Index r = phis.cols();
            const Eigen::Index n = phis.rows();
            Eigen::MatrixXd Qa = qa.householderQ() * Eigen::MatrixXd::Identity(n, r);
            Eigen::MatrixXd Qb = qb.householderQ() * Eigen::MatrixXd::Identity(n, r);
            Eigen::MatrixXd Ra = qa.matrixQR().topRows(r).triangularView<Eigen::Upper>();
            Eigen::MatrixXd Rb = qb.matrixQR().topRows(r).triangularView<Eigen::Upper>();
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ra * Rb.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
            svd_u = Qa * svd.matrixU();
            svd_s = svd.singularValues();
            svd_v = Qb * svd.matrixV();
        }
    });
}

KernelOperator::KernelOperator(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

RealField gaussian_profile(const GridPtr& grid, double length_scale, double amplitude) {
    if (!(length_scale > 0.0)) throw Error("kernel length_scale must be positive");
    RealField p(grid);
    const int n = grid->points_per_dim();
    const double h = grid->spacing();
    for (std::size_t flat = 0; flat < grid->size(); ++flat) {
        const auto idx = grid->unflatten(flat);
        double r2 = 0.0;
        for (int i : idx) {
            const int m = i <= n / 2 ? i : i - n;
            r2 += (m * h) * (m * h);
        }
        p.values[flat] = amplitude * std::exp(-r2 / (2.0 * length_scale * length_scale));
    }
    return p;
}

RealField bessel_profile(const GridPtr& grid, double length_scale, double amplitude) {
    if (!(length_scale > 0.0)) throw Error("kernel length_scale must be positive");
    const auto ksq = grid->k_squared();
    std::vector<cplx> spec(grid->size());
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = amplitude / (1.0 + length_scale * length_scale * ksq[i]);
    grid->backward(spec);
    RealField p(grid);
    for (std::size_t i = 0; i < spec.size(); ++i) p.values[i] = spec[i].real() / grid->cell_volume();
    return p;
}

KernelOperator KernelOperator::convolution(RealField profile, double s, double pinv_cutoff) {
    auto impl = std::make_shared<Impl>();
    impl->grid = profile.grid;
    check_assumption(*impl->grid, s);
    impl->form = Form::Convolution;
    impl->s = s;
    impl->cutoff = pinv_cutoff;
    const Grid& g = *impl->grid;
    const double dV = g.cell_volume();
    impl->profile = profile.values;

    std::vector<cplx> spec(profile.values.begin(), profile.values.end());
    g.forward(spec);
    impl->eigen.resize(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) impl->eigen[i] = dV * spec[i].real();

    double sum_sq = 0.0;
    for (double v : profile.values) sum_sq += v * v;
    impl->fphi = RealField(impl->grid, std::vector<double>(g.size(), sum_sq * dV));
    return KernelOperator(std::move(impl));
}

KernelOperator KernelOperator::gaussian(GridPtr grid, double length_scale, double amplitude, double s,
                                        double pinv_cutoff) {
    auto op = convolution(gaussian_profile(grid, length_scale, amplitude), s, pinv_cutoff);
    KernelConfig cfg;
    cfg.form = "convolution";
    cfg.profile = "gaussian";
    cfg.length_scale = length_scale;
    cfg.amplitude = amplitude;
    cfg.s = s;
    cfg.pinv_cutoff = pinv_cutoff;
    op.impl_->cfg = cfg;
    return op;
}

KernelOperator KernelOperator::bessel(GridPtr grid, double length_scale, double amplitude, double s,
                                      double pinv_cutoff) {
    auto op = convolution(bessel_profile(grid, length_scale, amplitude), s, pinv_cutoff);
    KernelConfig cfg;
    cfg.form = "convolution";
    cfg.profile = "bessel";
    cfg.length_scale = length_scale;
    cfg.amplitude = amplitude;
    cfg.s = s;
    cfg.pinv_cutoff = pinv_cutoff;
    op.impl_->cfg = cfg;
    return op;
}

KernelOperator KernelOperator::explicit_kernel(GridPtr grid, Eigen::MatrixXd kernel, double s, double pinv_cutoff) {
    check_assumption(*grid, s);
    const auto n = static_cast<Eigen::Index>(grid->size());
    if (grid->size() > max_explicit_size) throw Error("explicit kernels are limited to n^d <= 4096");
    if (kernel.rows() != n || kernel.cols() != n) throw Error("explicit kernel must be n^d x n^d");
    if (!kernel.allFinite()) throw Error("explicit kernel has non-finite entries");
    auto impl = std::make_shared<Impl>();
    impl->grid = std::move(grid);
    impl->form = Form::Explicit;
    impl->s = s;
    impl->cutoff = pinv_cutoff;
    impl->K = std::move(kernel);
    const double dV = impl->grid->cell_volume();
    Eigen::VectorXd f = impl->K.rowwise().squaredNorm() * dV;
    impl->fphi = from_vec(impl->grid, f);
    return KernelOperator(std::move(impl));
}

KernelOperator KernelOperator::rank_r(GridPtr grid, std::vector<std::pair<RealField, RealField>> pairs, double s,
                                      double pinv_cutoff) {
    check_assumption(*grid, s);
    auto impl = std::make_shared<Impl>();
    impl->grid = grid;
    impl->form = Form::RankR;
    impl->s = s;
    impl->cutoff = pinv_cutoff;
    const auto n = static_cast<Eigen::Index>(grid->size());
    const auto r = static_cast<Eigen::Index>(pairs.size());
    impl->phis.resize(n, r);
    impl->psis.resize(n, r);
    for (Eigen::Index i = 0; i < r; ++i) {
        const auto& [phi, psi] = pairs[static_cast<std::size_t>(i)];
        require_same_grid(*grid, *phi.grid, "rank_r");
        require_same_grid(*grid, *psi.grid, "rank_r");
        impl->phis.col(i) = as_vec(phi);
        impl->psis.col(i) = as_vec(psi);
    }
    const double dV = grid->cell_volume();
    const Eigen::MatrixXd gram = impl->psis.transpose() * impl->psis * dV;
    Eigen::VectorXd f(n);
    for (Eigen::Index x = 0; x < n; ++x) {
        const Eigen::RowVectorXd row = impl->phis.row(x);
        f(x) = (row * gram * row.transpose())(0, 0);
    }
    impl->fphi = from_vec(grid, f);
    return KernelOperator(std::move(impl));
}

KernelOperator KernelOperator::zero(GridPtr grid, double s) {
    return convolution(RealField(std::move(grid)), s);
}

KernelOperator KernelOperator::from_config(GridPtr grid, const KernelConfig& cfg) {
    KernelOperator op = [&] {
        if (cfg.form == "convolution") {
            if (cfg.profile == "gaussian") return gaussian(grid, cfg.length_scale, cfg.amplitude, cfg.s, cfg.pinv_cutoff);
            if (cfg.profile == "bessel") return bessel(grid, cfg.length_scale, cfg.amplitude, cfg.s, cfg.pinv_cutoff);
            throw Error("unknown convolution profile '" + cfg.profile + "'");
        }
        if (cfg.form == "explicit") {
            if (cfg.matrix_path.empty()) throw Error("explicit kernel needs matrix_path");
            Eigen::MatrixXd K = read_real_rows(cfg.matrix_path, *grid);
            if (K.rows() != static_cast<Eigen::Index>(grid->size()))
                throw Error("explicit kernel matrix must have n^d rows");
            return explicit_kernel(grid, std::move(K), cfg.s, cfg.pinv_cutoff);
        }
        if (cfg.form == "rank_r") {
            if (cfg.pairs_path.empty()) throw Error("rank_r kernel needs pairs_path");
            Eigen::MatrixXd rows = read_real_rows(cfg.pairs_path, *grid);
            if (rows.rows() % 2 != 0) throw Error("rank_r pairs file must hold an even number of rows");
            std::vector<std::pair<RealField, RealField>> pairs;
            for (Eigen::Index i = 0; i < rows.rows(); i += 2) {
                Eigen::VectorXd a = rows.row(i).transpose();
                Eigen::VectorXd b = rows.row(i + 1).transpose();
                pairs.emplace_back(from_vec(grid, a), from_vec(grid, b));
            }
            return rank_r(grid, std::move(pairs), cfg.s, cfg.pinv_cutoff);
        }
        throw Error("unknown kernel form '" + cfg.form + "'");
    }();
    op.impl_->cfg = cfg;
    return op;
}

KernelOperator::Form KernelOperator::form() const { return impl_->form; }
const GridPtr& KernelOperator::grid() const { return impl_->grid; }
double KernelOperator::sobolev_index() const { return impl_->s; }
double KernelOperator::pinv_cutoff() const { return impl_->cutoff; }
std::optional<KernelConfig> KernelOperator::config() const { return impl_->cfg; }

RealField KernelOperator::apply(const RealField& v) const {
    require_same_grid(*impl_->grid, *v.grid, "kernel apply");
    const Grid& g = *impl_->grid;
    switch (impl_->form) {
    case Form::Convolution: {
        std::vector<cplx> spec(v.values.begin(), v.values.end());
        g.forward(spec);
        for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= impl_->eigen[i];
        g.backward(spec);
        RealField out(impl_->grid);
        for (std::size_t i = 0; i < spec.size(); ++i) out.values[i] = spec[i].real();
        return out;
    }
    case Form::Explicit: return from_vec(impl_->grid, impl_->K * as_vec(v) * g.cell_volume());
    case Form::RankR: {
        if (impl_->phis.cols() == 0) return RealField(impl_->grid);
        const Eigen::VectorXd coeff = impl_->psis.transpose() * as_vec(v) * g.cell_volume();
        return from_vec(impl_->grid, impl_->phis * coeff);
    }
    }
    throw Error("unknown kernel form");
}

double KernelOperator::hs_norm(double s) const {
    if (!(s >= 0.0)) throw Error("hs_norm requires s >= 0");
    const Grid& g = *impl_->grid;
    const double dV = g.cell_volume();
    switch (impl_->form) {
    case Form::Convolution: {
        const auto ksq = g.k_squared();
        double acc = 0.0;
        for (std::size_t i = 0; i < impl_->eigen.size(); ++i)
            acc += std::pow(1.0 + ksq[i], s) * impl_->eigen[i] * impl_->eigen[i];
        return std::sqrt(acc);
    }
    case Form::Explicit: {
        // Phi e_j = K(., y_j) sqrt(dV) for the normalized grid basis e_j = delta_j / sqrt(dV).
        double acc = 0.0;
        std::vector<double> col(g.size());
        for (Eigen::Index j = 0; j < impl_->K.cols(); ++j) {
            for (std::size_t i = 0; i < g.size(); ++i) col[i] = impl_->K(static_cast<Eigen::Index>(i), j);
            acc += hs_sq_of_real(g, col, s) * dV;
        }
        return std::sqrt(acc);
    }
    case Form::RankR: {
        const auto r = impl_->phis.cols();
        if (r == 0) return 0.0;
        // sum_j ||Phi e_j||^2 = sum_{i,i'} <phi_i, phi_i'>_{H^s} <psi_i, psi_i'>_{L2}
        std::vector<std::vector<cplx>> specs;
        for (Eigen::Index i = 0; i < r; ++i) {
            std::vector<cplx> sp(impl_->phis.col(i).data(), impl_->phis.col(i).data() + impl_->phis.rows());
            g.forward(sp);
            specs.push_back(std::move(sp));
        }
        const auto ksq = g.k_squared();
        const Eigen::MatrixXd psi_gram = impl_->psis.transpose() * impl_->psis * dV;
        double acc = 0.0;
        for (Eigen::Index a = 0; a < r; ++a) {
            for (Eigen::Index b = 0; b < r; ++b) {
                double hs = 0.0;
                for (std::size_t m = 0; m < g.size(); ++m)
                    hs += std::pow(1.0 + ksq[m], s) * (specs[a][m] * std::conj(specs[b][m])).real();
                hs *= dV / static_cast<double>(g.size());
                acc += hs * psi_gram(a, b);
            }
        }
        return std::sqrt(std::max(acc, 0.0));
    }
    }
    throw Error("unknown kernel form");
}

const RealField& KernelOperator::f_phi() const { return impl_->fphi; }

double KernelOperator::correlation(std::span<const int> x, std::span<const int> z) const {
    const Grid& g = *impl_->grid;
    if (static_cast<int>(x.size()) != g.dim() || static_cast<int>(z.size()) != g.dim())
        throw Error("correlation: index dimension mismatch");
    std::vector<int> xz(x.begin(), x.end());
    for (std::size_t j = 0; j < xz.size(); ++j) xz[j] += z[j];
    const std::size_t ix = g.flatten(x);
    const std::size_t ixz = g.flatten(xz);
    const double dV = g.cell_volume();
    switch (impl_->form) {
    case Form::Convolution: {
        // K(a, u) = kappa(a - u); sum over u of kappa(x + z - u) kappa(x - u).
        double acc = 0.0;
        std::vector<int> w(static_cast<std::size_t>(g.dim()));
        for (std::size_t flat = 0; flat < g.size(); ++flat) {
            const auto idx = g.unflatten(flat);
            for (int j = 0; j < g.dim(); ++j) w[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j)] + z[static_cast<std::size_t>(j)];
            acc += impl_->profile[g.flatten(w)] * impl_->profile[flat];
        }
        return acc * dV;
    }
    case Form::Explicit:
        return impl_->K.row(static_cast<Eigen::Index>(ixz)).dot(impl_->K.row(static_cast<Eigen::Index>(ix))) * dV;
    case Form::RankR: {
        if (impl_->phis.cols() == 0) return 0.0;
        const Eigen::MatrixXd gram = impl_->psis.transpose() * impl_->psis * dV;
        const Eigen::RowVectorXd a = impl_->phis.row(static_cast<Eigen::Index>(ixz));
        const Eigen::RowVectorXd b = impl_->phis.row(static_cast<Eigen::Index>(ix));
        return (a * gram * b.transpose())(0, 0);
    }
    }
    throw Error("unknown kernel form");
}

RealField KernelOperator::colour(std::span<const double> white, double dt) const {
    const Grid& g = *impl_->grid;
    if (white.size() != g.size()) throw Error("white noise size mismatch");
    // dW_c = sum_j zeta_j sqrt(dt) e_j with e_j = delta_j / sqrt(dV).
    const double scale = std::sqrt(dt / g.cell_volume());
    RealField w(impl_->grid);
    for (std::size_t i = 0; i < white.size(); ++i) w.values[i] = scale * white[i];
    return apply(w);
}

NoiseIncrement KernelOperator::sample_increment(double dt, RandomStream& rng) const {
    if (!(dt > 0.0)) throw Error("noise increment needs dt > 0");
    NoiseIncrement inc;
    inc.dt = dt;
    inc.white.resize(impl_->grid->size());
    for (auto& z : inc.white) z = rng.normal();
    inc.dW = colour(inc.white, dt);
    return inc;
}

RangeSolve KernelOperator::solve(const RealField& g) const {
    require_same_grid(*impl_->grid, *g.grid, "kernel solve");
    const Grid& grid = *impl_->grid;
    RangeSolve out{RealField(impl_->grid), 0.0};
    const double gnorm = as_vec(g).norm();
    if (gnorm == 0.0) return out;
    if (impl_->form == Form::Convolution) {
        double mu_max = 0.0;
        for (double mu : impl_->eigen) mu_max = std::max(mu_max, std::abs(mu));
        std::vector<cplx> spec(g.values.begin(), g.values.end());
        grid.forward(spec);
        for (std::size_t i = 0; i < spec.size(); ++i) {
            const double mu = impl_->eigen[i];
            spec[i] = (mu_max > 0.0 && std::abs(mu) > impl_->cutoff * mu_max) ? spec[i] / mu : cplx{};
        }
        grid.backward(spec);
        for (std::size_t i = 0; i < spec.size(); ++i) out.h.values[i] = spec[i].real();
    } else {
        impl_->build_svd();
        const auto& S = impl_->svd_s;
        const double smax = S.size() > 0 ? S.maxCoeff() : 0.0;
        Eigen::VectorXd coeff = impl_->svd_u.transpose() * as_vec(g);
        for (Eigen::Index i = 0; i < S.size(); ++i)
            coeff(i) = (smax > 0.0 && S(i) > impl_->cutoff * smax) ? coeff(i) / S(i) : 0.0;
        out.h = from_vec(impl_->grid, impl_->svd_v * coeff);
    }
    const RealField back = apply(out.h);
    out.relative_residual = (as_vec(back) - as_vec(g)).norm() / gnorm;
    return out;
}

RealField KernelOperator::project_coimage(const RealField& h) const {
    require_same_grid(*impl_->grid, *h.grid, "kernel projection");
    const Grid& grid = *impl_->grid;
    if (impl_->form == Form::Convolution) {
        double mu_max = 0.0;
        for (double mu : impl_->eigen) mu_max = std::max(mu_max, std::abs(mu));
        std::vector<cplx> spec(h.values.begin(), h.values.end());
        grid.forward(spec);
        for (std::size_t i = 0; i < spec.size(); ++i)
            if (!(mu_max > 0.0 && std::abs(impl_->eigen[i]) > impl_->cutoff * mu_max)) spec[i] = cplx{};
        grid.backward(spec);
        RealField out(impl_->grid);
        for (std::size_t i = 0; i < spec.size(); ++i) out.values[i] = spec[i].real();
        return out;
    }
    impl_->build_svd();
    const auto& S = impl_->svd_s;
    const double smax = S.size() > 0 ? S.maxCoeff() : 0.0;
    Eigen::VectorXd coeff = impl_->svd_v.transpose() * as_vec(h);
    for (Eigen::Index i = 0; i < S.size(); ++i)
        if (!(smax > 0.0 && S(i) > impl_->cutoff * smax)) coeff(i) = 0.0;
    return from_vec(impl_->grid, impl_->svd_v * coeff);
}

Eigen::MatrixXd KernelOperator::matrix() const {
    const Grid& g = *impl_->grid;
    if (g.size() > max_explicit_size) throw Error("dense kernel matrix limited to n^d <= 4096");
    const auto n = static_cast<Eigen::Index>(g.size());
    if (impl_->form == Form::Explicit) return impl_->K * g.cell_volume();
    if (impl_->form == Form::RankR) return impl_->phis * impl_->psis.transpose() * g.cell_volume();
    Eigen::MatrixXd M(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto xi = g.unflatten(static_cast<std::size_t>(i));
        for (Eigen::Index j = 0; j < n; ++j) {
            auto off = g.unflatten(static_cast<std::size_t>(j));
            for (std::size_t a = 0; a < off.size(); ++a) off[a] = xi[a] - off[a];
            M(i, j) = impl_->profile[g.flatten(off)] * g.cell_volume();
        }
    }
    return M;
}

} // namespace snls
