#include "snls/tail_bounds.hpp"

#include "snls/parallel.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace snls {

namespace {

std::vector<double> hs_weights(const Grid& g, double s) {
    std::vector<double> w(g.size());
    const auto ksq = g.k_squared();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::pow(1.0 + ksq[i], s);
    return w;
}

double hs_of(const Grid& g, const std::vector<cplx>& spec, const std::vector<double>& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < spec.size(); ++i) acc += w[i] * std::norm(spec[i]);
    return std::sqrt(acc * g.cell_volume() / static_cast<double>(g.size()));
}

RealField real_part(const GridPtr& g, std::vector<cplx> spec) {
    g->backward(spec);
    RealField out(g);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = spec[i].real();
    return out;
}

std::vector<cplx> spectrum_of(const RealField& v) {
    std::vector<cplx> spec(v.values.begin(), v.values.end());
    v.grid->forward(spec);
    return spec;
}

// ||v||_{W1q}^q without the final root, and the gradient direction of that functional.
double w1q_power(const Grid& g, const std::vector<cplx>& spec, double q, std::vector<double>* direction) {
    const std::size_t n = g.size();
    std::vector<double> v(n);
    {
        std::vector<cplx> tmp = spec;
        g.backward(tmp);
        for (std::size_t i = 0; i < n; ++i) v[i] = tmp[i].real();
    }
    double acc = 0.0;
    for (double x : v) acc += std::pow(std::abs(x), q);
    if (direction) {
        direction->assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) (*direction)[i] = std::pow(std::abs(v[i]), q - 2.0) * v[i];
    }
    for (int j = 0; j < g.dim(); ++j) {
        const auto kj = g.k_component(j);
        std::vector<cplx> d(spec);
        for (std::size_t i = 0; i < n; ++i) d[i] *= cplx(0.0, kj[i]);
        g.backward(d);
        std::vector<cplx> flux(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = d[i].real();
            acc += std::pow(std::abs(x), q);
            flux[i] = std::pow(std::abs(x), q - 2.0) * x;
        }
        if (direction) {
            // D_j is antisymmetric, so the adjoint term is -D_j flux.
            g.forward(flux);
            for (std::size_t i = 0; i < n; ++i) flux[i] *= cplx(0.0, -kj[i]);
            g.backward(flux);
            for (std::size_t i = 0; i < n; ++i) (*direction)[i] += flux[i].real();
        }
    }
    return acc * g.cell_volume();
}

EmbeddingResult hs_target(const GridPtr& g, double s, double s_target) {
    const auto w = hs_weights(*g, s);
    const auto wt = hs_weights(*g, s_target);
    EmbeddingResult out;
    out.method = "exact";
    std::size_t best = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double ratio = std::sqrt(wt[i] / w[i]);
        if (ratio > out.value) {
            out.value = ratio;
            best = i;
        }
    }
    std::vector<cplx> spec(g->size());
    spec[best] = 1.0;
    out.maximizer = real_part(g, spec);
    return out;
}

EmbeddingResult sup_target(const GridPtr& g, double s, bool with_gradient) {
    const auto w = hs_weights(*g, s);
    const double V = g->volume();
    EmbeddingResult out;
    out.method = "exact";
    double value = 0.0;
    for (double x : w) value += 1.0 / (V * x);
    out.value = std::sqrt(value);
    std::vector<cplx> spec(g->size());
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = 1.0 / w[i];
    if (with_gradient) {
        for (int j = 0; j < g->dim(); ++j) {
            const auto kj = g->k_component(j);
            double acc = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) acc += kj[i] * kj[i] / (V * w[i]);
            if (std::sqrt(acc) > out.value) {
                out.value = std::sqrt(acc);
                for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = cplx(0.0, -kj[i] / w[i]);
            }
        }
    }
    out.maximizer = real_part(g, spec);
    return out;
}

EmbeddingResult power_target(const GridPtr& g, double s, double q, const EmbeddingOptions& opts) {
    const auto w = hs_weights(*g, s);
    const std::size_t n = g->size();
    std::vector<std::vector<cplx>> starts;
    starts.push_back(spectrum_of(sup_target(g, s, false).maximizer));
    starts.push_back(spectrum_of(sup_target(g, s, true).maximizer));
    RandomStream rng(opts.seed, hash_label("embedding"), 0);
    for (int r = 0; r < opts.restarts; ++r) {
        RealField v(g);
        for (auto& x : v.values) x = rng.normal();
        auto spec = spectrum_of(v);
        for (std::size_t i = 0; i < n; ++i) spec[i] /= std::sqrt(w[i]);
        starts.push_back(std::move(spec));
    }

    EmbeddingResult best;
    best.method = "power";
    best.converged = false;
    for (auto spec : starts) {
        double hs = hs_of(*g, spec, w);
        if (hs == 0.0) continue;
        for (auto& c : spec) c /= hs;
        double value = std::pow(w1q_power(*g, spec, q, nullptr), 1.0 / q);
        bool converged = false;
        int it = 0;
        std::vector<double> dir;
        while (it < opts.max_iter) {
            ++it;
            (void)w1q_power(*g, spec, q, &dir);
            std::vector<cplx> next(dir.begin(), dir.end());
            g->forward(next);
            for (std::size_t i = 0; i < n; ++i) next[i] /= w[i];
            hs = hs_of(*g, next, w);
            if (hs == 0.0) break;
            for (auto& c : next) c /= hs;
            const double nv = std::pow(w1q_power(*g, next, q, nullptr), 1.0 / q);
            const bool small = std::abs(nv - value) <= opts.tol * nv;
            if (nv >= value) {
                spec = std::move(next);
                value = nv;
            }
            if (small) {
                converged = true;
                break;
            }
        }
        best.iterations += it;
        if (value > best.value) {
            best.value = value;
            best.converged = converged;
            best.maximizer = real_part(g, spec);
        }
    }
    return best;
}

double k_factorial_root(int k0) {
    // (2 e k0!)^{1/k0} through lgamma so large k0 does not overflow.
    return std::exp((std::log(2.0 * std::numbers::e) + std::lgamma(k0 + 1.0)) / k0);
}

} // namespace

EmbeddingResult embedding_constant(const GridPtr& grid, double s, NormKind target, const EmbeddingOptions& opts) {
    if (!(s >= 0.0)) throw Error("embedding: s must be >= 0");
    switch (target.tag) {
    case NormKind::Tag::L2: return hs_target(grid, s, 0.0);
    case NormKind::Tag::H1: return hs_target(grid, s, 1.0);
    case NormKind::Tag::Hs: return hs_target(grid, s, target.param);
    case NormKind::Tag::Linf: return sup_target(grid, s, false);
    case NormKind::Tag::W1p:
        if (std::isinf(target.param)) return sup_target(grid, s, true);
        return power_target(grid, s, target.param, opts);
    }
    throw Error("embedding: unknown target");
}

TailConstants tail_constants(double eta, double T, double p, int d, double s, double hs_norm, double c_emb_inf,
                             double c_emb_rpd2) {
    std::vector<std::string> errs;
    if (!(eta >= 0.0)) errs.emplace_back("eta must be >= 0");
    if (!(T > 0.0)) errs.emplace_back("T must be > 0");
    if (!(p >= 2.0) || (d > 1 && !(p < 2.0 * d / (d - 1.0))) || std::isinf(p))
        errs.emplace_back("p outside the admissible range [2, 2d/(d-1))");
    if (!(hs_norm >= 0.0) || !(c_emb_inf >= 0.0) || !(c_emb_rpd2 >= 0.0))
        errs.emplace_back("norm and embedding inputs must be >= 0");
    if (!errs.empty()) {
        std::ostringstream os;
        os << "invalid tail constant inputs:";
        for (const auto& e : errs) os << "\n  - " << e;
        throw Error(os.str());
    }
    TailConstants c;
    c.eta = eta;
    c.T = T;
    c.p = p;
    c.d = d;
    c.s = s;
    c.hs_norm = hs_norm;
    c.c_emb_inf = c_emb_inf;
    c.c_emb_rpd2 = c_emb_rpd2;
    c.r = admissible_rate(p, d);
    const double four_r = 4.0 / c.r; // 0 when r = inf
    const double frac = 1.0 - four_r;
    const double phi2 = hs_norm * hs_norm;
    const double geo = (d + 1.0) * (d + p);
    c.kappa = 4.0 * c_emb_rpd2 * c_emb_rpd2 * std::pow(T, 1.0 - four_r) * geo * phi2 * eta / frac;
    c.kappa1 = T * 4.0 * c_emb_inf * c_emb_inf * phi2 * eta;
    c.kappa2 = 8.0 * c_emb_rpd2 * c_emb_rpd2 * std::pow(T, 1.0 - 2.0 / c.r) * geo * phi2 * eta / frac;
    if (std::isfinite(c.r)) {
        c.k0 = std::max(2, static_cast<int>(std::ceil(c.r / 2.0 - 1e-12)));
        c.c_moment = 2.0 * std::numbers::e + std::exp(k_factorial_root(*c.k0));
    } else {
        c.c_moment = INFINITY;
    }
    return c;
}

TailConstants compute_constants(double eta, double T, double p, const KernelOperator& phi, const EmbeddingOptions& emb) {
    const GridPtr& g = phi.grid();
    const int d = g->dim();
    // Validate the exponent before the embedding work.
    (void)tail_constants(eta, T, p, d, 0.0, 0.0, 0.0, 0.0);
    const double s = phi.sobolev_index();
    const double r = admissible_rate(p, d);
    const auto cinf = embedding_constant(g, s, NormKind::w1p(INFINITY), emb);
    const double q = std::isinf(r) ? INFINITY : r * d / 2.0;
    const auto crpd2 = std::isinf(q) ? cinf : embedding_constant(g, s, NormKind::w1p(q), emb);
    TailConstants c = tail_constants(eta, T, p, d, s, phi.hs_norm(s), cinf.value, crpd2.value);
    c.embeddings_converged = cinf.converged && crpd2.converged;
    return c;
}

double conv_bound(double delta, const TailConstants& c) { return std::exp(1.0 - delta * delta / c.kappa); }
double sup_h1_bound(double delta, const TailConstants& c) { return 3.0 * std::exp(-delta * delta / c.kappa1); }
double lr_w1p_bound(double delta, const TailConstants& c) {
    if (std::isinf(c.c_moment)) return INFINITY;
    return c.c_moment * std::exp(-delta * delta / c.kappa2);
}

double clopper_pearson_upper(long k, long n, double confidence) {
    if (n <= 0 || k < 0 || k > n) throw Error("clopper-pearson: need 0 <= k <= n, n > 0");
    if (k == n) return 1.0;
    return boost::math::ibeta_inv(static_cast<double>(k + 1), static_cast<double>(n - k), confidence);
}

double clopper_pearson_lower(long k, long n, double confidence) {
    if (n <= 0 || k < 0 || k > n) throw Error("clopper-pearson: need 0 <= k <= n, n > 0");
    if (k == 0) return 0.0;
    return boost::math::ibeta_inv(static_cast<double>(k), static_cast<double>(n - k + 1), 1.0 - confidence);
}

void TailCheckOptions::validate() const {
    std::vector<std::string> errs;
    if (!(eta >= 0.0)) errs.emplace_back("eta must be >= 0");
    if (!(T > 0.0)) errs.emplace_back("T must be > 0");
    if (!(dt > 0.0) || dt > T) errs.emplace_back("dt must satisfy 0 < dt <= T");
    if (N < 1) errs.emplace_back("N must be >= 1");
    if (workers < 1) errs.emplace_back("workers must be >= 1");
    if (batch < 1) errs.emplace_back("batch must be >= 1");
    if (integrand != "frozen" && integrand != "piecewise") errs.emplace_back("integrand must be frozen or piecewise");
    if (blocks < 1) errs.emplace_back("blocks must be >= 1");
    for (double x : deltas)
        if (!(x > 0.0)) errs.emplace_back("deltas must be > 0");
    if (!(confidence > 0.0 && confidence < 1.0) || !(violation_confidence > 0.0 && violation_confidence < 1.0))
        errs.emplace_back("confidence levels must lie in (0, 1)");
    if (!errs.empty()) {
        std::ostringstream os;
        os << "invalid tail check options:";
        for (const auto& e : errs) os << "\n  - " << e;
        throw Error(os.str());
    }
}

namespace {

Field default_profile(const GridPtr& g) {
    Field u(g);
    const double c = g->length() / 2;
    const double w = g->length() / 8;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const auto idx = g->unflatten(i);
        double r2 = 0.0;
        for (int x : idx) r2 += std::pow(g->coordinate(x) - c, 2);
        u.values[i] = std::exp(-r2 / (w * w));
    }
    return u;
}

struct PathNorms {
    double conv = 0.0; // sup_{t0} ||M_T(t0)||_{W1p}
    double sup_h1 = 0.0;
    double lr = 0.0;    // ||Z||_{L^r(0,T; W1p)}
};

} // namespace

TailReport empirical_tail_check(const KernelOperator& phi, const TailCheckOptions& opts) {
    opts.validate();
    const GridPtr& g = phi.grid();
    TailReport rep;
    rep.constants = compute_constants(opts.eta, opts.T, opts.p, phi);
    const TailConstants& tc = rep.constants;

    Field xi0 = opts.profile ? *opts.profile : default_profile(g);
    require_same_grid(*xi0.grid, *g, "tail check profile");
    const double h1 = norm(xi0, NormKind::h1());
    if (opts.eta > 0.0 && h1 == 0.0) throw Error("tail check: profile must be nonzero");
    for (auto& v : xi0.values) v *= h1 > 0.0 ? std::sqrt(opts.eta) / h1 : 0.0;

    std::vector<double> deltas = opts.deltas;
    if (deltas.empty()) {
        const double sk = std::sqrt(tc.kappa1);
        for (int i = 0; i < 8; ++i) deltas.push_back((0.5 + 3.5 * i / 7.0) * (sk > 0.0 ? sk : 1.0));
    }

    const std::size_t nb = static_cast<std::size_t>((opts.N + opts.batch - 1) / opts.batch);
    std::vector<std::vector<long>> counts(nb, std::vector<long>(3 * deltas.size(), 0));
    rep.exact = opts.eta == 0.0 || tc.hs_norm == 0.0;
    rep.N = opts.N;

    if (!rep.exact) {
        const std::size_t n = g->size();
        const auto ksq = g->k_squared();
        const std::size_t steps = static_cast<std::size_t>(std::ceil(opts.T / opts.dt - 1e-9));
        const std::size_t per_block = std::max<std::size_t>(1, (steps + opts.blocks - 1) / opts.blocks);
        const NormKind wp = NormKind::w1p(opts.p);
        const std::uint64_t key = hash_label("tails") ^ mix64(opts.run);

        auto one_path = [&](long i) {
            RandomStream rng(opts.seed, key, static_cast<std::uint64_t>(i));
            PathNorms out;
            std::vector<cplx> Y(n, cplx{});
            std::vector<cplx> xi_spec(xi0.values);
            g->forward(xi_spec);
            Field xi = xi0;
            Field work(g);
            double lr_acc = 0.0;
            for (std::size_t k = 0; k < steps; ++k) {
                const double tk = static_cast<double>(k) * opts.dt;
                const double h = std::min(opts.dt, opts.T - tk);
                if (opts.integrand == "piecewise" && k % per_block == 0) {
                    // Predictable: drawn before the block's increments.
                    const double theta = 2.0 * std::numbers::pi * rng.uniform();
                    std::vector<double> shift(static_cast<std::size_t>(g->dim()));
                    for (auto& a : shift) a = g->length() * rng.uniform();
                    std::vector<cplx> spec = xi_spec;
                    for (std::size_t m = 0; m < n; ++m) {
                        double phase = theta;
                        for (int j = 0; j < g->dim(); ++j) phase -= g->k_component(j)[m] * shift[static_cast<std::size_t>(j)];
                        spec[m] *= std::polar(1.0, phase);
                    }
                    g->backward(spec);
                    xi.values = spec;
                }
                const auto inc = phi.sample_increment(h, rng);
                std::vector<cplx> prod(n);
                for (std::size_t m = 0; m < n; ++m) prod[m] = xi.values[m] * inc.dW.values[m];
                g->forward(prod);
                for (std::size_t m = 0; m < n; ++m) Y[m] += std::polar(1.0, -ksq[m] * tk) * prod[m];
                const double t1 = tk + h;

                double acc = 0.0;
                for (std::size_t m = 0; m < n; ++m) acc += (1.0 + ksq[m]) * std::norm(Y[m]);
                out.sup_h1 = std::max(out.sup_h1, std::sqrt(acc * g->cell_volume() / static_cast<double>(n)));

                for (std::size_t m = 0; m < n; ++m) work.values[m] = std::polar(1.0, ksq[m] * opts.T) * Y[m];
                g->backward(work.values);
                out.conv = std::max(out.conv, norm(work, wp));

                for (std::size_t m = 0; m < n; ++m) work.values[m] = std::polar(1.0, ksq[m] * t1) * Y[m];
                g->backward(work.values);
                const double z = norm(work, wp);
                if (std::isinf(tc.r))
                    lr_acc = std::max(lr_acc, z);
                else
                    lr_acc += std::pow(z, tc.r) * h;
            }
            out.lr = std::isinf(tc.r) ? lr_acc : std::pow(lr_acc, 1.0 / tc.r);
            return out;
        };

        parallel_for(nb, opts.workers, [&](std::size_t b) {
            const long lo = static_cast<long>(b) * opts.batch;
            const long hi = std::min(opts.N, lo + opts.batch);
            auto& c = counts[b];
            for (long i = lo; i < hi; ++i) {
                const PathNorms pn = one_path(i);
                for (std::size_t j = 0; j < deltas.size(); ++j) {
                    c[3 * j] += pn.conv >= deltas[j];
                    c[3 * j + 1] += pn.sup_h1 >= deltas[j];
                    c[3 * j + 2] += pn.lr >= deltas[j];
                }
            }
        });
    }

    static const char* names[3] = {"conv_w1p", "sup_h1", "lr_w1p"};
    for (std::size_t j = 0; j < deltas.size(); ++j) {
        for (int b = 0; b < 3; ++b) {
            TailRow row;
            row.delta = deltas[j];
            row.bound = names[b];
            for (const auto& c : counts) row.exceed += c[3 * j + static_cast<std::size_t>(b)];
            row.frequency = static_cast<double>(row.exceed) / static_cast<double>(opts.N);
            if (rep.exact) {
                row.upper = row.lower = row.frequency;
            } else {
                row.upper = clopper_pearson_upper(row.exceed, opts.N, opts.confidence);
                row.lower = clopper_pearson_lower(row.exceed, opts.N, opts.violation_confidence);
            }
            row.bound_value = b == 0 ? conv_bound(row.delta, tc)
                              : b == 1 ? sup_h1_bound(row.delta, tc)
                                       : lr_w1p_bound(row.delta, tc);
            row.status = row.upper <= row.bound_value ? "PASS" : "WARN";
            row.violated = row.lower > row.bound_value;
            rep.violations += row.violated;
            rep.warnings += row.status == "WARN";
            rep.rows.push_back(row);
        }
    }
    return rep;
}

} // namespace snls
