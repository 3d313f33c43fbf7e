#pragma once

#include "snls/noise.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace snls {

struct EmbeddingOptions {
    int restarts = 6;
    int max_iter = 500;
    double tol = 1e-12;
    std::uint64_t seed = 1;
};

/// Discrete operator norm sup ||v||_target / ||v||_{H^s} over real grid fields.
struct EmbeddingResult {
    double value = 0.0;
    bool converged = true;
    int iterations = 0;
    std::string method; // "exact" or "power"
    RealField maximizer;
};

/**
 * Hs-type targets (L2, H1, Hs) and W1p(inf)/Linf have closed forms on the
 * grid; finite W1p(q) uses nonlinear power iteration with restarts, which is
 * monotone because the target norm is convex.
 */
EmbeddingResult embedding_constant(const GridPtr& grid, double s, NormKind target, const EmbeddingOptions& opts = {});

struct TailConstants {
    double kappa = 0.0;  // single-time bound exp(1 - delta^2 / kappa)
    double kappa1 = 0.0; // 3 exp(-delta^2 / kappa1) for sup_t ||Z||_{H1}
    double kappa2 = 0.0; // c exp(-delta^2 / kappa2) for ||Z||_{L^r(0,T; W1p)}
    double c_moment = 0.0;
    std::optional<int> k0; // empty when r(p) = inf; c_moment is then +inf

    double eta = 0.0;
    double T = 0.0;
    double p = 2.0;
    double r = 0.0;
    int d = 1;
    double s = 0.0;
    double hs_norm = 0.0;
    double c_emb_inf = 0.0;
    double c_emb_rpd2 = 0.0;
    bool embeddings_converged = true;
};

/// Plugs given inputs into the constant formulas. Throws when p lies outside [2, 2d/(d-1)).
TailConstants tail_constants(double eta, double T, double p, int d, double s, double hs_norm, double c_emb_inf,
                             double c_emb_rpd2);

/// Same, with ||Phi||_{L2^{0,s}} and the two embedding surrogates computed on phi's grid.
TailConstants compute_constants(double eta, double T, double p, const KernelOperator& phi,
                                const EmbeddingOptions& emb = {});

double conv_bound(double delta, const TailConstants& c);
double sup_h1_bound(double delta, const TailConstants& c);
double lr_w1p_bound(double delta, const TailConstants& c);

/// One-sided Clopper-Pearson limits for k successes out of n.
double clopper_pearson_upper(long k, long n, double confidence);
double clopper_pearson_lower(long k, long n, double confidence);

struct TailCheckOptions {
    double eta = 1.0;
    double T = 1.0;
    double p = 4.0;
    double dt = 1e-2;
    std::vector<double> deltas; // empty: 8 points over [0.5, 4] sqrt(kappa1)
    long N = 10000;
    std::uint64_t seed = 1;
    std::uint64_t run = 0;
    int workers = 1;
    long batch = 64;
    std::string integrand = "frozen"; // frozen | piecewise (random shift and phase per block)
    int blocks = 4;
    std::optional<Field> profile;     // rescaled to ||xi||_{H1}^2 = eta; default a centred Gaussian
    double confidence = 0.95;          // PASS when the upper limit is below the bound
    double violation_confidence = 0.99; // violation when the lower limit exceeds the bound
    void validate() const;
};

struct TailRow {
    double delta = 0.0;
    std::string bound; // conv_w1p | sup_h1 | lr_w1p
    long exceed = 0;
    double frequency = 0.0;
    double upper = 0.0;
    double lower = 0.0;
    double bound_value = 0.0;
    std::string status; // PASS | WARN
    bool violated = false;
};

struct TailReport {
    TailConstants constants;
    std::vector<TailRow> rows;
    long N = 0;
    bool exact = false; // Z vanishes identically, so frequencies are exact
    int violations = 0;
    int warnings = 0;
};

/**
 * Monte Carlo of Z(t) = sum_k U(t - t_k) xi(t_k) dW_k. Checks
 *   sup_{t0} ||sum_{t_k < t0} U(T - t_k) xi dW_k||_{W1p} against the single-time bound (t = T fixed),
 *   sup_t ||Z(t)||_{H1} and ||Z||_{L^r(0,T; W1p)} against the two tail bounds.
 */
TailReport empirical_tail_check(const KernelOperator& phi, const TailCheckOptions& opts);

} // namespace snls
