#pragma once

#include "snls/events.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace snls {

struct MCOptions {
    long N = 1000;
    int workers = 1;
    std::uint64_t seed = 1;
    /// Stream label; trajectory i draws from RandomStream(seed, key(run, eps), i).
    std::uint64_t run = 0;
    long batch = 64;
    /// Stop tube-exit paths once the event is decided. The weight is then the
    /// density at that stopping time, which keeps the estimator unbiased.
    bool early_stop = true;
    bool keep_paths = false;

    void validate() const;
};

struct PathOutcome {
    bool hit = false;
    double weight = 1.0;
    double log_weight = 0.0;
};

struct MCEstimate {
    double p_hat = 0.0;
    double log_p_hat = -INFINITY; // accumulated in the log domain, finite even when p_hat underflows
    double stderr_p = 0.0;
    long N = 0;
    long hits = 0;
    double ess = 0.0;         // (sum L 1)^2 / sum (L 1)^2; equals hits for naive runs
    double eps = 0.0;
    std::string event;
    bool importance = false;
    double weight_mean = 1.0; // mean of L over all paths (1 for naive runs)
    double weight_stderr = 0.0;
    double log_weight_mean = 0.0;
    std::vector<PathOutcome> paths;
};

/// Stream key shared by naive and IS runs at the same eps, so h = 0 replays naive paths.
std::uint64_t mc_stream_key(std::uint64_t run, double eps);

MCEstimate estimate_naive(const EventEvaluator& ev, double eps, const MCOptions& opts);

/**
 * Importance sampling under the shifted dynamics (potential Phi h added in the phase).
 * Each path is weighted by
 *   L = exp(-(1/sqrt eps) sum_k <h_k, dWc_k> - (1/(2 eps)) sum_k ||h_k||^2 dt_k)
 * from the white coordinates that drove it.
 */
MCEstimate estimate_is(const EventEvaluator& ev, double eps, const ControlPath& h, const MCOptions& opts);

/**
 * Mixture importance sampling: path i is driven by components[i mod K] and weighted by
 *   1 / ((1/K) sum_j dP_{h_j}/dP),
 * which stays unbiased when the event has several dominating paths (for instance the
 * mirror pair +h, -h of a symmetric tube exit). With K = 1 this is estimate_is.
 */
MCEstimate estimate_is_mixture(const EventEvaluator& ev, double eps, const std::vector<ControlPath>& components,
                               const MCOptions& opts);

/// log L of one recorded path (exposed for tests).
double girsanov_log_weight(const Trajectory& traj, const ControlPath& h, double eps);
/// log of the mixture weight for a path driven by components[driver].
double mixture_log_weight(const Trajectory& traj, const std::vector<ControlPath>& components, std::size_t driver,
                          double eps);

struct LdpRow {
    double eps = 0.0;
    MCEstimate estimate;
    double eps_log_p = 0.0;   // -inf when p_hat = 0
    double gap = 0.0;         // |eps log p + I*|
    bool degenerate_ess = false;
};

/// IS estimates over a decreasing eps list (naive when h_star is empty). With
/// `mirror` the proposal is the {h*, -h*} mixture.
std::vector<LdpRow> ldp_curve(const EventEvaluator& ev, const std::optional<ControlPath>& h_star, double rate,
                              const std::vector<double>& eps_list, const MCOptions& opts, bool mirror = false);

} // namespace snls
