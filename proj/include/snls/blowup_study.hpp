#pragma once

#include "snls/girsanov_mc.hpp"
#include "snls/skeleton.hpp"

#include <optional>
#include <string>
#include <vector>

namespace snls {

/// Blow-up time of the deterministic equation at dt and dt/2 (threshold params.R).
struct BlowupTime {
    std::optional<double> tau;      // from the finer run; empty when censored at T
    std::optional<double> tau_coarse;
    double gap = 0.0;               // |tau(dt) - tau(dt/2)|, +inf when only one run blew up
    double dt = 0.0;
    bool censored() const { return !tau.has_value(); }
};

BlowupTime deterministic_blowup_time(const Field& u0, const SimParams& params, const KernelOperator& phi);

struct BlowupOptions {
    MCOptions mc;
    std::optional<ControlPath> control; // IS proposal for tail_before_T
    CancelOptions cancel;
    double nonrare_tol = 0.05;
    double after_slack = 0.5;
};

struct BlowupRow {
    std::size_t u0_index = 0;
    double eps = 0.0;
    MCEstimate estimate;
    double eps_log_p = 0.0; // -inf with no hits; NaN for excluded rows
    bool excluded = false;  // eps = 0: the probability is exactly 0 or 1
    bool needs_is = false;  // no hits at this eps without an IS control
};

struct BeforeReport {
    double T = 0.0;
    std::vector<BlowupTime> deterministic;
    std::vector<BlowupRow> rows;
    std::vector<double> eps;            // positive eps values, in sweep order
    std::vector<double> max_eps_log_p;  // max over u0 per positive eps
    double c_hat = 0.0;                 // -max eps log p over the two smallest eps
    bool pass = false;
};

/**
 * P(tau_R <= T) for each u0 with T below every deterministic blow-up time.
 * Passes when max over u0 of eps log p stays below a negative value over the
 * two smallest eps.
 */
BeforeReport tail_before_T(const std::vector<Field>& u0_set, double T, const std::vector<double>& eps_list,
                           const SimParams& params, const KernelOperator& phi, const BlowupOptions& opts = {});

struct NonRareReport {
    double T = 0.0;
    BlowupTime deterministic;
    std::string event;  // H1Below when T is before blow-up, H1Exceed after
    std::vector<BlowupRow> rows;
    double final_eps_log_p = 0.0; // at the smallest positive eps
    bool pass = false;            // |eps log p| <= tol at the smallest eps
};

/// The likely side of the deterministic blow-up time by naive MC: survival before, blow-up after.
NonRareReport nonrare_limit(const Field& u0, double T, const std::vector<double>& eps_list, const SimParams& params,
                            const KernelOperator& phi, const BlowupOptions& opts = {});

struct AfterReport {
    double T = 0.0;
    BlowupTime deterministic;
    bool rare = true;
    CancelReport cancel;
    double rate_bound = 0.0;     // control energy of the cancelling control
    std::vector<BlowupRow> rows;
    std::vector<double> slack;   // eps log p + rate_bound per row
    std::vector<double> hit_rate; // fraction of shifted paths that survive
    std::optional<NonRareReport> nonrare;
    bool pass = false;
};

/**
 * P(tau_R > T) with T past the deterministic blow-up time, by importance
 * sampling with the cancelling control on [0, T]. Passes when
 * eps log p >= -rate_bound - after_slack at the smallest eps. For T before
 * blow-up the event is not rare and the report carries the nonrare check.
 */
AfterReport tail_after_T(const Field& u0, double T, const std::vector<double>& eps_list, const SimParams& params,
                         const KernelOperator& phi, const BlowupOptions& opts = {});

} // namespace snls
