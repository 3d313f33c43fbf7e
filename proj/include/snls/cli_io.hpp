#pragma once

#include "snls/blowup_study.hpp"
#include "snls/rate_optimizer.hpp"
#include "snls/tail_bounds.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace snls {

/// Rejected configuration; carries every violation found.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const { return violations_; }

private:
    std::vector<std::string> violations_;
};

struct GridConfig {
    int d = 1;
    int n = 256;
    double L = 40.0; // defaults to 40 for d = 1 and 20 otherwise when omitted
};

struct InitialConfig {
    std::string profile = "gaussian"; // soliton | gaussian | plane_wave | file
    double amplitude = 1.0;
    double width = 1.0;
    int m = 1;
    std::string path;
};

struct EventConfig {
    std::string kind = "TubeExit"; // TerminalMatch | TubeExit | H1Exceed | H1Below
    double rho = 1.0;
    std::string norm = "L2";
    std::optional<double> R; // H1 events; default sim.R
    std::optional<double> T; // H1 events; default sim.T
    std::string target_path; // TerminalMatch snapshot
};

struct McConfig {
    long N = 1000;
    long batch = 64;
    std::vector<double> eps{0.5};
    bool early_stop = true;
    bool mirror = false;
    std::string control_path; // IS proposal; empty for naive runs
    std::optional<double> rate; // I* used for the gap column
    std::uint64_t run = 0;
};

struct SkeletonConfig {
    std::string control_path;
    bool snapshots = false;
};

struct TailsConfig {
    double eta = 1.0;
    double T = 1.0;
    double p = 4.0; // defaults to 4, 3, 2.5 for d = 1, 2, 3 when omitted
    double dt = 1e-2;
    std::vector<double> deltas;
    long N = 10000;
    std::string integrand = "frozen";
    int blocks = 4;
    double confidence = 0.95;
    double violation_confidence = 0.99;
    std::uint64_t run = 0;
};

struct BlowupConfig {
    std::string mode = "before"; // before | after | nonrare
    double T = 0.1;
    std::vector<double> eps{0.5, 0.25};
    std::vector<double> amplitudes; // u0 set: u0 scaled by each factor; empty means {1}
    long N = 1000;
    std::string control_path;       // IS proposal for mode before
    double nonrare_tol = 0.05;
    double after_slack = 0.5;
};

struct RunConfig {
    std::string preset;
    GridConfig grid;
    KernelConfig kernel;
    InitialConfig u0;
    SimParams sim;
    EventConfig event;
    RateOptions optimizer;
    McConfig mc;
    SkeletonConfig skeleton;
    TailsConfig tails;
    BlowupConfig blowup;
    std::uint64_t seed = 1;
    int workers = 1;
    std::string output_dir = "out";
};

/// Names accepted by the "preset" key: soliton, quintic1d, cubic2d.
std::vector<std::string> preset_names();
nlohmann::json preset_json(const std::string& name);

/// Strict parse: unknown keys, wrong types and range violations are all collected
/// into one ConfigError. A "preset" key supplies defaults that the other keys override.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
/// Complete echo of every field; parse_config(config_to_json(c)) reproduces c.
nlohmann::json config_to_json(const RunConfig& cfg);

GridPtr make_grid(const RunConfig& cfg);
KernelOperator make_kernel(const RunConfig& cfg, const GridPtr& grid);
Field make_initial(const RunConfig& cfg, const GridPtr& grid);
EventSpec make_event(const RunConfig& cfg, const GridPtr& grid);

/// RFC-4180 field quoting.
std::string csv_escape(const std::string& field);
/// 17 significant digits, so the text reads back to the same double ("inf", "-inf", "nan" for non-finite).
std::string format_double(double x);
void write_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
void write_json(const std::filesystem::path& file, const nlohmann::json& j);

std::string sha256_file(const std::filesystem::path& file);

struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> output_dir;
    std::optional<double> cancel_T; // skeleton: emit the cancelling control on [0, 2T]
};

struct RunResult {
    std::vector<std::filesystem::path> outputs; // relative to the output directory
    nlohmann::json summary;
};

/// Runs one subcommand (simulate, skeleton, rate, mc, tails, blowup) and writes its
/// outputs plus manifest.json into the output directory.
RunResult run_subcommand(const std::string& name, RunConfig cfg, const RunOverrides& overrides = {});

/// Machine-readable error document written on failure.
nlohmann::json error_json(const std::string& subcommand, const std::exception& e);

} // namespace snls
