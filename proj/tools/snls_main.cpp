#include "snls/cli_io.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <utility>

namespace {

struct Common {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON run configuration");
    sub->add_option("--preset", c.preset, "start from a named preset (soliton, quintic1d, cubic2d)");
    sub->add_option("--seed", c.seed, "override the configured seed");
    sub->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", c.out, "output directory");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic NLS simulation and rare-event toolkit"};
    app.require_subcommand(1);
    Common common;
    std::optional<double> cancel_T;
    const std::pair<const char*, const char*> subs[] = {
        {"simulate", "integrate one stochastic trajectory"},
        {"skeleton", "solve the controlled deterministic equation"},
        {"rate", "minimise the control energy over an event"},
        {"mc", "naive or importance-sampled event probabilities"},
        {"tails", "empirical check of the stochastic convolution tail bounds"},
        {"blowup", "blow-up time probabilities before or after the deterministic time"},
    };
    for (const auto& [name, desc] : subs) {
        auto* sub = app.add_subcommand(name, desc);
        add_common(sub, common);
        if (std::string(name) == "skeleton")
            sub->add_option("--cancel-control", cancel_T, "emit the control cancelling the nonlinearity on [0, 2T]");
    }
    CLI11_PARSE(app, argc, argv);
    const std::string name = app.get_subcommands().front()->get_name();

    try {
        nlohmann::json j = nlohmann::json::object();
        if (!common.config.empty()) {
            std::ifstream in(common.config);
            if (!in) throw snls::ConfigError({"cannot open config file " + common.config});
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw snls::ConfigError({common.config + ": " + e.what()});
            }
        }
        if (!common.preset.empty()) {
            if (j.is_object() && j.contains("preset") && j["preset"] != common.preset)
                throw snls::ConfigError({"--preset disagrees with the preset named in the config"});
            j["preset"] = common.preset;
        }
        snls::RunOverrides ov;
        ov.seed = common.seed;
        ov.workers = common.workers;
        ov.output_dir = common.out;
        ov.cancel_T = cancel_T;
        const auto res = snls::run_subcommand(name, snls::parse_config(j), ov);
        std::cout << res.summary.dump(2) << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cout << snls::error_json(name, e).dump(2) << '\n';
        if (dynamic_cast<const snls::ConfigError*>(&e) != nullptr) return 2;
        if (dynamic_cast<const snls::Error*>(&e) != nullptr) return 3;
        return 4;
    }
}
