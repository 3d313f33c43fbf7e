#include "snls/cli_io.hpp"

#include "snls/field_io.hpp"

#include <boost/version.hpp>
#include <fftw3.h>
#include <openssl/crypto.h>
#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

namespace snls {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join_lines(const std::vector<std::string>& v) {
    std::ostringstream os;
    os << "invalid configuration:";
    for (const auto& s : v) os << "\n  - " << s;
    return os.str();
}

// Strict reader over one JSON object: every key must be consumed, every value must have the right type.
class Reader {
public:
    Reader(const json& j, std::string path, std::vector<std::string>& errs)
        : j_(j), path_(std::move(path)), errs_(errs) {
        if (!j_.is_object()) errs_.push_back(path_ + ": expected an object");
    }
    Reader(const Reader&) = delete;

    ~Reader() {
        if (!j_.is_object()) return;
        for (const auto& item : j_.items())
            if (!used_.count(item.key())) errs_.push_back(where(item.key()) + ": unknown key");
    }

    bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

    void get(const std::string& key, double& out) {
        if (const json* v = take(key)) {
            if (v->is_number())
                out = v->get<double>();
            else
                bad(key, "a number");
        }
    }
    void get(const std::string& key, int& out) {
        if (const json* v = take(key)) {
            if (v->is_number_integer())
                out = v->get<int>();
            else
                bad(key, "an integer");
        }
    }
    void get(const std::string& key, long& out) {
        if (const json* v = take(key)) {
            if (v->is_number_integer())
                out = v->get<long>();
            else
                bad(key, "an integer");
        }
    }
    void get(const std::string& key, std::uint64_t& out) {
        if (const json* v = take(key)) {
            if (v->is_number_unsigned() || (v->is_number_integer() && v->get<long long>() >= 0))
                out = v->get<std::uint64_t>();
            else
                bad(key, "a non-negative integer");
        }
    }
    void get(const std::string& key, bool& out) {
        if (const json* v = take(key)) {
            if (v->is_boolean())
                out = v->get<bool>();
            else
                bad(key, "true or false");
        }
    }
    void get(const std::string& key, std::string& out) {
        if (const json* v = take(key)) {
            if (v->is_string())
                out = v->get<std::string>();
            else
                bad(key, "a string");
        }
    }
    void get(const std::string& key, std::vector<double>& out) {
        if (const json* v = take(key)) {
            bool ok = v->is_array();
            if (ok)
                for (const auto& x : *v) ok = ok && x.is_number();
            if (ok)
                out = v->get<std::vector<double>>();
            else
                bad(key, "an array of numbers");
        }
    }
    void get(const std::string& key, std::optional<double>& out) {
        if (const json* v = take(key)) {
            if (v->is_null())
                out.reset();
            else if (v->is_number())
                out = v->get<double>();
            else
                bad(key, "a number or null");
        }
    }

    const json& sub(const std::string& key) {
        static const json empty = json::object();
        const json* v = take(key);
        return v != nullptr ? *v : empty;
    }
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json* take(const std::string& key) {
        used_.insert(key);
        if (!j_.is_object() || !j_.contains(key)) return nullptr;
        return &j_.at(key);
    }
    void bad(const std::string& key, const char* what) { errs_.push_back(where(key) + ": expected " + what); }

    const json& j_;
    std::string path_;
    std::vector<std::string>& errs_;
    std::set<std::string> used_;
};

void check_decreasing(const std::vector<double>& eps, bool allow_zero, const std::string& where,
                      std::vector<std::string>& errs) {
    if (eps.empty()) errs.push_back(where + ": needs at least one value");
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const bool ok = allow_zero ? eps[i] >= 0.0 : eps[i] > 0.0;
        if (!ok || !std::isfinite(eps[i])) {
            errs.push_back(where + ": values must be finite and " + (allow_zero ? ">= 0" : "> 0"));
            break;
        }
        if (i > 0 && !(eps[i] < eps[i - 1])) {
            errs.push_back(where + ": values must be strictly decreasing");
            break;
        }
    }
}

template <class F>
void collect(std::vector<std::string>& errs, const std::string& where, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        errs.push_back(where + ": " + e.what());
    }
}

void validate(const RunConfig& c, std::vector<std::string>& errs) {
    const int d = c.grid.d;
    collect(errs, "grid", [&] { Grid(c.grid.d, c.grid.n, c.grid.L); });

    const auto& k = c.kernel;
    if (k.form != "convolution" && k.form != "explicit" && k.form != "rank_r")
        errs.push_back("kernel.form: must be convolution, explicit or rank_r");
    if (k.form == "convolution" && k.profile != "gaussian" && k.profile != "bessel")
        errs.push_back("kernel.profile: must be gaussian or bessel");
    if (!(k.s > d / 4.0 + 1.0))
        errs.push_back("kernel.s: the noise needs s > d/4 + 1 (" + format_double(d / 4.0 + 1.0) + " for d = " +
                       std::to_string(d) + ")");
    if (!(k.length_scale > 0.0)) errs.push_back("kernel.length_scale: must be > 0");
    if (!std::isfinite(k.amplitude)) errs.push_back("kernel.amplitude: must be finite");
    if (!(k.pinv_cutoff > 0.0 && k.pinv_cutoff < 1.0)) errs.push_back("kernel.pinv_cutoff: must lie in (0, 1)");
    if (k.form == "explicit" && k.matrix_path.empty()) errs.push_back("kernel.matrix_path: required for explicit kernels");
    if (k.form == "rank_r" && k.pairs_path.empty()) errs.push_back("kernel.pairs_path: required for rank_r kernels");

    const auto& u = c.u0;
    if (u.profile != "soliton" && u.profile != "gaussian" && u.profile != "plane_wave" && u.profile != "file")
        errs.push_back("u0.profile: must be soliton, gaussian, plane_wave or file");
    if (!(u.width > 0.0)) errs.push_back("u0.width: must be > 0");
    if (!std::isfinite(u.amplitude)) errs.push_back("u0.amplitude: must be finite");
    if (u.profile == "file" && u.path.empty()) errs.push_back("u0.path: required for profile file");
    if (u.profile == "plane_wave" && (u.m < 0 || u.m >= c.grid.n / 2))
        errs.push_back("u0.m: plane wave index must lie in [0, n/2)");

    for (const auto& e : c.sim.violations(d)) errs.push_back("sim: " + e);

    const auto& ev = c.event;
    std::optional<EventSpec::Kind> kind;
    collect(errs, "event.kind", [&] { kind = parse_event_kind(ev.kind); });
    collect(errs, "event.norm", [&] { (void)NormKind::parse(ev.norm); });
    if (kind && (*kind == EventSpec::Kind::TubeExit || *kind == EventSpec::Kind::TerminalMatch) && !(ev.rho > 0.0))
        errs.push_back("event.rho: must be > 0");
    if (kind && *kind == EventSpec::Kind::TerminalMatch && ev.target_path.empty())
        errs.push_back("event.target_path: required for TerminalMatch");
    if (ev.R && !(*ev.R > 0.0)) errs.push_back("event.R: must be > 0");
    if (ev.T && !(*ev.T > 0.0)) errs.push_back("event.T: must be > 0");

    collect(errs, "optimizer", [&] { c.optimizer.validate(); });

    if (c.mc.N < 100) errs.push_back("mc.N: must be >= 100");
    if (c.mc.batch < 1) errs.push_back("mc.batch: must be >= 1");
    check_decreasing(c.mc.eps, false, "mc.eps", errs);
    if (c.mc.mirror && c.mc.control_path.empty()) errs.push_back("mc.mirror: needs mc.control_path");
    if (c.mc.rate && !(*c.mc.rate >= 0.0)) errs.push_back("mc.rate: must be >= 0");

    const auto& t = c.tails;
    const double p_max = d == 1 ? INFINITY : 2.0 * d / (d - 1.0);
    if (!(t.p >= 2.0 && t.p < p_max && std::isfinite(t.p)))
        errs.push_back("tails.p: p = " + format_double(t.p) + " is not admissible; the Strichartz pair needs 2 <= p < " +
                       (d == 1 ? std::string("inf") : format_double(p_max)) + " = 2d/(d-1) for d = " +
                       std::to_string(d));
    collect(errs, "tails", [&] {
        TailCheckOptions o;
        o.eta = t.eta;
        o.T = t.T;
        o.p = std::isfinite(t.p) && t.p >= 2.0 ? t.p : 2.0;
        o.dt = t.dt;
        o.deltas = t.deltas;
        o.N = t.N;
        o.integrand = t.integrand;
        o.blocks = t.blocks;
        o.confidence = t.confidence;
        o.violation_confidence = t.violation_confidence;
        o.workers = c.workers >= 1 ? c.workers : 1;
        o.validate();
    });

    const auto& b = c.blowup;
    if (b.mode != "before" && b.mode != "after" && b.mode != "nonrare")
        errs.push_back("blowup.mode: must be before, after or nonrare");
    if (!(b.T > 0.0)) errs.push_back("blowup.T: must be > 0");
    check_decreasing(b.eps, true, "blowup.eps", errs);
    for (double a : b.amplitudes)
        if (!(a > 0.0) || !std::isfinite(a)) {
            errs.push_back("blowup.amplitudes: factors must be finite and > 0");
            break;
        }
    if (b.N < 100) errs.push_back("blowup.N: must be >= 100");
    if (!(b.nonrare_tol > 0.0)) errs.push_back("blowup.nonrare_tol: must be > 0");
    if (!(b.after_slack >= 0.0)) errs.push_back("blowup.after_slack: must be >= 0");

    if (c.workers < 1) errs.push_back("workers: must be >= 1");
    if (c.output_dir.empty()) errs.push_back("output_dir: must not be empty");
}

json jnum(double x) {
    if (std::isfinite(x)) return x;
    return format_double(x);
}

json jopt(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

json sim_json(const SimParams& s) {
    return {{"lambda", s.lambda},         {"sigma", s.sigma},         {"eps", s.eps},
            {"dt", s.dt},                 {"T", s.T},                 {"R", s.R},
            {"p", jnum(s.p)},             {"dealias", s.dealias},     {"record_every", s.record_every},
            {"monitor_wp", s.monitor_wp}, {"wp_trigger", s.wp_trigger}};
}

} // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : Error(join_lines(violations)), violations_(std::move(violations)) {}

std::vector<std::string> preset_names() { return {"soliton", "quintic1d", "cubic2d"}; }

json preset_json(const std::string& name) {
    if (name == "soliton")
        return {{"grid", {{"d", 1}, {"n", 512}, {"L", 40.0}}},
                {"kernel", {{"profile", "gaussian"}, {"length_scale", 1.0}, {"amplitude", 0.3}, {"s", 2.0}}},
                {"u0", {{"profile", "soliton"}, {"amplitude", 1.0}}},
                {"sim", {{"lambda", 1}, {"sigma", 1.0}, {"dt", 1e-3}, {"T", 1.0}, {"R", 1e3}, {"record_every", 10}}}};
    if (name == "quintic1d")
        return {{"grid", {{"d", 1}, {"n", 128}, {"L", 20.0}}},
                {"kernel", {{"profile", "gaussian"}, {"length_scale", 1.0}, {"amplitude", 4.0}, {"s", 2.0}}},
                {"u0", {{"profile", "gaussian"}, {"amplitude", 1.8}, {"width", 1.0}}},
                {"sim", {{"lambda", 1}, {"sigma", 2.0}, {"dt", 2e-3}, {"T", 0.3}, {"R", 11.4}}},
                {"event", {{"kind", "H1Exceed"}, {"T", 0.1}}},
                {"optimizer", {{"modes", 15}, {"time_blocks", 1}, {"generations", 60}, {"step0", 1.0}, {"margin_band", 0.02}}},
                {"blowup", {{"mode", "before"}, {"T", 0.1}, {"eps", {0.5, 0.25}}, {"N", 400}}}};
    if (name == "cubic2d")
        return {{"grid", {{"d", 2}, {"n", 64}, {"L", 10.0}}},
                {"kernel", {{"profile", "bessel"}, {"length_scale", 1.0}, {"amplitude", 1.0}, {"s", 2.0}}},
                {"u0", {{"profile", "gaussian"}, {"amplitude", 3.0}, {"width", 1.0}}},
                {"sim", {{"lambda", 1}, {"sigma", 1.0}, {"dt", 2e-3}, {"T", 0.6}, {"R", 26.0}}},
                {"blowup", {{"mode", "after"}, {"T", 0.6}, {"eps", {0.5, 0.25, 0.125}}, {"N", 100}}}};
    throw Error("unknown preset '" + name + "'");
}

RunConfig parse_config(const json& input) {
    std::vector<std::string> errs;
    json j = input;
    RunConfig c;
    if (j.is_object() && j.contains("preset")) {
        if (!j["preset"].is_string()) {
            errs.push_back("preset: expected a string");
        } else {
            c.preset = j["preset"].get<std::string>();
            try {
                json merged = preset_json(c.preset);
                merged.merge_patch(j);
                j = std::move(merged);
            } catch (const Error& e) {
                errs.push_back(std::string("preset: ") + e.what());
            }
        }
    }
    {
        Reader top(j, "", errs);
        std::string preset;
        top.get("preset", preset);
        {
            Reader r(top.sub("grid"), "grid", errs);
            r.get("d", c.grid.d);
            r.get("n", c.grid.n);
            c.grid.L = c.grid.d == 1 ? 40.0 : 20.0;
            r.get("L", c.grid.L);
        }
        {
            Reader r(top.sub("kernel"), "kernel", errs);
            auto& k = c.kernel;
            r.get("form", k.form);
            r.get("profile", k.profile);
            r.get("length_scale", k.length_scale);
            r.get("amplitude", k.amplitude);
            r.get("s", k.s);
            r.get("matrix_path", k.matrix_path);
            r.get("pairs_path", k.pairs_path);
            r.get("pinv_cutoff", k.pinv_cutoff);
        }
        {
            Reader r(top.sub("u0"), "u0", errs);
            r.get("profile", c.u0.profile);
            r.get("amplitude", c.u0.amplitude);
            r.get("width", c.u0.width);
            r.get("m", c.u0.m);
            r.get("path", c.u0.path);
        }
        {
            Reader r(top.sub("sim"), "sim", errs);
            auto& s = c.sim;
            r.get("lambda", s.lambda);
            r.get("sigma", s.sigma);
            r.get("eps", s.eps);
            r.get("dt", s.dt);
            r.get("T", s.T);
            r.get("R", s.R);
            if (r.has("p") && top.sub("sim").at("p").is_string()) {
                std::string text;
                r.get("p", text);
                if (text == "inf")
                    s.p = INFINITY;
                else
                    errs.push_back("sim.p: expected a number or \"inf\"");
            } else {
                r.get("p", s.p);
            }
            r.get("dealias", s.dealias);
            r.get("record_every", s.record_every);
            r.get("monitor_wp", s.monitor_wp);
            r.get("wp_trigger", s.wp_trigger);
        }
        {
            Reader r(top.sub("event"), "event", errs);
            auto& e = c.event;
            r.get("kind", e.kind);
            r.get("rho", e.rho);
            r.get("norm", e.norm);
            r.get("R", e.R);
            r.get("T", e.T);
            r.get("target_path", e.target_path);
        }
        {
            Reader r(top.sub("optimizer"), "optimizer", errs);
            auto& o = c.optimizer;
            r.get("method", o.method);
            r.get("modes", o.modes);
            r.get("time_blocks", o.time_blocks);
            r.get("population", o.population);
            r.get("generations", o.generations);
            r.get("step0", o.step0);
            r.get("penalty0", o.penalty0);
            r.get("penalty_growth", o.penalty_growth);
            r.get("stage_length", o.stage_length);
            r.get("margin_band", o.margin_band);
            r.get("polish", o.polish);
            r.get("polish_steps", o.polish_steps);
            r.get("fd_step", o.fd_step);
        }
        {
            Reader r(top.sub("mc"), "mc", errs);
            auto& m = c.mc;
            r.get("N", m.N);
            r.get("batch", m.batch);
            r.get("eps", m.eps);
            r.get("early_stop", m.early_stop);
            r.get("mirror", m.mirror);
            r.get("control_path", m.control_path);
            r.get("rate", m.rate);
            r.get("run", m.run);
        }
        {
            Reader r(top.sub("skeleton"), "skeleton", errs);
            r.get("control_path", c.skeleton.control_path);
            r.get("snapshots", c.skeleton.snapshots);
        }
        {
            Reader r(top.sub("tails"), "tails", errs);
            auto& t = c.tails;
            r.get("eta", t.eta);
            r.get("T", t.T);
            t.p = c.grid.d == 1 ? 4.0 : c.grid.d == 2 ? 3.0 : 2.5;
            r.get("p", t.p);
            r.get("dt", t.dt);
            r.get("deltas", t.deltas);
            r.get("N", t.N);
            r.get("integrand", t.integrand);
            r.get("blocks", t.blocks);
            r.get("confidence", t.confidence);
            r.get("violation_confidence", t.violation_confidence);
            r.get("run", t.run);
        }
        {
            Reader r(top.sub("blowup"), "blowup", errs);
            auto& b = c.blowup;
            r.get("mode", b.mode);
            r.get("T", b.T);
            r.get("eps", b.eps);
            r.get("amplitudes", b.amplitudes);
            r.get("N", b.N);
            r.get("control_path", b.control_path);
            r.get("nonrare_tol", b.nonrare_tol);
            r.get("after_slack", b.after_slack);
        }
        top.get("seed", c.seed);
        top.get("workers", c.workers);
        top.get("output_dir", c.output_dir);
    }
    validate(c, errs);
    if (!errs.empty()) throw ConfigError(std::move(errs));
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file " + path.string()});
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({path.string() + ": " + e.what()});
    }
    return parse_config(j);
}

json config_to_json(const RunConfig& c) {
    json j;
    if (!c.preset.empty()) j["preset"] = c.preset;
    j["grid"] = {{"d", c.grid.d}, {"n", c.grid.n}, {"L", c.grid.L}};
    const auto& k = c.kernel;
    j["kernel"] = {{"form", k.form},         {"profile", k.profile},       {"length_scale", k.length_scale},
                   {"amplitude", k.amplitude}, {"s", k.s},                 {"matrix_path", k.matrix_path},
                   {"pairs_path", k.pairs_path}, {"pinv_cutoff", k.pinv_cutoff}};
    j["u0"] = {{"profile", c.u0.profile}, {"amplitude", c.u0.amplitude}, {"width", c.u0.width}, {"m", c.u0.m},
               {"path", c.u0.path}};
    j["sim"] = sim_json(c.sim);
    const auto& e = c.event;
    j["event"] = {{"kind", e.kind}, {"rho", e.rho}, {"norm", e.norm}, {"R", jopt(e.R)}, {"T", jopt(e.T)},
                  {"target_path", e.target_path}};
    const auto& o = c.optimizer;
    j["optimizer"] = {{"method", o.method},
                      {"modes", o.modes},
                      {"time_blocks", o.time_blocks},
                      {"population", o.population},
                      {"generations", o.generations},
                      {"step0", o.step0},
                      {"penalty0", o.penalty0},
                      {"penalty_growth", o.penalty_growth},
                      {"stage_length", o.stage_length},
                      {"margin_band", o.margin_band},
                      {"polish", o.polish},
                      {"polish_steps", o.polish_steps},
                      {"fd_step", o.fd_step}};
    const auto& m = c.mc;
    j["mc"] = {{"N", m.N},           {"batch", m.batch},   {"eps", m.eps},           {"early_stop", m.early_stop},
               {"mirror", m.mirror}, {"rate", jopt(m.rate)}, {"control_path", m.control_path}, {"run", m.run}};
    j["skeleton"] = {{"control_path", c.skeleton.control_path}, {"snapshots", c.skeleton.snapshots}};
    const auto& t = c.tails;
    j["tails"] = {{"eta", t.eta},
                  {"T", t.T},
                  {"p", t.p},
                  {"dt", t.dt},
                  {"deltas", t.deltas},
                  {"N", t.N},
                  {"integrand", t.integrand},
                  {"blocks", t.blocks},
                  {"confidence", t.confidence},
                  {"violation_confidence", t.violation_confidence},
                  {"run", t.run}};
    const auto& b = c.blowup;
    j["blowup"] = {{"mode", b.mode},
                   {"T", b.T},
                   {"eps", b.eps},
                   {"amplitudes", b.amplitudes},
                   {"N", b.N},
                   {"control_path", b.control_path},
                   {"nonrare_tol", b.nonrare_tol},
                   {"after_slack", b.after_slack}};
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["output_dir"] = c.output_dir;
    return j;
}

GridPtr make_grid(const RunConfig& cfg) { return Grid::make(cfg.grid.d, cfg.grid.n, cfg.grid.L); }

KernelOperator make_kernel(const RunConfig& cfg, const GridPtr& grid) {
    return KernelOperator::from_config(grid, cfg.kernel);
}

Field make_initial(const RunConfig& cfg, const GridPtr& grid) {
    const auto& spec = cfg.u0;
    if (spec.profile == "file") return read_snapshot(spec.path, grid).field;
    Field u(grid);
    const double c = grid->length() / 2;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const auto idx = grid->unflatten(i);
        double r2 = 0.0;
        for (int a = 0; a < grid->dim(); ++a) r2 += std::pow(grid->coordinate(idx[a]) - c, 2);
        if (spec.profile == "soliton") {
            // a sqrt2 sech(a x): the cubic focusing soliton with frequency a^2 in d = 1
            const double a = spec.amplitude;
            u.values[i] = a * std::sqrt(2.0) / std::cosh(a * std::sqrt(r2));
        } else if (spec.profile == "gaussian") {
            u.values[i] = spec.amplitude * std::exp(-r2 / (spec.width * spec.width));
        } else if (spec.profile == "plane_wave") {
            u.values[i] = spec.amplitude * std::polar(1.0, grid->wavenumber(spec.m) * grid->coordinate(idx[0]));
        } else {
            throw Error("unknown u0 profile '" + spec.profile + "'");
        }
    }
    return u;
}

EventSpec make_event(const RunConfig& cfg, const GridPtr& grid) {
    const auto& e = cfg.event;
    const NormKind norm = NormKind::parse(e.norm);
    switch (parse_event_kind(e.kind)) {
    case EventSpec::Kind::TerminalMatch:
        return EventSpec::terminal_match(read_snapshot(e.target_path, grid).field, e.rho, norm);
    case EventSpec::Kind::TubeExit:
        return EventSpec::tube_exit(e.rho, norm);
    case EventSpec::Kind::H1Exceed:
        return EventSpec::h1_exceed(e.R.value_or(cfg.sim.R), e.T.value_or(cfg.sim.T));
    case EventSpec::Kind::H1Below:
        return EventSpec::h1_below(e.R.value_or(cfg.sim.R), e.T.value_or(cfg.sim.T));
    }
    throw Error("unknown event kind");
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_csv(const fs::path& file, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_escape(cells[i]);
        out << "\r\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
}

void write_json(const fs::path& file, const json& j) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

std::string sha256_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot read " + file.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string hex;
    char h[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(h, sizeof h, "%02x", md[i]);
        hex += h;
    }
    return hex;
}

namespace {

using Rows = std::vector<std::vector<std::string>>;

struct Outputs {
    fs::path dir;
    std::vector<fs::path> files;

    fs::path add(const std::string& name) {
        files.emplace_back(name);
        return dir / name;
    }
    // Control and snapshot files come as a sidecar plus a binary.
    fs::path add_pair(const std::string& base) {
        files.emplace_back(base + ".json");
        files.emplace_back(base + ".bin");
        return dir / base;
    }
};

Rows trajectory_rows(const Trajectory& tr) {
    Rows rows;
    for (std::size_t i = 0; i < tr.times.size(); ++i)
        rows.push_back({format_double(tr.times[i]), format_double(tr.mass[i]), format_double(tr.h1norm[i]),
                        format_double(tr.hamiltonian[i])});
    return rows;
}

const std::vector<std::string> trajectory_header{"t", "mass", "h1", "hamiltonian"};

json trajectory_summary(const Trajectory& tr) {
    return {{"tauR", tr.tauR ? json(*tr.tauR) : json(nullptr)},
            {"censored", !tr.tauR.has_value()},
            {"guard_triggered", tr.guard_triggered},
            {"final_time", tr.final_time},
            {"final_mass", tr.mass.empty() ? 0.0 : tr.mass.back()},
            {"mass_drift", tr.mass.empty() ? 0.0 : std::abs(tr.mass.back() - tr.mass.front()) / tr.mass.front()}};
}

void write_snapshots(Outputs& out, const Trajectory& tr) {
    for (std::size_t i = 0; i < tr.snapshots.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "snapshot_%05zu", i);
        write_snapshot(out.add_pair(name), tr.snapshots[i], tr.snapshot_times[i]);
    }
}

json run_simulate(const RunConfig& cfg, Outputs& out) {
    const auto grid = make_grid(cfg);
    const auto phi = make_kernel(cfg, grid);
    const Field u0 = make_initial(cfg, grid);
    cfg.sim.validate(grid->dim(), norm(u0, NormKind::h1()));
    RandomStream rng(cfg.seed, hash_label("simulate"), 0);
    SimulateOptions so;
    so.keep_snapshots = cfg.skeleton.snapshots;
    const Trajectory tr = simulate(u0, cfg.sim, phi, nullptr, rng, so);
    write_csv(out.add("trajectory.csv"), trajectory_header, trajectory_rows(tr));
    write_snapshots(out, tr);
    json s = trajectory_summary(tr);
    s["params"] = sim_json(cfg.sim);
    write_json(out.add("summary.json"), s);
    return s;
}

json run_skeleton(const RunConfig& cfg, const RunOverrides& ov, Outputs& out) {
    const auto grid = make_grid(cfg);
    const auto phi = make_kernel(cfg, grid);
    const Field u0 = make_initial(cfg, grid);
    json s;
    if (ov.cancel_T) {
        const double T = *ov.cancel_T;
        if (!(T > 0.0)) throw Error("--cancel-control needs T > 0");
        SimParams p = cfg.sim;
        p.eps = 0.0;
        p.T = 2.0 * T;
        const CancelControl cc = cancel_nonlinearity_control(u0, T, phi, p);
        write_control(out.add_pair("cancel_control"), cc.h);
        SimulateOptions so;
        so.keep_snapshots = true;
        const Trajectory tr = skeleton_solve(u0, &cc.h, p, phi, so);
        write_csv(out.add("trajectory.csv"), trajectory_header, trajectory_rows(tr));
        json res = json::array();
        for (double r : cc.report.residuals) res.push_back(r);
        s = trajectory_summary(tr);
        s["cancel"] = {{"T", T},
                       {"residuals", res},
                       {"max_residual", cc.report.max_residual},
                       {"threshold", cc.report.threshold},
                       {"status", cc.report.status},
                       {"free_evolution_residual_h1", free_evolution_residual(u0, tr)},
                       {"energy", control_energy(cc.h)},
                       {"rate", wiener_rate(cc.h, phi)}};
        write_json(out.add("cancel_report.json"), s);
        return s;
    }
    std::optional<ControlPath> h;
    if (!cfg.skeleton.control_path.empty()) h = read_control(cfg.skeleton.control_path, grid);
    SimulateOptions so;
    so.keep_snapshots = cfg.skeleton.snapshots;
    SimParams p = cfg.sim;
    p.eps = 0.0;
    const Trajectory tr = skeleton_solve(u0, h ? &*h : nullptr, p, phi, so);
    write_csv(out.add("trajectory.csv"), trajectory_header, trajectory_rows(tr));
    write_snapshots(out, tr);
    s = trajectory_summary(tr);
    s["energy"] = h ? control_energy(*h) : 0.0;
    s["rate"] = h ? wiener_rate(*h, phi) : 0.0;
    s["params"] = sim_json(p);
    write_json(out.add("summary.json"), s);
    return s;
}

json run_rate(const RunConfig& cfg, Outputs& out) {
    const auto grid = make_grid(cfg);
    const auto phi = make_kernel(cfg, grid);
    const Field u0 = make_initial(cfg, grid);
    const EventSpec ev = make_event(cfg, grid);
    SimParams p = cfg.sim;
    if (ev.blowup_kind()) p.T = ev.T;
    RateOptions ro = cfg.optimizer;
    ro.seed = cfg.seed;
    ro.workers = cfg.workers;
    const RateCertificate cert = minimize_rate(u0, ev, p, phi, ro);
    json s = {{"event", ev.describe()},
              {"energy", cert.energy},
              {"event_satisfied", cert.event_satisfied},
              {"margin", cert.margin},
              {"solver",
               {{"method", cert.report.method},
                {"iterations", cert.report.iterations},
                {"evaluations", cert.report.evaluations},
                {"penalty_schedule", cert.report.penalty_schedule},
                {"final_violation", cert.report.final_violation},
                {"final_step", cert.report.final_step},
                {"polish_scale", cert.report.polish_scale}}}};
    if (!cert.h_star.values.empty()) {
        write_control(out.add_pair("h_star"), cert.h_star);
        s["control"] = "h_star.json";
        const CertificateCheck chk = rate_certificate_check(cert, u0, ev, p, phi);
        s["check"] = {{"pass", chk.pass}, {"energy", chk.energy}, {"margin", chk.margin}, {"dt", chk.dt},
                      {"n", chk.n},       {"detail", chk.detail}};
    }
    write_json(out.add("certificate.json"), s);
    return s;
}

std::vector<std::string> estimate_cells(const MCEstimate& e) {
    return {std::to_string(e.N),           std::to_string(e.hits),         format_double(e.p_hat),
            format_double(e.stderr_p),     format_double(e.log_p_hat),     format_double(e.ess),
            format_double(e.weight_mean),  format_double(e.weight_stderr)};
}

const std::vector<std::string> estimate_header{"N",   "hits",        "p_hat",        "stderr",
                                               "log_p_hat", "ess", "weight_mean", "weight_stderr"};

json run_mc(const RunConfig& cfg, Outputs& out) {
    const auto grid = make_grid(cfg);
    const auto phi = make_kernel(cfg, grid);
    const Field u0 = make_initial(cfg, grid);
    const EventEvaluator ev(make_event(cfg, grid), u0, cfg.sim, phi);
    std::optional<ControlPath> h;
    if (!cfg.mc.control_path.empty()) h = read_control(cfg.mc.control_path, grid);
    MCOptions mo;
    mo.N = cfg.mc.N;
    mo.batch = cfg.mc.batch;
    mo.early_stop = cfg.mc.early_stop;
    mo.run = cfg.mc.run;
    mo.seed = cfg.seed;
    mo.workers = cfg.workers;
    const double rate = cfg.mc.rate.value_or(NAN);
    const auto rows = ldp_curve(ev, h, rate, cfg.mc.eps, mo, cfg.mc.mirror);

    std::vector<std::string> header{"eps"};
    header.insert(header.end(), estimate_header.begin(), estimate_header.end());
    header.insert(header.end(), {"eps_log_p", "gap", "degenerate_ess"});
    Rows csv;
    json jr = json::array();
    for (const auto& r : rows) {
        std::vector<std::string> cells{format_double(r.eps)};
        const auto ec = estimate_cells(r.estimate);
        cells.insert(cells.end(), ec.begin(), ec.end());
        cells.insert(cells.end(), {format_double(r.eps_log_p), format_double(r.gap), r.degenerate_ess ? "1" : "0"});
        csv.push_back(std::move(cells));
        jr.push_back({{"eps", r.eps},
                      {"p_hat", r.estimate.p_hat},
                      {"stderr", r.estimate.stderr_p},
                      {"eps_log_p", jnum(r.eps_log_p)},
                      {"gap", jnum(r.gap)},
                      {"ess", r.estimate.ess},
                      {"weight_mean", r.estimate.weight_mean},
                      {"degenerate_ess", r.degenerate_ess}});
    }
    write_csv(out.add("mc.csv"), header, csv);
    json s = {{"event", ev.spec().describe()},
              {"importance", h.has_value()},
              {"mirror", cfg.mc.mirror},
              {"rows", jr}};
    if (cfg.mc.rate) {
        s["certificate_comparison"] = {{"rate", *cfg.mc.rate},
                                       {"final_eps_log_p", jnum(rows.back().eps_log_p)},
                                       {"final_gap", jnum(rows.back().gap)},
                                       {"relative_gap", *cfg.mc.rate > 0.0 ? jnum(rows.back().gap / *cfg.mc.rate)
                                                                          : json(nullptr)}};
    }
    write_json(out.add("summary.json"), s);
    return s;
}

json run_tails(const RunConfig& cfg, Outputs& out) {
    const auto grid = make_grid(cfg);
    const auto phi = make_kernel(cfg, grid);
    TailCheckOptions o;
    const auto& t = cfg.tails;
    o.eta = t.eta;
    o.T = t.T;
    o.p = t.p;
    o.dt = t.dt;
    o.deltas = t.deltas;
    o.N = t.N;
    o.integrand = t.integrand;
    o.blocks = t.blocks;
    o.confidence = t.confidence;
    o.violation_confidence = t.violation_confidence;
    o.run = t.run;
    o.seed = cfg.seed;
    o.workers = cfg.workers;
    const TailReport rep = empirical_tail_check(phi, o);
    const auto& k = rep.constants;
    json constants = {{"kappa", k.kappa},
                      {"kappa1", k.kappa1},
                      {"kappa2", k.kappa2},
                      {"c_moment", jnum(k.c_moment)},
                      {"k0", k.k0 ? json(*k.k0) : json(nullptr)},
                      {"eta", k.eta},
                      {"T", k.T},
                      {"p", k.p},
                      {"r", jnum(k.r)},
                      {"d", k.d},
                      {"s", k.s},
                      {"hs_norm", k.hs_norm},
                      {"c_emb_inf", k.c_emb_inf},
                      {"c_emb_rpd2", k.c_emb_rpd2},
                      {"embeddings_converged", k.embeddings_converged}};
    Rows csv;
    for (const auto& r : rep.rows)
        csv.push_back({format_double(r.delta), r.bound, std::to_string(r.exceed), format_double(r.frequency),
                       format_double(r.lower), format_double(r.upper), format_double(r.bound_value), r.status,
                       r.violated ? "1" : "0"});
    write_csv(out.add("tails.csv"),
              {"delta", "bound", "exceed", "frequency", "lower", "upper", "bound_value", "status", "violated"}, csv);
    json s = {{"constants", constants},
              {"N", rep.N},
              {"exact", rep.exact},
              {"violations", rep.violations},
              {"warnings", rep.warnings}};
    write_json(out.add("tails_constants.json"), s);
    return s;
}

json blowup_time_json(const BlowupTime& b) {
    return {{"tau", b.tau ? json(*b.tau) : json(nullptr)},
            {"tau_coarse", b.tau_coarse ? json(*b.tau_coarse) : json(nullptr)},
            {"gap", jnum(b.gap)},
            {"dt", b.dt}};
}

Rows blowup_rows(const std::vector<BlowupRow>& rows) {
    Rows csv;
    for (const auto& r : rows) {
        std::vector<std::string> cells{std::to_string(r.u0_index), format_double(r.eps)};
        const auto ec = estimate_cells(r.estimate);
        cells.insert(cells.end(), ec.begin(), ec.end());
        cells.insert(cells.end(), {format_double(r.eps_log_p), r.excluded ? "1" : "0", r.needs_is ? "1" : "0"});
        csv.push_back(std::move(cells));
    }
    return csv;
}

std::vector<std::string> blowup_header() {
    std::vector<std::string> h{"u0_index", "eps"};
    h.insert(h.end(), estimate_header.begin(), estimate_header.end());
    h.insert(h.end(), {"eps_log_p", "excluded", "needs_is"});
    return h;
}

json nonrare_json(const NonRareReport& r) {
    return {{"T", r.T},
            {"deterministic", blowup_time_json(r.deterministic)},
            {"event", r.event},
            {"final_eps_log_p", jnum(r.final_eps_log_p)},
            {"pass", r.pass}};
}

json run_blowup(const RunConfig& cfg, Outputs& out) {
    const auto grid = make_grid(cfg);
    const auto phi = make_kernel(cfg, grid);
    const Field u0 = make_initial(cfg, grid);
    const auto& b = cfg.blowup;
    BlowupOptions o;
    o.mc.N = b.N;
    o.mc.batch = cfg.mc.batch;
    o.mc.seed = cfg.seed;
    o.mc.workers = cfg.workers;
    o.mc.run = cfg.mc.run;
    o.nonrare_tol = b.nonrare_tol;
    o.after_slack = b.after_slack;
    json s = {{"mode", b.mode}, {"T", b.T}};
    std::vector<BlowupRow> rows;
    if (b.mode == "before") {
        std::vector<Field> set;
        for (double a : b.amplitudes.empty() ? std::vector<double>{1.0} : b.amplitudes) {
            Field v = u0;
            for (auto& x : v.values) x *= a;
            set.push_back(std::move(v));
        }
        if (!b.control_path.empty()) o.control = read_control(b.control_path, grid);
        const BeforeReport rep = tail_before_T(set, b.T, b.eps, cfg.sim, phi, o);
        json det = json::array();
        for (const auto& d : rep.deterministic) det.push_back(blowup_time_json(d));
        json mx = json::array();
        for (double v : rep.max_eps_log_p) mx.push_back(jnum(v));
        s.update({{"deterministic", det},
                  {"eps", rep.eps},
                  {"max_eps_log_p", mx},
                  {"c_hat", jnum(rep.c_hat)},
                  {"importance", o.control.has_value()},
                  {"pass", rep.pass}});
        rows = rep.rows;
    } else if (b.mode == "after") {
        const AfterReport rep = tail_after_T(u0, b.T, b.eps, cfg.sim, phi, o);
        json slack = json::array();
        for (double v : rep.slack) slack.push_back(jnum(v));
        s.update({{"deterministic", blowup_time_json(rep.deterministic)},
                  {"rare", rep.rare},
                  {"rate_bound", rep.rate_bound},
                  {"cancel", {{"status", rep.cancel.status}, {"max_residual", rep.cancel.max_residual}}},
                  {"slack", slack},
                  {"hit_rate", rep.hit_rate},
                  {"pass", rep.pass}});
        if (rep.nonrare) s["nonrare"] = nonrare_json(*rep.nonrare);
        rows = rep.rows;
    } else {
        const NonRareReport rep = nonrare_limit(u0, b.T, b.eps, cfg.sim, phi, o);
        s.update(nonrare_json(rep));
        rows = rep.rows;
    }
    write_csv(out.add("blowup.csv"), blowup_header(), blowup_rows(rows));
    write_json(out.add("blowup_verdict.json"), s);
    return s;
}

json versions() {
    return {{"snls", "0.1.0"},
            {"fftw", std::string(fftw_version)},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"boost", std::string(BOOST_LIB_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"openssl", std::string(OpenSSL_version(OPENSSL_VERSION))},
            {"compiler", std::string(__VERSION__)}};
}

} // namespace

RunResult run_subcommand(const std::string& name, RunConfig cfg, const RunOverrides& ov) {
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.workers) cfg.workers = *ov.workers;
    if (ov.output_dir) cfg.output_dir = *ov.output_dir;
    cfg = parse_config(config_to_json(cfg)); // re-validate after overrides
    if (ov.cancel_T && name != "skeleton") throw Error("--cancel-control only applies to skeleton");

    const auto t0 = std::chrono::steady_clock::now();
    Outputs out{cfg.output_dir, {}};
    fs::create_directories(out.dir);
    json summary;
    if (name == "simulate")
        summary = run_simulate(cfg, out);
    else if (name == "skeleton")
        summary = run_skeleton(cfg, ov, out);
    else if (name == "rate")
        summary = run_rate(cfg, out);
    else if (name == "mc")
        summary = run_mc(cfg, out);
    else if (name == "tails")
        summary = run_tails(cfg, out);
    else if (name == "blowup")
        summary = run_blowup(cfg, out);
    else
        throw Error("unknown subcommand '" + name + "'");
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json files = json::array();
    for (const auto& f : out.files)
        files.push_back({{"path", f.generic_string()},
                         {"bytes", fs::file_size(out.dir / f)},
                         {"sha256", sha256_file(out.dir / f)}});
    json manifest = {{"subcommand", name},
                     {"config", config_to_json(cfg)},
                     {"seed", cfg.seed},
                     {"workers", cfg.workers},
                     {"versions", versions()},
                     {"wall_time_s", wall},
                     {"outputs", files}};
    if (ov.cancel_T) manifest["cancel_T"] = *ov.cancel_T;
    write_json(out.dir / "manifest.json", manifest);
    return {out.files, summary};
}

json error_json(const std::string& subcommand, const std::exception& e) {
    json j = {{"status", "error"}, {"subcommand", subcommand}, {"message", e.what()}};
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
        j["type"] = "config";
        j["violations"] = ce->violations();
    } else if (dynamic_cast<const Error*>(&e) != nullptr) {
        j["type"] = "error";
    } else {
        j["type"] = "internal";
    }
    return j;
}

} // namespace snls
