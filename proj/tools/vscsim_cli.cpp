// vscsim command-line front end. Every subcommand is a thin wrapper over the
// library; see README.md for the flags and the exit codes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "vscsim/analysis.hpp"
#include "vscsim/errors.hpp"
#include "vscsim/scenarios.hpp"

namespace fs = std::filesystem;
using namespace vscsim;

namespace {

struct Common {
    double divergence_bound{kDefaultDivergenceBound};
    std::string system{"small"};
    std::string test{"setpoint"};
    std::string config;
    std::vector<std::string> set;
    std::string out_dir;
    int jobs{0};
    bool no_plots{false};
    std::optional<double> duration;
};

struct RunFlags {
    std::string model{"emt-avg"};
    double dt{5e-6};
    bool check_determinism{false};
};

struct SweepFlags {
    std::vector<std::string> models;
    std::vector<double> dts;
    std::vector<std::string> signals;
    std::optional<double> t_start;
    std::optional<double> t_end;
    std::string loop;
    std::vector<double> bandwidths;
    double rmse_cap{kRmseCap};
};

struct BenchFlags {
    std::vector<std::string> models;
    std::vector<double> dts{10e-6, 100e-6, 1e-3};
    int repeats{3};
};

struct CompareFlags {
    std::string a;
    std::string b;
    std::vector<std::string> signals;
    std::optional<double> t_start;
    std::optional<double> t_end;
};

std::string fmt(const char* f, auto... args)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path out_dir(const Common& c)
{
    fs::path p = c.out_dir;
    if (p.empty()) {
        const char* env = std::getenv("VSCSIM_OUT_DIR");
        p = env && *env ? env : "out";
    }
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) {
        throw IoError("cannot create output directory " + p.string() + ": " + ec.message());
    }
    return p;
}

int jobs_of(const Common& c)
{
    if (c.jobs > 0) {
        return c.jobs;
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

VscModel model_arg(const std::string& s)
{
    const auto m = parse_model(s);
    if (!m) {
        throw ConfigError("unknown model '" + s + "' (emt-avg, pm-full, pm-i1, pm-i0, pm-pq1)");
    }
    return *m;
}

std::vector<VscModel> models_arg(const std::vector<std::string>& names)
{
    std::vector<VscModel> out;
    for (const auto& n : names) {
        out.push_back(model_arg(n));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& sets)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("--set expects section.key=value, got '" + s + "'");
        }
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

/// Scenario from --config (if any), then explicit flags on top.
ScenarioConfig scenario(const Common& c, const CLI::App& sub)
{
    ScenarioConfig cfg;
    if (!c.config.empty()) {
        cfg = load_scenario_file(c.config);
    }
    if (c.config.empty() || sub.count("--system") > 0) {
        cfg.system = c.system;
    }
    if (c.config.empty() || sub.count("--test") > 0) {
        cfg.test = c.test;
    }
    if (c.duration) {
        cfg.duration = c.duration;
    }
    if (c.config.empty() || sub.count("--divergence-bound") > 0) {
        cfg.divergence_bound = c.divergence_bound;
    }
    for (auto& kv : parse_sets(c.set)) {
        cfg.overrides.push_back(std::move(kv));
    }
    return cfg;
}

std::string dt_label(double dt)
{
    return fmt("%gus", dt * 1e6);
}

std::string run_id(const RunResult& r, double dt)
{
    return r.metadata.at("system") + "-" + r.metadata.at("test") + "-" + r.metadata.at("model") + "-" + dt_label(dt);
}

std::string file_safe(std::string s)
{
    for (char& ch : s) {
        if (ch == '/' || ch == ' ' || ch == ':') {
            ch = '_';
        }
    }
    return s;
}

void print_summary(const std::string& id, const RunResult& r)
{
    const double t_end = r.time.back();
    const double t0 = t_end - std::min(0.1, 0.1 * t_end);
    auto tail_mean = [&](const std::vector<double>& x) {
        double s = 0.0;
        int n = 0;
        for (std::size_t k = 0; k < r.time.size(); ++k) {
            if (r.time[k] >= t0) {
                s += x[k];
                ++n;
            }
        }
        return n > 0 ? s / n : x.back();
    };
    std::string line = id + ":";
    for (std::size_t k = 0; k < r.names.size(); ++k) {
        const auto& n = r.names[k];
        const auto dot = n.rfind('.');
        const std::string sig = n.substr(dot + 1);
        if (sig == "P_ac" || sig == "Q_ac") {
            line += fmt(" %s=%.3f M%s", n.c_str(), tail_mean(r.data[k]) / 1e6, sig == "P_ac" ? "W" : "var");
        } else if (sig == "f") {
            line += fmt(" %s=%.4f Hz", n.c_str(), tail_mean(r.data[k]));
        }
    }
    line += fmt(" | %zu samples, wall clock %.3f s", r.size(), r.wall_clock_s);
    std::cout << line << "\n";
}

int cmd_run(const Common& c, const RunFlags& f, const CLI::App& sub)
{
    auto cfg = scenario(c, sub);
    if (c.config.empty() || sub.count("--model") > 0) {
        cfg.model = model_arg(f.model);
    }
    if (c.config.empty() || sub.count("--dt") > 0) {
        cfg.dt = f.dt;
    }
    const auto sys = resolve_system(cfg);
    validate_scenario(cfg, sys);
    const auto dir = out_dir(c);
    const RunResult r = run_scenario(sys, cfg);
    if (f.check_determinism) {
        const RunResult again = run_scenario(sys, cfg);
        if (again.time != r.time || again.data != r.data) {
            std::cerr << "error[nondeterministic]: two identical runs differ\n";
            return 1;
        }
        std::cout << "determinism check: repeat run is bit-identical\n";
    }
    const std::string id = run_id(r, cfg.dt);
    const fs::path csv = dir / (file_safe(id) + ".csv");
    write_run(r, csv);
    print_summary(id, r);
    std::cout << "wrote " << csv.string() << " and " << meta_path(csv).string() << "\n";
    return 0;
}

void print_guidelines(const SweepResult& s, const VscParams& p)
{
    for (std::size_t k = 0; k < s.signals.size(); ++k) {
        std::cout << "knee dt on " << s.signals[k] << ":\n";
        for (const auto& row : guideline_report(s, p, k)) {
            std::cout << fmt("  %-8s tau_min %.3g s, guideline [%.3g, %.3g] s, knee %s%s\n", model_name(row.model),
                             row.tau_min, row.dt_low, row.dt_high,
                             row.knee ? fmt("%.3g s", *row.knee).c_str() : "none",
                             row.flagged ? "  (off guideline)" : "");
        }
    }
}

void sweep_plots(const SweepResult& s, const std::vector<VscModel>& models, const std::vector<double>& bandwidths,
                 const fs::path& dir, const std::string& stem)
{
    for (std::size_t k = 0; k < s.signals.size(); ++k) {
        PlotSpec plot;
        plot.title = "RMSE vs time step: " + s.signals[k];
        plot.x_label = "dt [s]";
        plot.y_label = "normalized RMSE";
        plot.log_x = true;
        plot.log_y = true;
        for (double bw : bandwidths) {
            for (auto m : models) {
                PlotSeries ps;
                ps.label = model_name(m);
                if (bw > 0.0) {
                    ps.label += fmt(" %s=%g", s.swept_loop.c_str(), bw);
                }
                for (const auto* p : s.series(m, bw)) {
                    ps.x.push_back(p->dt);
                    ps.y.push_back(std::max(p->rmse[k], 1e-12));
                }
                plot.series.push_back(std::move(ps));
            }
        }
        plot.note = "diverged runs plotted at the RMSE cap";
        write_svg_plot(plot, dir / (stem + "_" + file_safe(s.signals[k]) + ".svg"));
    }
}

int cmd_sweep(const Common& c, const SweepFlags& f, const CLI::App& sub)
{
    const auto cfg = scenario(c, sub);
    SweepSpec spec;
    spec.system = cfg.system;
    spec.test = cfg.test;
    spec.overrides = cfg.overrides;
    spec.duration = cfg.duration;
    if (!f.models.empty()) {
        spec.models = models_arg(f.models);
    }
    spec.dt_grid = f.dts.empty() ? default_dt_grid() : f.dts;
    spec.signals = f.signals;
    spec.window = {f.t_start, f.t_end};
    spec.jobs = jobs_of(c);
    spec.divergence_bound = cfg.divergence_bound;
    spec.rmse_cap = f.rmse_cap;
    const auto sys = resolve_system(cfg);
    sys.test(spec.test);
    const auto dir = out_dir(c);

    SweepResult res;
    std::vector<double> bws{0.0};
    if (!f.loop.empty()) {
        if (f.bandwidths.empty()) {
            throw ConfigError("--loop needs --bandwidths");
        }
        res = bandwidth_sweep(spec, f.loop, f.bandwidths);
        bws = f.bandwidths;
    } else {
        res = timestep_sweep(spec);
    }
    const std::string stem = file_safe("sweep-" + sys.name + "-" + spec.test + (f.loop.empty() ? "" : "-" + f.loop));
    const fs::path csv = dir / (stem + ".csv");
    write_sweep_csv(res, csv);
    std::size_t diverged = 0;
    for (const auto& p : res.points) {
        diverged += p.diverged ? 1 : 0;
    }
    std::cout << fmt("%zu points (%zu diverged), %zu signals\n", res.points.size(), diverged, res.signals.size());
    if (f.loop.empty() && !sys.vscs.empty()) {
        print_guidelines(res, sys.vscs.front().params);
    }
    std::cout << "wrote " << csv.string() << "\n";
    if (!c.no_plots) {
        sweep_plots(res, spec.models, bws, dir, stem);
        std::cout << "wrote " << res.signals.size() << " plot(s) to " << dir.string() << "\n";
    }
    return 0;
}

int cmd_bench(const Common& c, const BenchFlags& f, const CLI::App& sub)
{
    auto cfg = scenario(c, sub);
    if (c.config.empty() && sub.count("--test") == 0) {
        cfg.test = "freq_volt";
    }
    const auto models = f.models.empty()
                            ? std::vector<VscModel>{VscModel::emt_avg, VscModel::pm_full, VscModel::pm_i1,
                                                    VscModel::pm_i0, VscModel::pm_pq1}
                            : models_arg(f.models);
    if (f.repeats < 1) {
        throw ConfigError("--repeats must be at least 1");
    }
    const auto sys = resolve_system(cfg);
    SweepResult s;
    for (auto m : models) {
        for (double dt : f.dts) {
            auto one = cfg;
            one.model = m;
            one.dt = dt;
            validate_scenario(one, sys);
            SweepPoint p;
            p.model = m;
            p.dt = dt;
            p.wall_clock_s = 1e300;
            for (int k = 0; k < f.repeats && !p.diverged; ++k) {
                try {
                    p.wall_clock_s = std::min(p.wall_clock_s, run_scenario(sys, one).wall_clock_s);
                } catch (const NumericalDivergence& e) {
                    p.diverged = true;
                    p.error = e.what();
                    p.wall_clock_s = 0.0;
                }
            }
            s.points.push_back(p);
        }
    }
    const auto rows = execution_benchmark(s);
    const fs::path csv = out_dir(c) / file_safe("bench-" + sys.name + "-" + cfg.test + ".csv");
    std::ofstream out(csv);
    if (!out) {
        throw IoError("cannot write " + csv.string());
    }
    out << "model,dt,wall_clock_s,speedup,diverged\n";
    for (const auto& r : rows) {
        out << fmt("%s,%.17g,%.17g,%.17g,%s\n", model_name(r.model), r.dt, r.wall_clock_s, r.speedup,
                   r.diverged ? "true" : "false");
        if (r.diverged) {
            std::cout << fmt("%-8s dt %-8s diverged\n", model_name(r.model), dt_label(r.dt).c_str());
        } else {
            std::cout << fmt("%-8s dt %-8s %9.4f s  speedup %7.2fx\n", model_name(r.model), dt_label(r.dt).c_str(),
                             r.wall_clock_s, r.speedup);
        }
    }
    if (!out) {
        throw IoError("cannot write " + csv.string());
    }
    std::cout << "wrote " << csv.string() << "\n";
    return 0;
}

fs::path stored_run(const std::string& arg, const fs::path& dir)
{
    if (fs::exists(arg)) {
        return arg;
    }
    const fs::path p = dir / (arg + ".csv");
    if (fs::exists(p)) {
        return p;
    }
    throw IoError("no stored run '" + arg + "' (looked for " + arg + " and " + p.string() + ")");
}

std::vector<std::string> compare_signals(const RunResult& a, const RunResult& b)
{
    std::vector<std::string> out;
    try {
        ScenarioConfig cfg;
        cfg.system = a.metadata.at("system");
        for (const auto& s : default_signals(resolve_system(cfg), a.metadata.at("test"))) {
            if (a.find(s) && b.find(s)) {
                out.push_back(s);
            }
        }
    } catch (const std::exception&) {
        out.clear();
    }
    if (out.empty()) {
        for (const auto& n : a.names) {
            if (b.find(n)) {
                out.push_back(n);
            }
        }
    }
    return out;
}

int cmd_compare(const Common& c, const CompareFlags& f)
{
    const auto dir = out_dir(c);
    const fs::path pa = stored_run(f.a, dir);
    const fs::path pb = stored_run(f.b, dir);
    const RunResult a = read_run(pa);
    const RunResult b = read_run(pb);
    if (a.time.empty() || b.time.empty()) {
        throw EmptyWindow("one of the runs has no samples");
    }
    const double lo = std::max(a.time.front(), b.time.front());
    const double hi = std::min(a.time.back(), b.time.back());
    if (a.time.front() != b.time.front() || a.time.back() != b.time.back()) {
        std::cerr << fmt("warning: runs cover different spans, comparing over the overlap [%g, %g] s\n", lo, hi);
    }
    const auto signals = f.signals.empty() ? compare_signals(a, b) : f.signals;
    const std::string stem = file_safe("compare-" + pa.stem().string() + "-vs-" + pb.stem().string());
    for (const auto& s : signals) {
        ComparisonSpec cs;
        cs.signal = s;
        cs.window = {f.t_start, f.t_end};
        const double e = compare_runs(a, b, cs);
        std::cout << fmt("%-24s RMSE %.6g\n", s.c_str(), e);
        if (c.no_plots) {
            continue;
        }
        const auto ka = a.index(s);
        const auto kb = b.index(s);
        const double base = a.bases[ka];
        PlotSpec plot;
        plot.title = s;
        plot.x_label = "t [s]";
        plot.y_label = s + " [pu]";
        auto series = [&](const RunResult& r, std::size_t k, const fs::path& p) {
            PlotSeries ps;
            ps.label = p.stem().string();
            const double t0 = f.t_start.value_or(lo);
            const double t1 = f.t_end.value_or(hi);
            for (std::size_t i = 0; i < r.time.size(); ++i) {
                if (r.time[i] >= t0 && r.time[i] <= t1) {
                    ps.x.push_back(r.time[i]);
                    ps.y.push_back(r.data[k][i] / base);
                }
            }
            return ps;
        };
        plot.series = {series(a, ka, pa), series(b, kb, pb)};
        plot.note = fmt("RMSE = %.4g", e);
        write_svg_plot(plot, dir / (stem + "_" + file_safe(s) + ".svg"));
    }
    return 0;
}

bool is_scenario_file(const fs::path& p)
{
    std::ifstream in(p);
    if (!in) {
        throw IoError("cannot read " + p.string());
    }
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t");
        if (first != std::string::npos && line.compare(first, 10, "[scenario]") == 0) {
            return true;
        }
    }
    return false;
}

void describe(const SystemModel& sys)
{
    std::cout << fmt("  system %s: %zu buses, %zu lines, %zu machines, %zu converters\n", sys.name.c_str(),
                     sys.network.buses.size(), sys.network.lines.size(), sys.machines.size(), sys.vscs.size());
}

int cmd_validate(const Common& c, const std::vector<std::string>& paths, const CLI::App& sub)
{
    if (paths.empty()) {
        auto cfg = scenario(c, sub);
        const auto sys = resolve_system(cfg);
        sys.validate();
        std::cout << "ok " << cfg.system << "\n";
        describe(sys);
        return 0;
    }
    for (const auto& path : paths) {
        if (is_scenario_file(path)) {
            const auto cfg = load_scenario_file(path);
            const auto sys = resolve_system(cfg);
            sys.validate();
            validate_scenario(cfg, sys);
            std::cout << "ok " << path << " (scenario: " << cfg.test << ", " << model_name(cfg.model) << ", dt "
                      << dt_label(cfg.dt) << ")\n";
            describe(sys);
        } else {
            const auto sys = load_system_file(path, parse_sets(c.set));
            sys.validate();
            std::cout << "ok " << path << "\n";
            describe(sys);
        }
    }
    return 0;
}

int cmd_list(const Common& c, const CLI::App& sub)
{
    std::vector<std::string> systems{"small", "large"};
    if (sub.count("--system") > 0) {
        systems = {c.system};
    }
    for (const auto& name : systems) {
        ScenarioConfig cfg;
        cfg.system = name;
        const auto sys = resolve_system(cfg);
        std::cout << sys.name << ":\n";
        for (const auto& t : sys.tests) {
            std::cout << fmt("  %-12s %gs, %zu event(s)\n", t.id.c_str(), t.duration, t.events.size());
        }
        if (sub.count("--system") > 0) {
            std::cout << "  default signals per test:\n";
            for (const auto& t : sys.tests) {
                std::cout << "    " << t.id << ":";
                for (const auto& s : default_signals(sys, t.id)) {
                    std::cout << " " << s;
                }
                std::cout << "\n";
            }
        }
    }
    std::cout << "models: emt-avg pm-full pm-i1 pm-i0 pm-pq1\n";
    return 0;
}

void add_common(CLI::App* sub, Common& c, bool scenario_flags)
{
    if (scenario_flags) {
        sub->add_option("--system", c.system, "small, large or a system INI path")->capture_default_str();
        sub->add_option("--test", c.test, "test id of the system")->capture_default_str();
        sub->add_option("--config", c.config, "scenario file ([scenario] and [override] sections)");
        sub->add_option("--set", c.set, "override section.key=value (repeatable)");
        sub->add_option("--duration", c.duration, "simulated time [s]");
        sub->add_option("--divergence-bound", c.divergence_bound, "divergence threshold, multiple of base peak voltage")
            ->capture_default_str();
    }
    sub->add_option("--out-dir", c.out_dir, "output directory (default $VSCSIM_OUT_DIR, else ./out)");
    sub->add_option("--jobs", c.jobs, "worker threads for sweeps (default: hardware threads)");
    sub->add_flag("--no-plots", c.no_plots, "skip SVG output");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"vscsim: EMT and phasor simulation of grid-following converters"};
    app.require_subcommand(1);
    Common common;

    RunFlags rf;
    auto* run = app.add_subcommand("run", "simulate one scenario and store the time series");
    add_common(run, common, true);
    run->add_option("--model", rf.model, "emt-avg, pm-full, pm-i1, pm-i0 or pm-pq1")->capture_default_str();
    run->add_option("--dt", rf.dt, "time step [s], 5e-6 .. 12e-3")->capture_default_str();
    run->add_flag("--check-determinism", rf.check_determinism, "run twice and require bit-identical output");

    SweepFlags sf;
    auto* sweep = app.add_subcommand("sweep", "RMSE against the EMT reference over a model x dt grid");
    add_common(sweep, common, true);
    sweep->add_option("--models", sf.models, "models to sweep (default: all)")->delimiter(',');
    sweep->add_option("--dts", sf.dts, "time steps [s] (default: log grid)")->delimiter(',');
    sweep->add_option("--signals", sf.signals, "signals (default: per test)")->delimiter(',');
    sweep->add_option("--t-start", sf.t_start, "RMSE window start [s]");
    sweep->add_option("--t-end", sf.t_end, "RMSE window end [s]");
    sweep->add_option("--loop", sf.loop, "bandwidth sweep of omega_c or omega_pq");
    sweep->add_option("--bandwidths", sf.bandwidths, "loop bandwidths [rad/s]")->delimiter(',');
    sweep->add_option("--rmse-cap", sf.rmse_cap, "RMSE reported for diverged runs")->capture_default_str();

    BenchFlags bf;
    auto* bench = app.add_subcommand("bench", "wall clock per model and time step");
    add_common(bench, common, true);
    bench->add_option("--models", bf.models, "models (default: all)")->delimiter(',');
    bench->add_option("--dts", bf.dts, "time steps [s]")->delimiter(',')->capture_default_str();
    bench->add_option("--repeats", bf.repeats, "runs per point, fastest kept")->capture_default_str();

    CompareFlags cf;
    auto* compare = app.add_subcommand("compare", "RMSE and overlay plot of two stored runs");
    add_common(compare, common, false);
    compare->add_option("run_a", cf.a, "reference run: CSV path or run id in the output directory")->required();
    compare->add_option("run_b", cf.b, "candidate run")->required();
    compare->add_option("--signal", cf.signals, "signal to compare (repeatable)");
    compare->add_option("--t-start", cf.t_start, "window start [s]");
    compare->add_option("--t-end", cf.t_end, "window end [s]");

    std::vector<std::string> paths;
    auto* validate = app.add_subcommand("validate", "check system or scenario files without running");
    validate->add_option("files", paths, "system INI or scenario files");
    validate->add_option("--system", common.system, "shipped system or path");
    validate->add_option("--test", common.test, "test id");
    validate->add_option("--set", common.set, "override section.key=value (repeatable)");

    auto* list = app.add_subcommand("list", "shipped systems, tests and models");
    list->add_option("--system", common.system, "show one system in detail");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[usage]: " << e.what() << "\n";
        return static_cast<int>(ErrorCategory::config);
    }

    try {
        if (*run) {
            return cmd_run(common, rf, *run);
        }
        if (*sweep) {
            return cmd_sweep(common, sf, *sweep);
        }
        if (*bench) {
            return cmd_bench(common, bf, *bench);
        }
        if (*compare) {
            return cmd_compare(common, cf);
        }
        if (*validate) {
            return cmd_validate(common, paths, *validate);
        }
        return cmd_list(common, *list);
    } catch (const Error& e) {
        std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
}
