#include "vscsim/analysis.hpp"

#include <algorithm>
#include <limits>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "vscsim/errors.hpp"

namespace vscsim {

double rmse(const std::vector<double>& ref, const std::vector<double>& cand, double base)
{
    if (!(base > 0.0)) {
        throw ConfigError("RMSE base must be positive");
    }
    const std::size_t n = std::min(ref.size(), cand.size());
    if (n == 0) {
        throw EmptyWindow("RMSE of empty series");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double e = ref[k] - cand[k];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(n)) / base;
}

double rmse(const std::vector<double>& t_ref, const std::vector<double>& ref, const std::vector<double>& t_cand,
            const std::vector<double>& cand, double base, const Window& w)
{
    if (!(base > 0.0)) {
        throw ConfigError("RMSE base must be positive");
    }
    if (t_ref.empty() || t_cand.empty()) {
        throw EmptyWindow("RMSE of empty series");
    }
    const double eps = 1e-9;
    const double lo = std::max({t_ref.front(), t_cand.front(), w.t_start.value_or(-1e300)});
    const double hi = std::min({t_ref.back(), t_cand.back(), w.t_end.value_or(1e300)});
    double acc = 0.0;
    std::size_t n = 0;
    std::size_t j = 0;
    for (std::size_t k = 0; k < t_ref.size(); ++k) {
        const double t = t_ref[k];
        if (t < lo - eps || t > hi + eps) {
            continue;
        }
        while (j + 1 < t_cand.size() && t_cand[j + 1] <= t + eps) {
            ++j;
        }
        const double e = ref[k] - cand[j];
        acc += e * e;
        ++n;
    }
    if (n == 0) {
        throw EmptyWindow("no reference samples in the comparison window");
    }
    return std::sqrt(acc / static_cast<double>(n)) / base;
}

double compare_runs(const RunResult& reference, const RunResult& candidate, const ComparisonSpec& spec)
{
    const auto kr = reference.index(spec.signal);
    const auto kc = candidate.index(spec.signal);
    const double base = spec.base.value_or(reference.bases[kr]);
    return rmse(reference.time, reference.data[kr], candidate.time, candidate.data[kc], base, spec.window);
}

std::vector<std::string> default_signals(const SystemModel& sys, const std::string& test)
{
    const std::string v = sys.vscs.empty() ? "VSC" : sys.vscs.front().name;
    std::string g = sys.machines.empty() ? "G1" : sys.machines.front().machine.name;
    for (const auto& m : sys.machines) {
        if (m.machine.name == "G3") {
            g = "G3";
        }
    }
    if (test == "setpoint") {
        return {v + ".P_ac", v + ".iq_pos", v + ".id_pos"};
    }
    if (test == "harmonics") {
        return {v + ".P_ac", v + ".iq_pos", v + ".id_pos", v + ".vq_pos", v + ".vd_pos"};
    }
    if (test == "freq_volt") {
        return {v + ".f", v + ".P_ac", v + ".V_a", g + ".omega_m"};
    }
    return {v + ".iq_pos", v + ".id_pos", v + ".vq_pos", v + ".vd_pos", g + ".Te", g + ".omega_m"};
}

std::vector<double> log_grid(double lo, double hi, int per_decade)
{
    std::vector<double> out;
    const double step = 1.0 / per_decade;
    for (double e = std::log10(lo);; e += step) {
        // Snap to a few significant digits so grid values print cleanly.
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", std::pow(10.0, e));
        const double v = std::stod(buf);
        if (v > hi * (1.0 + 1e-9)) {
            break;
        }
        out.push_back(v);
    }
    if (out.empty() || std::abs(out.back() - hi) > 1e-12 * hi) {
        out.push_back(hi);
    }
    return out;
}

std::vector<double> default_dt_grid()
{
    auto g = log_grid(kMinDt, kMaxDt, 20);
    for (double us : {25.0, 250.0, 2500.0, 350.0, 600.0, 650.0, 700.0, 750.0, 850.0}) {
        g.push_back(us * 1e-6);
    }
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end(), [](double a, double b) { return std::abs(a - b) <= 1e-9 * b; }), g.end());
    return g;
}

std::vector<const SweepPoint*> SweepResult::series(VscModel m, double bandwidth) const
{
    std::vector<const SweepPoint*> out;
    for (const auto& p : points) {
        if (p.model == m && p.bandwidth == bandwidth) {
            out.push_back(&p);
        }
    }
    std::sort(out.begin(), out.end(), [](const SweepPoint* a, const SweepPoint* b) { return a->dt < b->dt; });
    return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn)
{
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) {
                    failure = std::current_exception();
                }
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back(work);
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

namespace {

ScenarioConfig make_config(const SweepSpec& spec, VscModel m, double dt)
{
    ScenarioConfig c;
    c.system = spec.system;
    c.test = spec.test;
    c.model = m;
    c.dt = dt;
    c.duration = spec.duration;
    c.overrides = spec.overrides;
    c.divergence_bound = spec.divergence_bound;
    return c;
}

std::vector<std::string> resolve_signals(const SweepSpec& spec, const SystemModel& sys)
{
    return spec.signals.empty() ? default_signals(sys, spec.test) : spec.signals;
}

void check_grid(const std::vector<double>& grid)
{
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (grid[k] < kMinDt * (1.0 - 1e-9) || grid[k] > kMaxDt * (1.0 + 1e-9)) {
            throw ConfigError("sweep dt " + std::to_string(grid[k]) + " outside [5e-6, 12e-3]");
        }
        if (k > 0 && !(grid[k] > grid[k - 1])) {
            throw ConfigError("sweep dt grid must be strictly increasing");
        }
    }
}

} // namespace

RunResult reference_run(const SweepSpec& spec)
{
    return run_scenario(make_config(spec, VscModel::emt_avg, kReferenceDt));
}

SweepResult timestep_sweep(const SweepSpec& spec, const RunResult& reference)
{
    auto grid = spec.dt_grid.empty() ? default_dt_grid() : spec.dt_grid;
    check_grid(grid);
    if (!(spec.rmse_cap > 0.0)) {
        throw ConfigError("rmse_cap must be positive");
    }
    const SystemModel sys = resolve_system(make_config(spec, VscModel::emt_avg, kReferenceDt));
    SweepResult out;
    out.signals = resolve_signals(spec, sys);
    for (const auto& s : out.signals) {
        reference.index(s);
    }
    for (auto m : spec.models) {
        for (double dt : grid) {
            SweepPoint p;
            p.model = m;
            p.dt = dt;
            out.points.push_back(p);
        }
    }
    parallel_for(out.points.size(), spec.jobs, [&](std::size_t i) {
        auto& p = out.points[i];
        auto cfg = make_config(spec, p.model, p.dt);
        try {
            const auto r = run_scenario(sys, cfg);
            p.wall_clock_s = r.wall_clock_s;
            for (const auto& s : out.signals) {
                const double e = compare_runs(reference, r, {s, std::nullopt, spec.window});
                p.rmse.push_back(std::isfinite(e) ? std::min(e, spec.rmse_cap) : spec.rmse_cap);
            }
        } catch (const NumericalDivergence& e) {
            p.diverged = true;
            p.error = e.what();
            p.rmse.assign(out.signals.size(), spec.rmse_cap);
        }
    });
    return out;
}

SweepResult timestep_sweep(const SweepSpec& spec)
{
    return timestep_sweep(spec, reference_run(spec));
}

SweepResult bandwidth_sweep(const SweepSpec& spec, const std::string& loop, const std::vector<double>& values)
{
    if (loop != "omega_c" && loop != "omega_pq") {
        throw ConfigError("bandwidth sweep loop must be omega_c or omega_pq");
    }
    const SystemModel sys = resolve_system(make_config(spec, VscModel::emt_avg, kReferenceDt));
    SweepResult out;
    out.swept_loop = loop;
    for (double v : values) {
        SweepSpec s = spec;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        for (const auto& u : sys.vscs) {
            s.overrides.emplace_back("vsc." + u.name + "." + loop, buf);
        }
        auto part = timestep_sweep(s);
        out.signals = part.signals;
        for (auto& p : part.points) {
            p.bandwidth = v;
            out.points.push_back(std::move(p));
        }
    }
    return out;
}

std::optional<double> knee_dt(const std::vector<const SweepPoint*>& series, std::size_t signal, double factor,
                              double abs_floor)
{
    if (series.empty()) {
        return std::nullopt;
    }
    double floor = std::numeric_limits<double>::infinity();
    for (const auto* p : series) {
        floor = std::min(floor, p->rmse.at(signal));
    }
    floor = std::max(floor, abs_floor);
    std::optional<double> knee;
    for (const auto* p : series) {
        if (p->diverged || p->rmse.at(signal) > factor * floor) {
            break;
        }
        knee = p->dt;
    }
    return knee;
}

double model_tau_min(VscModel m, const VscParams& p)
{
    const auto g = tune_gains(p);
    return (m == VscModel::pm_i0 || m == VscModel::pm_pq1) ? g.tau_pq : g.tau_c;
}

std::vector<GuidelineRow> guideline_report(const SweepResult& sweep, const VscParams& params, std::size_t signal)
{
    std::vector<VscModel> models;
    for (const auto& p : sweep.points) {
        if (std::find(models.begin(), models.end(), p.model) == models.end()) {
            models.push_back(p.model);
        }
    }
    std::vector<GuidelineRow> rows;
    for (auto m : models) {
        GuidelineRow r;
        r.model = m;
        r.tau_min = model_tau_min(m, params);
        r.dt_low = r.tau_min / 10.0;
        r.dt_high = r.tau_min / 5.0;
        r.knee = knee_dt(sweep.series(m), signal);
        r.flagged = !r.knee || *r.knee > 2.0 * r.dt_high || *r.knee < 0.5 * r.dt_high;
        rows.push_back(r);
    }
    return rows;
}

std::vector<BenchmarkRow> execution_benchmark(const SweepResult& sweep)
{
    std::vector<BenchmarkRow> rows;
    std::vector<VscModel> models;
    for (const auto& p : sweep.points) {
        if (std::find(models.begin(), models.end(), p.model) == models.end()) {
            models.push_back(p.model);
        }
    }
    for (auto m : models) {
        const auto s = sweep.series(m, sweep.points.empty() ? 0.0 : sweep.points.front().bandwidth);
        double base = 0.0;
        for (const auto* p : s) {
            if (!p->diverged && p->wall_clock_s > 0.0) {
                base = p->wall_clock_s;
                break;
            }
        }
        for (const auto* p : s) {
            BenchmarkRow r{m, p->dt, p->wall_clock_s, 0.0, p->diverged};
            r.speedup = (p->wall_clock_s > 0.0 && base > 0.0) ? base / p->wall_clock_s : 0.0;
            rows.push_back(r);
        }
    }
    return rows;
}

std::complex<double> fundamental_phasor(const std::vector<double>& t, const std::vector<double>& x, double t_end,
                                        double f)
{
    const double period = 1.0 / f;
    const double w = 2.0 * std::numbers::pi * f;
    std::complex<double> acc = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] > t_end - period + 1e-9 && t[k] <= t_end + 1e-9) {
            acc += x[k] * std::polar(1.0, -w * t[k]);
            ++n;
        }
    }
    if (n < 4) {
        throw EmptyWindow("fewer than four samples in the Fourier window");
    }
    return 2.0 * acc / static_cast<double>(n);
}

double fit_lag_time_constant(const std::vector<double>& t, const std::vector<double>& u, const std::vector<double>& y,
                             double t0, double t1, double lo, double hi)
{
    std::size_t k0 = 0;
    while (k0 < t.size() && t[k0] < t0 - 1e-12) {
        ++k0;
    }
    std::size_t k1 = k0;
    while (k1 + 1 < t.size() && t[k1 + 1] <= t1 + 1e-12) {
        ++k1;
    }
    if (k1 <= k0 + 2) {
        throw EmptyWindow("lag fit window has too few samples");
    }
    auto cost = [&](double log_tau) {
        const double tau = std::exp(log_tau);
        double yh = y[k0];
        double sse = 0.0;
        for (std::size_t k = k0; k < k1; ++k) {
            const double a = std::exp(-(t[k + 1] - t[k]) / tau);
            yh = u[k] + (yh - u[k]) * a;
            const double e = yh - y[k + 1];
            sse += e * e;
        }
        return sse;
    };
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(lo), b = std::log(hi);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = cost(c), fd = cost(d);
    for (int it = 0; it < 200 && b - a > 1e-10; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d);
        }
    }
    return std::exp(0.5 * (a + b));
}

void write_sweep_csv(const SweepResult& s, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(path);
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
    const bool bw = !s.swept_loop.empty();
    if (bw) {
        f << s.swept_loop << ',';
    }
    f << "model,dt,signal,rmse,wall_clock_s,diverged\n";
    char buf[64];
    for (const auto& p : s.points) {
        for (std::size_t k = 0; k < s.signals.size(); ++k) {
            if (bw) {
                std::snprintf(buf, sizeof buf, "%.17g,", p.bandwidth);
                f << buf;
            }
            f << model_name(p.model) << ',';
            std::snprintf(buf, sizeof buf, "%.17g", p.dt);
            f << buf << ',' << s.signals[k] << ',';
            std::snprintf(buf, sizeof buf, "%.17g,%.17g", p.rmse[k], p.wall_clock_s);
            f << buf << ',' << (p.diverged ? "true" : "false") << '\n';
        }
    }
    if (!f) {
        throw IoError("error while writing " + path.string());
    }
}

namespace {

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string fmt_tick(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

struct Axis {
    double lo{0.0}, hi{1.0};
    bool log{false};

    double map(double v, double p0, double p1) const
    {
        const double a = log ? std::log10(lo) : lo;
        const double b = log ? std::log10(hi) : hi;
        const double x = log ? std::log10(v) : v;
        return p0 + (x - a) / (b - a) * (p1 - p0);
    }
    std::vector<double> ticks() const
    {
        std::vector<double> t;
        if (log) {
            for (int e = static_cast<int>(std::floor(std::log10(lo))); e <= static_cast<int>(std::ceil(std::log10(hi)));
                 ++e) {
                const double v = std::pow(10.0, e);
                if (v >= lo * (1 - 1e-9) && v <= hi * (1 + 1e-9)) {
                    t.push_back(v);
                }
            }
            return t;
        }
        const double span = hi - lo;
        const double raw = span / 5.0;
        const double mag = std::pow(10.0, std::floor(std::log10(raw)));
        double step = mag;
        for (double m : {1.0, 2.0, 5.0, 10.0}) {
            if (m * mag >= raw) {
                step = m * mag;
                break;
            }
        }
        for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) {
            t.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
        }
        return t;
    }
};

Axis make_axis(const std::vector<PlotSeries>& series, bool use_x, bool log)
{
    Axis a;
    a.log = log;
    double lo = 1e300, hi = -1e300;
    for (const auto& s : series) {
        for (double v : use_x ? s.x : s.y) {
            if (!std::isfinite(v) || (log && v <= 0.0)) {
                continue;
            }
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (lo > hi) {
        lo = log ? 1.0 : 0.0;
        hi = log ? 10.0 : 1.0;
    }
    if (log) {
        lo = std::pow(10.0, std::floor(std::log10(lo)));
        hi = std::pow(10.0, std::ceil(std::log10(hi)));
        if (hi <= lo) {
            hi = lo * 10.0;
        }
    } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
        lo -= 0.5;
        hi += 0.5;
    } else if (!use_x) {
        const double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
    a.lo = lo;
    a.hi = hi;
    return a;
}

} // namespace

void write_svg_plot(const PlotSpec& spec, const std::filesystem::path& path)
{
    constexpr double width = 800, height = 500, left = 80, right = 180, top = 50, bottom = 60;
    const double x0 = left, x1 = width - right, y0 = height - bottom, y1 = top;
    const Axis ax = make_axis(spec.series, true, spec.log_x);
    const Axis ay = make_axis(spec.series, false, spec.log_y);
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"25\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(spec.title) << "</text>\n";
    for (double t : ax.ticks()) {
        const double px = ax.map(t, x0, x1);
        o << "<line x1=\"" << px << "\" y1=\"" << y0 << "\" x2=\"" << px << "\" y2=\"" << y1
          << "\" stroke=\"#ddd\"/>\n";
        o << "<text x=\"" << px << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << fmt_tick(t) << "</text>\n";
    }
    for (double t : ay.ticks()) {
        const double py = ay.map(t, y0, y1);
        o << "<line x1=\"" << x0 << "\" y1=\"" << py << "\" x2=\"" << x1 << "\" y2=\"" << py
          << "\" stroke=\"#ddd\"/>\n";
        o << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">" << fmt_tick(t) << "</text>\n";
    }
    o << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">"
      << xml_escape(spec.x_label) << "</text>\n";
    o << "<text transform=\"translate(20," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(spec.y_label) << "</text>\n";

    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        const auto& ser = spec.series[s];
        const char* color = colors[s % std::size(colors)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < std::min(ser.x.size(), ser.y.size()); ++k) {
            const double x = ser.x[k], y = ser.y[k];
            if (!std::isfinite(x) || !std::isfinite(y) || (spec.log_x && x <= 0.0) || (spec.log_y && y <= 0.0)) {
                continue;
            }
            const double px = std::clamp(ax.map(x, x0, x1), x0, x1);
            const double py = std::clamp(ay.map(y, y0, y1), y1, y0);
            o << px << ',' << py << ' ';
        }
        o << "\"/>\n";
        const double ly = top + 20.0 * static_cast<double>(s);
        o << "<line x1=\"" << x1 + 15 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 40 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << x1 + 45 << "\" y=\"" << ly + 4 << "\">" << xml_escape(ser.label) << "</text>\n";
    }
    if (!spec.note.empty()) {
        o << "<text x=\"" << x0 + 8 << "\" y=\"" << y1 + 16 << "\">" << xml_escape(spec.note) << "</text>\n";
    }
    o << "</svg>\n";

    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(path);
    if (!f || !(f << o.str())) {
        throw IoError("cannot write " + path.string());
    }
}

} // namespace vscsim
