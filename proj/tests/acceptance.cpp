// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 100).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "vscsim/analysis.hpp"
#include "vscsim/errors.hpp"
#include "vscsim/frames.hpp"
#include "vscsim/solver.hpp"

using namespace vscsim;
using cd = std::complex<double>;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPmDt = 50e-6;

const std::vector<VscModel> kPmModels{VscModel::pm_full, VscModel::pm_i1, VscModel::pm_i0, VscModel::pm_pq1};

struct Outcome {
    bool pass{false};
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int g_jobs = 1;

RunResult run(const std::string& system, const std::string& test, VscModel m, double dt)
{
    ScenarioConfig c;
    c.system = system;
    c.test = test;
    c.model = m;
    c.dt = dt;
    return run_scenario(c);
}

/// EMT references are shared between criteria.
const RunResult& reference(const std::string& system, const std::string& test)
{
    static std::map<std::pair<std::string, std::string>, RunResult> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const auto key = std::make_pair(system, test);
    auto it = cache.find(key);
    if (it == cache.end()) {
        it = cache.emplace(key, run(system, test, VscModel::emt_avg, kReferenceDt)).first;
    }
    return it->second;
}

/// PM runs of every phasor model at kPmDt, computed in parallel.
std::vector<RunResult> pm_runs(const std::string& system, const std::string& test)
{
    std::vector<RunResult> out(kPmModels.size());
    parallel_for(out.size(), g_jobs, [&](std::size_t i) { out[i] = run(system, test, kPmModels[i], kPmDt); });
    return out;
}

double mean_between(const RunResult& r, const std::string& s, double t0, double t1)
{
    const auto& x = r.signal(s);
    double acc = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < r.time.size(); ++k) {
        if (r.time[k] >= t0 - 1e-12 && r.time[k] < t1 - 1e-12) {
            acc += x[k];
            ++n;
        }
    }
    if (n == 0) {
        throw EmptyWindow("no samples in averaging window");
    }
    return acc / n;
}

/// Sample at or just before t.
double at(const RunResult& r, const std::string& s, double t)
{
    const auto it = std::upper_bound(r.time.begin(), r.time.end(), t + 1e-9);
    const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - r.time.begin()) - 1));
    return r.signal(s)[k];
}

double base(const RunResult& r, const std::string& s)
{
    return r.bases[r.index(s)];
}

std::vector<std::string> vsc_names(const std::string& system)
{
    return system == "small" ? std::vector<std::string>{"VSC"} : std::vector<std::string>{"VSC1", "VSC2"};
}

std::vector<double> event_times(const std::string& system, const std::string& test)
{
    ScenarioConfig c;
    c.system = system;
    const auto sys = resolve_system(c);
    std::vector<double> t;
    for (const auto& e : sys.test(test).events) {
        t.push_back(e.t);
    }
    return t;
}

// 1 ------------------------------------------------------------------------

Outcome c1_tuning()
{
    std::mt19937_64 gen(20240601);
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); };
    int mismatches = 0;
    double worst = 0.0;
    auto cmp = [&](double got, double want) {
        const double rel = std::abs(got - want) / std::max(std::abs(want), 1e-300);
        worst = std::max(worst, rel);
        if (rel > 2.0 * std::numeric_limits<double>::epsilon()) {
            ++mismatches;
        }
    };
    for (int k = 0; k < 100; ++k) {
        VscParams p;
        p.s_rated = u(1e6, 2e9);
        p.r = u(0.01, 20.0);
        p.l = u(1e-3, 2.0);
        p.omega_c = u(100.0, 5000.0);
        p.omega_pq = p.omega_c * u(0.01, 0.9);
        p.omega_pll = u(5.0, 500.0);
        p.v_g_pk = u(100.0, 1e6);
        const auto g = tune_gains(p);
        const double zeta = 1.0 / std::sqrt(2.0);
        cmp(g.zeta_pll, zeta);
        cmp(g.kp_pll, 2.0 * zeta * p.omega_pll / p.v_g_pk);
        cmp(g.tau_i_pll, 2.0 * zeta / p.omega_pll);
        cmp(g.tau_i_c, p.l / p.r);
        cmp(g.kp_c, p.l * p.omega_c);
        cmp(g.tau_i_pq, 1.0 / p.omega_c);
        cmp(g.kp_pq, (1.0 / p.omega_c) * p.omega_pq * 2.0 / (3.0 * p.v_g_pk));
        cmp(g.tau_c, 1.0 / p.omega_c);
        cmp(g.tau_pq, 1.0 / p.omega_pq);
    }
    return {mismatches == 0, fmt("100 parameter sets, %d mismatches, worst relative difference %.2e", mismatches, worst)};
}

// 2 ------------------------------------------------------------------------

Outcome c2_closed_loop()
{
    const auto& r = reference("small", "setpoint");
    const double p_mid = mean_between(r, "VSC.P_ac", 0.75, 0.8);
    const double p_end = mean_between(r, "VSC.P_ac", 3.4, 3.5);
    const double tau = fit_lag_time_constant(r.time, r.signal("VSC.iq_ref"), r.signal("VSC.iq_pos"), 0.6, 0.7);
    const double tau_c = 1.0 / VscParams{}.omega_c;
    const bool p_ok = std::abs(p_mid - 50e6) <= 0.5e6 && std::abs(p_end - 50e6) <= 0.5e6;
    const bool tau_ok = std::abs(tau - tau_c) <= 0.1 * tau_c;
    return {p_ok && tau_ok, fmt("P_ac %.3f MW before the Q step, %.3f MW at the end; inner-loop tau %.4f ms vs %.4f ms",
                                p_mid / 1e6, p_end / 1e6, tau * 1e3, tau_c * 1e3)};
}

// 3 ------------------------------------------------------------------------

Outcome c3_i0_oracle()
{
    const auto r = run("small", "setpoint", VscModel::pm_i0, kPmDt);
    const double tau_pq = 1.0 / VscParams{}.omega_pq;
    const double t0 = 0.6;
    const double p0 = at(r, "VSC.P_ac", t0 - 1e-6);
    const double p_final = 50e6;
    double worst = 0.0;
    const auto& p = r.signal("VSC.P_ac");
    for (std::size_t k = 0; k < r.time.size(); ++k) {
        const double t = r.time[k];
        if (t < t0 || t >= 0.8 - 1e-9) {
            continue;
        }
        const double oracle = p0 + (p_final - p0) * (1.0 - std::exp(-(t - t0) / tau_pq));
        worst = std::max(worst, std::abs(p[k] - oracle));
    }
    return {worst <= 0.02 * p_final,
            fmt("max deviation from 1 - exp(-t/tau_pq) is %.3f%% of the final value", 100.0 * worst / p_final)};
}

// 4 ------------------------------------------------------------------------

Outcome c4_ordering()
{
    SweepSpec s;
    s.system = "small";
    s.test = "setpoint";
    s.models = kPmModels;
    s.dt_grid = {25e-6, 250e-6, 2.5e-3};
    s.signals = {"VSC.P_ac"};
    s.jobs = g_jobs;
    const auto sw = timestep_sweep(s, reference("small", "setpoint"));
    auto e = [&](VscModel m, std::size_t k) { return sw.series(m)[k]->rmse[0]; };
    const bool order = e(VscModel::pm_full, 0) <= e(VscModel::pm_i1, 0) && e(VscModel::pm_i1, 0) <= e(VscModel::pm_i0, 0) &&
                       e(VscModel::pm_i0, 0) < e(VscModel::pm_pq1, 0);
    const bool i0_flat = e(VscModel::pm_i0, 2) <= 2.0 * e(VscModel::pm_i0, 1);
    const bool full_knee = e(VscModel::pm_full, 2) >= 10.0 * e(VscModel::pm_full, 1);
    std::string d = fmt("P_ac RMSE at 25 us: full %.6e, I1 %.6e, I0 %.6e, PQ1 %.6e (%s); ", e(VscModel::pm_full, 0),
                        e(VscModel::pm_i1, 0), e(VscModel::pm_i0, 0), e(VscModel::pm_pq1, 0), order ? "ordered" : "not ordered");
    d += fmt("I0 2.5 ms / 250 us = %.2f (need <= 2); full 2.5 ms / 250 us = %.1f (need >= 10)",
             e(VscModel::pm_i0, 2) / e(VscModel::pm_i0, 1), e(VscModel::pm_full, 2) / e(VscModel::pm_full, 1));
    return {order && i0_flat && full_knee, d};
}

// 5 ------------------------------------------------------------------------

Outcome c5_guideline()
{
    SweepSpec s;
    s.system = "small";
    s.test = "setpoint";
    s.signals = {"VSC.P_ac"};
    s.jobs = g_jobs;
    const auto sw = timestep_sweep(s, reference("small", "setpoint"));
    const auto rows = guideline_report(sw, VscParams{});
    bool ok = true;
    std::string d;
    for (const auto& r : rows) {
        ok = ok && !r.flagged;
        d += fmt("%s knee %s us vs tau/5 %.0f us%s; ", model_name(r.model),
                 r.knee ? fmt("%.0f", *r.knee * 1e6).c_str() : "none", r.dt_high * 1e6, r.flagged ? " (off)" : "");
    }
    return {ok, d};
}

// 6 ------------------------------------------------------------------------

Outcome c6_steady_state()
{
    struct Case {
        std::string system, test;
    };
    std::vector<Case> cases;
    for (const std::string sys : {"small", "large"}) {
        for (const auto& t : test_ids(sys)) {
            cases.push_back({sys, t});
        }
    }
    double worst_mag = 0.0, worst_ang = 0.0;
    std::string worst_where;
    for (const auto& c : cases) {
        const auto& ref = reference(c.system, c.test);
        const auto pm = pm_runs(c.system, c.test);
        const double t_end = ref.time.back();
        std::vector<std::string> buses;
        for (const auto& name : ref.names) {
            if (name.size() >= 4 && name.substr(name.size() - 4, 3) == ".V_" && name.rfind("VSC", 0) != 0) {
                buses.push_back(name);
            }
        }
        // Angles relative to phase a of the first bus: the two domains may
        // settle at slightly different frequencies, so absolute angles drift.
        auto phasor = [&](const RunResult& r, const std::string& name) {
            return fundamental_phasor(r.time, r.signal(name), t_end, 50.0);
        };
        const auto ar = phasor(ref, buses.front());
        for (const auto& name : buses) {
            const auto vr = phasor(ref, name);
            for (std::size_t m = 0; m < pm.size(); ++m) {
                const auto vp = phasor(pm[m], name);
                const auto ap = phasor(pm[m], buses.front());
                const double mag = std::abs(std::abs(vp) - std::abs(vr)) / std::abs(vr);
                const double ang = std::abs(std::arg((vp / ap) / (vr / ar))) * 180.0 / kPi;
                if (mag > worst_mag || ang > worst_ang) {
                    worst_where = c.system + "/" + c.test + " " + name + " " + model_name(kPmModels[m]);
                }
                worst_mag = std::max(worst_mag, mag);
                worst_ang = std::max(worst_ang, ang);
            }
        }
    }
    return {worst_mag <= 0.01 && worst_ang <= 1.0,
            fmt("%zu scenarios x 4 phasor models: worst magnitude error %.3f%%, worst angle error %.3f deg (%s)",
                cases.size(), 100.0 * worst_mag, worst_ang, worst_where.c_str())};
}

// 7 ------------------------------------------------------------------------

Outcome c7_reconvergence()
{
    struct Case {
        std::string system, test;
    };
    const std::vector<Case> cases{
        {"small", "sym_fault"}, {"small", "asym_fault"}, {"large", "asym_fault"}, {"large", "line_outage"}};
    bool ok = true;
    std::string d;
    for (const auto& c : cases) {
        const auto& ref = reference(c.system, c.test);
        const auto pm = run(c.system, c.test, VscModel::pm_full, kPmDt);
        auto ev = event_times(c.system, c.test);
        const double t_end = ref.time.back();
        double worst = 0.0;
        for (std::size_t e = 0; e < ev.size(); ++e) {
            const double lo = ev[e] + 0.15;
            const double hi = e + 1 < ev.size() ? ev[e + 1] : t_end;
            for (const auto& v : vsc_names(c.system)) {
                for (const char* s : {".iq_pos", ".id_pos"}) {
                    const std::string name = v + s;
                    const double b = base(ref, name);
                    const auto& x = ref.signal(name);
                    for (std::size_t k = 0; k < ref.time.size(); ++k) {
                        if (ref.time[k] >= lo && ref.time[k] < hi) {
                            worst = std::max(worst, std::abs(x[k] - at(pm, name, ref.time[k])) / b);
                        }
                    }
                }
            }
        }
        ok = ok && worst < 0.05;
        d += fmt("%s/%s %.2f%%; ", c.system.c_str(), c.test.c_str(), 100.0 * worst);
    }
    return {ok, "worst |PM full - EMT| on i_dq+ from 150 ms after each event: " + d};
}

// 8 ------------------------------------------------------------------------

Outcome c8_frequency()
{
    const auto& ref = reference("small", "freq_volt");
    const auto pm = pm_runs("small", "freq_volt");
    const double k_f = VscParams{}.k_droop_f;
    bool ok = true;
    std::string d;
    auto balance = [&](const RunResult& r, const char* label) {
        const double f_end = mean_between(r, "VSC.f", 3.4, 3.5);
        const double dp = mean_between(r, "VSC.P_ac", 3.4, 3.5) - mean_between(r, "VSC.P_ac", 0.9, 1.0);
        const double want = k_f * (50.0 - f_end);
        const bool good = f_end < 50.0 && std::abs(dp - want) <= 0.02 * std::abs(want);
        ok = ok && good;
        d += fmt("%s f %.3f Hz, dP %.3f MW vs %.3f MW; ", label, f_end, dp / 1e6, want / 1e6);
    };
    balance(ref, "emt-avg");
    double worst_w = 0.0;
    for (std::size_t m = 0; m < pm.size(); ++m) {
        balance(pm[m], model_name(kPmModels[m]));
        const auto& w = ref.signal("G1.omega_m");
        for (std::size_t k = 0; k < ref.time.size(); ++k) {
            worst_w = std::max(worst_w, std::abs(w[k] - at(pm[m], "G1.omega_m", ref.time[k])));
        }
    }
    ok = ok && worst_w <= 0.005;
    d += fmt("worst omega_m gap %.4f%%", 100.0 * worst_w);
    return {ok, d};
}

// 9 ------------------------------------------------------------------------

Outcome c9_negative_sequence()
{
    const auto& ref = reference("large", "asym_fault");
    const auto pm = pm_runs("large", "asym_fault");
    auto peak = [](const RunResult& r, const std::string& v) {
        const auto& q = r.signal(v + ".iq_neg");
        const auto& d = r.signal(v + ".id_neg");
        double m = 0.0;
        for (std::size_t k = 0; k < q.size(); ++k) {
            m = std::max(m, std::hypot(q[k], d[k]));
        }
        return m / r.bases[r.index(v + ".iq_neg")];
    };
    // Phasor bound on every converter, EMT peak on the most exposed one.
    double pm_worst = 0.0, emt_best = 0.0;
    std::string d;
    for (const auto& v : vsc_names("large")) {
        double pm_peak = 0.0;
        for (const auto& r : pm) {
            pm_peak = std::max(pm_peak, peak(r, v));
        }
        const double emt_peak = peak(ref, v);
        pm_worst = std::max(pm_worst, pm_peak);
        emt_best = std::max(emt_best, emt_peak);
        d += fmt("%s: phasor max %.4f pu, EMT peak %.4f pu; ", v.c_str(), pm_peak, emt_peak);
    }
    return {pm_worst <= 0.02 && emt_best >= 0.1, d};
}

// 10 -----------------------------------------------------------------------

Outcome c10_performance()
{
    const std::vector<double> dts{10e-6, 100e-6, 1e-3};
    bool ok = true;
    int used = 0;
    std::string d;
    for (auto m : {VscModel::emt_avg, VscModel::pm_full, VscModel::pm_i1, VscModel::pm_i0, VscModel::pm_pq1}) {
        std::vector<double> w(dts.size(), 1e300);
        try {
            for (int rep = 0; rep < 3; ++rep) {
                for (std::size_t k = 0; k < dts.size(); ++k) {
                    w[k] = std::min(w[k], run("small", "freq_volt", m, dts[k]).wall_clock_s);
                }
            }
        } catch (const NumericalDivergence&) {
            d += fmt("%s diverges, skipped; ", model_name(m));
            continue;
        }
        const double s100 = w[0] / w[1];
        const double s1000 = w[0] / w[2];
        ok = ok && s100 >= 5.0 && s1000 >= 30.0;
        ++used;
        d += fmt("%s %.1fx / %.1fx; ", model_name(m), s100, s1000);
    }
    return {ok && used > 0, "speedup of 100 us / 1 ms over 10 us (fastest of 3): " + d};
}

// 11 -----------------------------------------------------------------------

Outcome c11_numerics()
{
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double rt = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const ThreePhaseSample<double> x{u(gen), u(gen), u(gen), 0.0};
        const double th = 10.0 * u(gen);
        for (auto seq : {Sequence::positive, Sequence::negative}) {
            const auto dq = park(x, th, seq);
            const auto back = inverse_park(dq, th);
            rt = std::max({rt, std::abs(back.a - x.a), std::abs(back.b - x.b), std::abs(back.c - x.c)});
        }
        const auto ab = clarke(x);
        const auto y = inverse_clarke(ab, (x.a + x.b + x.c) / 3.0);
        rt = std::max({rt, std::abs(y.a - x.a), std::abs(y.b - x.b), std::abs(y.c - x.c)});
    }

    double fo = 0.0;
    const cd a = std::polar(1.0, 2.0 * kPi / 3.0);
    for (int k = 0; k < 1000; ++k) {
        ComplexPhasorSet<double> x{{u(gen), u(gen)}, {u(gen), u(gen)}, {u(gen), u(gen)}};
        const auto s = fortescue(x);
        const cd pos = (x.a + a * x.b + a * a * x.c) / 3.0;
        const cd neg = (x.a + a * a * x.b + a * x.c) / 3.0;
        const cd zero = (x.a + x.b + x.c) / 3.0;
        fo = std::max({fo, std::abs(s.pos - pos), std::abs(s.neg - neg), std::abs(s.zero - zero)});
        const auto back = inverse_fortescue(s);
        fo = std::max({fo, std::abs(back.a - x.a), std::abs(back.b - x.b), std::abs(back.c - x.c)});
    }

    auto euler_error = [](double dt) {
        StateVector x{Eigen::VectorXd::Ones(1), {"x"}, 0.0};
        const Derivative f = [](const Eigen::VectorXd& v, double) -> Eigen::VectorXd { return -v; };
        const int n = static_cast<int>(std::lround(1.0 / dt));
        for (int k = 0; k < n; ++k) {
            x = euler_step(f, x, dt);
        }
        return std::abs(x.values[0] - std::exp(-1.0));
    };
    const double r1 = euler_error(1e-2) / euler_error(5e-3);
    const double r2 = euler_error(5e-3) / euler_error(2.5e-3);

    DscBuffer buf(50.0);
    const double w = 2.0 * kPi * 50.0;
    const cd xp(0.8, 0.3), xn(0.2, -0.1);
    double dsc = 0.0;
    for (int k = 0; k <= 8000; ++k) {
        const double t = k * 5e-6;
        const cd z = xp * std::polar(1.0, w * t) + xn * std::polar(1.0, -w * t);
        buf.push(t, {z.real(), z.imag()});
        const auto out = dsc_extract(buf, t);
        if (!out.settled) {
            continue;
        }
        const cd p = xp * std::polar(1.0, w * t);
        const cd n = xn * std::polar(1.0, -w * t);
        dsc = std::max({dsc, std::abs(cd(out.pos.alpha, out.pos.beta) - p), std::abs(cd(out.neg.alpha, out.neg.beta) - n)});
    }

    const bool hand = rmse({1.0, 1.0}, {0.0, 0.0}, 1.0) == 1.0 &&
                      rmse({1.0, 2.0, 3.0}, {1.0, 1.0, 1.0}, 1.0) == std::sqrt(5.0 / 3.0) &&
                      rmse({0.5, -0.25}, {0.5, -0.25}, 1.0) == 0.0;

    const bool ok = rt <= 1e-12 && fo <= 1e-12 && std::abs(r1 - 2.0) < 0.05 && std::abs(r2 - 2.0) < 0.05 &&
                    dsc <= 1e-6 && hand;
    return {ok, fmt("round trip %.1e, Fortescue %.1e, Euler error ratios %.3f %.3f, DSC %.1e, RMSE hand cases %s", rt,
                    fo, r1, r2, dsc, hand ? "exact" : "wrong")};
}

struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> fn;
    double budget_s;
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    g_jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    app.add_option("criteria", only, "Criterion numbers to run (default: all)");
    app.add_option("-j,--jobs", g_jobs, "Worker threads for sweeps");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {1, "tuning exactness", c1_tuning, 1.0},
        {2, "closed-loop fidelity", c2_closed_loop, 120.0},
        {3, "PM I0 analytic oracle", c3_i0_oracle, 10.0},
        {4, "model ordering", c4_ordering, 900.0},
        {5, "guideline rule", c5_guideline, 0.0},
        {6, "steady-state cross-domain equivalence", c6_steady_state, 0.0},
        {7, "transient reconvergence", c7_reconvergence, 0.0},
        {8, "frequency test", c8_frequency, 0.0},
        {9, "negative-sequence optimism", c9_negative_sequence, 0.0},
        {10, "performance scaling", c10_performance, 0.0},
        {11, "numerics suite", c11_numerics, 30.0},
    };
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0.0 && el > c.budget_s) {
            o.pass = false;
            o.detail += fmt(" [over the %.0f s budget]", c.budget_s);
        }
        std::printf("%s C%d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), el);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return std::min(failed, 100);
}
