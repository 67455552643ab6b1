#include <doctest.h>

#include <random>

#include "vscsim/errors.hpp"
#include "vscsim/network.hpp"

using namespace vscsim;
using cd = std::complex<double>;

namespace {

constexpr double kTwoThirdsPi = 2.0 * std::numbers::pi / 3.0;

ComplexPhasorSet<double> balanced_phasors(double mag, double angle = 0.0)
{
    return {std::polar(mag, angle), std::polar(mag, angle - kTwoThirdsPi), std::polar(mag, angle + kTwoThirdsPi)};
}

/// Source bus behind an ideal voltage source, one line, one load.
Topology feeder(double length_km = 100.0)
{
    Topology t;
    t.buses = {{"src"}, {"end"}};
    LineSpec l;
    l.name = "l1";
    l.from = "src";
    l.to = "end";
    l.length_km = length_km;
    t.lines = {l};
    t.loads = {{"ld", "end", 50e6, 10e6}};
    t.sources = {{"grid", "src", SourceKind::ideal_voltage}};
    t.faults = {{"fb", "end", 10.0, parse_phases("B")}};
    return t;
}

/// Single-cycle Fourier phasor of samples taken at t0 + k dt, k < n.
cd fourier(const std::vector<double>& x, double t0, double dt, double w)
{
    cd acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        acc += x[k] * std::polar(1.0, -w * (t0 + static_cast<double>(k) * dt));
    }
    return 2.0 * acc / static_cast<double>(x.size());
}

double stored_energy(const Topology& topo, const EmtNetwork& net, const Eigen::VectorXd& x)
{
    double e = 0.0;
    const Eigen::VectorXd v = net.cy * x;
    for (std::size_t l = 0; l < topo.lines.size(); ++l) {
        const auto d = line_phase_data(topo.lines[l]);
        const Eigen::Vector3d i = x.segment<3>(net.line_state[l]);
        e += 0.5 * i.dot(d.l * i);
        for (auto end : {LineEnd::from, LineEnd::to}) {
            const auto n0 = static_cast<Eigen::Index>(NodeLayout::line_end_node(topo, l, end, 0));
            const Eigen::Vector3d vn = v.segment<3>(n0);
            e += 0.25 * vn.dot(d.c_total * vn);
        }
    }
    for (std::size_t k = 0; k < topo.loads.size(); ++k) {
        const auto [r, lval] = load_rl(topo.loads[k], topo.base.v_base, topo.base.omega_nom());
        (void)r;
        e += 0.5 * lval * x.segment<3>(net.load_state[k]).squaredNorm();
    }
    return e;
}

} // namespace

TEST_CASE("RL branch behind an ideal source follows the analytic step response")
{
    Topology t;
    t.buses = {{"b"}};
    t.branches = {{"rl", "b", "gnd", 2.0, 0.1}};
    t.sources = {{"vs", "b", SourceKind::ideal_voltage}};
    t.validate();
    const auto net = compile_emt(t);
    CHECK(net.n_states() == 3);
    const double tau = 0.1 / 2.0, dt = tau / 100.0, v = 100.0;
    const auto disc = discretize(net, dt);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(3, v);
    for (int k = 1; k <= 300; ++k) {
        x = disc.phi * x + disc.gamma * u;
        const double expect = v / 2.0 * (1.0 - std::exp(-k * dt / tau));
        CHECK(x[0] == doctest::Approx(expect).epsilon(0.01));
    }
}

TEST_CASE("floating star point blocks zero-sequence current")
{
    auto run = [](bool floating) {
        Topology t;
        t.buses = {{"b", 1e-6}};
        t.branches = {{"rl", "b", "gnd", 5.0, 0.01}};
        t.sources = {{"vs", "b", SourceKind::thevenin, 1.0, 0.05, floating}};
        const auto net = compile_emt(t);
        const auto disc = discretize(net, 50e-6);
        Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.n_states()));
        const Eigen::VectorXd u = Eigen::Vector3d(300.0, -50.0, 20.0);
        double worst = 0.0;
        for (int k = 0; k < 4000; ++k) {
            x = disc.phi * x + disc.gamma * u;
            worst = std::max(worst, std::abs(x.segment<3>(net.source_state[0]).sum()));
        }
        return std::pair{worst, Eigen::Vector3d(x.segment<3>(net.source_state[0]))};
    };
    const auto [grounded_sum, grounded_i] = run(false);
    const auto [floating_sum, floating_i] = run(true);
    CHECK(grounded_sum > 1.0);
    CHECK(floating_sum < 1e-9);
    // DC steady state: the zero-sum part of the EMF drives 1 + 5 ohm per phase.
    const Eigen::Vector3d e(300.0, -50.0, 20.0);
    const Eigen::Vector3d expect = (e.array() - e.mean()).matrix() / 6.0;
    CHECK((floating_i - expect).norm() < 1e-6);
    CHECK((grounded_i - e / 6.0).norm() < 1e-6);
}

TEST_CASE("unsourced network is dissipative")
{
    Topology t = feeder();
    t.sources.clear();
    t.loads.push_back({"ld0", "src", 20e6, 5e6});
    const auto net = compile_emt(t);
    const auto disc = discretize(net, 20e-6);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd x(net.n_states());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        x[k] = u(rng) * (k < static_cast<Eigen::Index>(net.n_inductor) ? 100.0 : 1e5);
    }
    double e = stored_energy(t, net, x);
    const double e0 = e;
    for (int k = 0; k < 20000; ++k) {
        x = disc.phi * x;
        const double next = stored_energy(t, net, x);
        CHECK(next <= e * (1.0 + 1e-12));
        e = next;
    }
    CHECK(e < 1e-6 * e0);
}

TEST_CASE("small-system layout has the expected state count")
{
    Topology t;
    t.buses = {{"bus1"}, {"bus2"}};
    t.lines = {{"line", "bus1", "bus2"}};
    t.loads = {{"load", "bus2", 30e6, 10e6}};
    t.sources = {{"sg", "bus1", SourceKind::thevenin, 4.84, 0.45},
                 {"vsc", "bus2", SourceKind::thevenin, 2.42, 0.23},
                 {"harm", "bus2", SourceKind::current}};
    t.validate();
    const auto net = compile_emt(t);
    // line 3 + load 3 + two Thevenin sources 6 inductor currents, two buses x 3 voltages
    CHECK(net.n_inductor == 12);
    CHECK(net.layout.n_groups() == 6);
    CHECK(net.n_states() == 18);
    CHECK(net.n_inputs == 9);
}

TEST_CASE("phasor solution matches the EMT steady state")
{
    const Topology t = feeder();
    const double w = t.base.omega_nom();
    const auto vs = balanced_phasors(t.base.v_peak(), 0.1);

    const auto pm = compile_pm(t);
    const auto sol = solve_pm(pm, t, PmInjections{{vs}});
    const auto v_end = sol.bus(1);

    const double dt = 20e-6;
    const auto net = compile_emt(t);
    const auto disc = discretize(net, dt);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(net.n_states());
    const int n_cycle = static_cast<int>(std::lround(0.02 / dt));
    const int n_total = 25 * n_cycle;
    std::array<std::vector<double>, 3> rec;
    double t_rec = 0.0;
    for (int k = 0; k < n_total; ++k) {
        const double tm = (k + 0.5) * dt;
        const auto s = phasors_at(vs, w * tm);
        const Eigen::VectorXd u = s.vec();
        x = disc.phi * x + disc.gamma * u;
        if (k >= n_total - n_cycle) {
            if (rec[0].empty()) {
                t_rec = (k + 1) * dt;
            }
            const Eigen::VectorXd v = net.cy * x + net.dy * u;
            for (int p = 0; p < 3; ++p) {
                rec[static_cast<std::size_t>(p)].push_back(v[3 + p]);
            }
        }
    }
    for (std::size_t p = 0; p < 3; ++p) {
        const cd emt = fourier(rec[p], t_rec, dt, w);
        CHECK(std::abs(emt) == doctest::Approx(std::abs(v_end[p])).epsilon(0.005));
        CHECK(std::abs(std::arg(emt / v_end[p])) < 0.5 * std::numbers::pi / 180.0);
    }
}

TEST_CASE("feeder with its breaker open leaves the load bus dead")
{
    const Topology t = feeder();
    SwitchGear sw(t, Domain::pm);
    CHECK(sw.apply({0.0, EventAction::open_breaker_phase, "l1:to", "ABC"}));
    CHECK_FALSE(sw.apply({0.0, EventAction::open_breaker_phase, "l1:to", "ABC"}));
    const auto pm = compile_pm(t, sw.state());
    const auto sol = solve_pm(pm, t, PmInjections{{balanced_phasors(1e5)}});
    for (std::size_t p = 0; p < 3; ++p) {
        CHECK(std::abs(sol.bus(1)[p]) < 1e-9);
    }
}

TEST_CASE("balanced network with balanced sources has no unbalance")
{
    Topology t;
    t.buses = {{"a"}, {"b"}, {"c"}};
    t.lines = {{"ab", "a", "b", 80.0}, {"bc", "b", "c", 120.0}, {"ca", "c", "a", 60.0}};
    t.loads = {{"lb", "b", 80e6, 20e6}, {"lc", "c", 40e6, 30e6}};
    t.sources = {{"g", "a", SourceKind::thevenin, 1.0, 0.1}, {"i", "c", SourceKind::current}};
    const auto pm = compile_pm(t);
    const auto sol = solve_pm(pm, t, PmInjections{{balanced_phasors(1.8e5, 0.2), balanced_phasors(150.0, -0.4)}});
    for (std::size_t b = 0; b < 3; ++b) {
        const auto s = fortescue(sol.bus(b));
        CHECK(std::abs(s.neg) < 1e-9 * std::abs(s.pos));
        CHECK(std::abs(s.zero) < 1e-9 * std::abs(s.pos));
    }
}

TEST_CASE("phasor solve is linear in the injections")
{
    Topology t = feeder();
    t.sources.push_back({"inj", "end", SourceKind::current});
    const auto pm = compile_pm(t);
    const PmInjections i1{{balanced_phasors(1e5, 0.3), ComplexPhasorSet<double>{{10.0, 2.0}, {-3.0, 1.0}, {0.0, 5.0}}}};
    const PmInjections i2{{ComplexPhasorSet<double>{{2e4, 0.0}, {0.0, 0.0}, {-1e4, 3e3}}, balanced_phasors(80.0)}};
    const double al = 0.7, be = -1.9;
    PmInjections mix;
    for (std::size_t s = 0; s < 2; ++s) {
        ComplexPhasorSet<double> m;
        for (std::size_t p = 0; p < 3; ++p) {
            m[p] = al * i1.values[s][p] + be * i2.values[s][p];
        }
        mix.values.push_back(m);
    }
    const auto s1 = solve_pm(pm, t, i1);
    const auto s2 = solve_pm(pm, t, i2);
    const auto sm = solve_pm(pm, t, mix);
    const Eigen::VectorXcd expect = al * s1.node_voltage + be * s2.node_voltage;
    CHECK((sm.node_voltage - expect).norm() <= 1e-12 * expect.norm());
    CHECK(sm.kcl_residual < 1e-9);

    const auto zero = solve_pm(pm, t, PmInjections{{ComplexPhasorSet<double>{}, ComplexPhasorSet<double>{}}});
    CHECK(zero.node_voltage.norm() == 0.0);
}

TEST_CASE("fault-on phasor solve matches a hand-assembled dense inverse")
{
    Topology t;
    t.buses = {{"s"}, {"f"}};
    LineSpec line{"l", "s", "f", 50.0};
    t.lines = {line};
    const double rs = 1.5, ls = 0.08;
    t.sources = {{"g", "s", SourceKind::thevenin, rs, ls}};
    t.faults = {{"flt", "f", 10.0, parse_phases("B"), true}};
    const auto pm = compile_pm(t);
    const auto e = balanced_phasors(1.79e5);
    const auto sol = solve_pm(pm, t, PmInjections{{e}});

    // Oracle: 6x6 nodal matrix from sequence data.
    const double w = t.base.omega_nom(), len = line.length_km;
    auto expand = [](cd zero, cd pos) {
        Eigen::Matrix3cd m = Eigen::Matrix3cd::Constant((zero - pos) / 3.0);
        m.diagonal().setConstant((zero + 2.0 * pos) / 3.0);
        return m;
    };
    const Eigen::Matrix3cd z = expand(cd(line.r0, w * line.l0) * len, cd(line.r1, w * line.l1) * len);
    const Eigen::Matrix3cd ysh = expand(cd(0.0, w * line.c0 * len / 2.0), cd(0.0, w * line.c1 * len / 2.0));
    const Eigen::Matrix3cd yser = z.inverse();
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(6, 6);
    y.block<3, 3>(0, 0) = yser + ysh + Eigen::Matrix3cd::Identity() / cd(rs, w * ls);
    y.block<3, 3>(3, 3) = yser + ysh;
    y.block<3, 3>(0, 3) = -yser;
    y.block<3, 3>(3, 0) = -yser;
    y(4, 4) += 0.1;
    Eigen::VectorXcd inj = Eigen::VectorXcd::Zero(6);
    for (int p = 0; p < 3; ++p) {
        inj[p] = e[static_cast<std::size_t>(p)] / cd(rs, w * ls);
    }
    const Eigen::VectorXcd v = y.inverse() * inj;
    for (int n = 0; n < 6; ++n) {
        CHECK(std::abs(sol.node_voltage[n] - v[n]) < 1e-9 * std::abs(v[n]) + 1e-9);
    }
}

TEST_CASE("inserting a fault touches one 3x3 block of the admittance matrix")
{
    const Topology t = feeder();
    SwitchGear sw(t, Domain::pm);
    const auto before = compile_pm(t, sw.state());
    CHECK(sw.apply({0.0, EventAction::apply_fault, "fb"}));
    const auto after = compile_pm(t, sw.state());
    const Eigen::MatrixXcd diff = after.y_full - before.y_full;
    const Eigen::Index n0 = 3;
    for (Eigen::Index i = 0; i < diff.rows(); ++i) {
        for (Eigen::Index j = 0; j < diff.cols(); ++j) {
            const bool inside = i >= n0 && i < n0 + 3 && j >= n0 && j < n0 + 3;
            if (!inside) {
                CHECK(diff(i, j) == cd(0.0, 0.0));
            }
        }
    }
    CHECK(diff(4, 4) == cd(0.1, 0.0));
    CHECK_THROWS_AS(sw.apply({0.0, EventAction::apply_fault, "nope"}), UnknownTarget);
}

TEST_CASE("EMT breaker opens each phase at a current zero within half a cycle")
{
    Topology t = feeder();
    t.buses[1].stray_capacitance = 20e-9;
    const double dt = 10e-6, w = t.base.omega_nom();
    const auto vs = balanced_phasors(t.base.v_peak());
    EmtNetworkCache cache(t, dt);
    SwitchGear gear(t, Domain::emt);
    const auto* entry = &cache.get(gear.state());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(entry->net.n_states());
    const double t_cmd = 0.2;
    bool commanded = false;
    double t_all_open = -1.0;
    std::array<double, 3> current_at_open{};
    for (int k = 0; k < 30000 && t_all_open < 0.0; ++k) {
        const double tm = k * dt;
        const Eigen::VectorXd u = phasors_at(vs, w * (tm + 0.5 * dt)).vec();
        if (!commanded && tm >= t_cmd) {
            commanded = true;
            CHECK_FALSE(gear.apply({tm, EventAction::open_breaker_phase, "l1:to", "ABC"}));
            CHECK(gear.pending().size() == 3);
        }
        const auto line_current = [&](const PendingOpening& p) { return x[entry->net.line_state[0] + p.phase]; };
        if (commanded && gear.update_pending(line_current)) {
            for (int p = 0; p < 3; ++p) {
                if (gear.state().breaker_open[0][1][static_cast<std::size_t>(p)] &&
                    current_at_open[static_cast<std::size_t>(p)] == 0.0) {
                    current_at_open[static_cast<std::size_t>(p)] = std::abs(x[entry->net.line_state[0] + p]) + 1e-300;
                }
            }
            const auto* next = &cache.get(gear.state());
            x = remap_state(entry->net, next->net, x, u);
            entry = next;
            if (gear.pending().empty()) {
                t_all_open = tm;
            }
        }
        x = entry->disc.phi * x + entry->disc.gamma * u;
    }
    REQUIRE(t_all_open > 0.0);
    CHECK(t_all_open - t_cmd <= 0.01 + 2 * dt);
    // Interrupted near a zero: far below the ~140 A load current peak.
    for (double i : current_at_open) {
        CHECK(i < 5.0);
    }
}

TEST_CASE("harmonic source spectrum")
{
    const double w = 2.0 * std::numbers::pi * 50.0;
    const auto h = default_harmonic_spectrum(100.0);
    REQUIRE(h.components.size() == 7);
    CHECK(h.components[1].first == 3);
    CHECK(h.components[1].second == 0.25);

    const int n = 4096;
    const double period = 0.02;
    for (const auto& [order, frac] : h.components) {
        cd acc = 0.0;
        for (int k = 0; k < n; ++k) {
            const double tm = period * k / n;
            acc += harmonic_injection_emt(h, w, tm).b * std::polar(1.0, -order * w * tm);
        }
        const double mag = std::abs(2.0 * acc / static_cast<double>(n));
        CHECK(mag == doctest::Approx(frac * 100.0).epsilon(0.01));
    }

    for (double tm : {0.0013, 0.0171, 0.532}) {
        const auto inst = harmonic_injection_emt(h, w, tm);
        const auto ph = harmonic_injection_pm(h, w, tm);
        const auto back = phasors_at(ph, w * tm);
        CHECK(back.a == doctest::Approx(inst.a).epsilon(1e-9));
        CHECK(back.b == doctest::Approx(inst.b).epsilon(1e-9));
        CHECK(back.c == doctest::Approx(inst.c).epsilon(1e-9));
    }

    HarmonicSpectrum none{100.0, {{5, 0.0}}};
    CHECK(harmonic_injection_emt(none, w, 0.01).a == 0.0);
}

TEST_CASE("structural errors are reported")
{
    Topology t = feeder();
    t.loads.push_back({"bad", "nowhere", 1e6, 0.0});
    CHECK_THROWS_AS(t.validate(), ConfigError);

    Topology island = feeder();
    island.buses.push_back({"lonely"});
    CHECK_THROWS_AS(island.validate(), ConfigError);

    Topology no_cap;
    no_cap.buses = {{"a"}, {"b"}};
    no_cap.branches = {{"x", "a", "b", 1.0, 0.01}};
    no_cap.loads = {{"l", "b", 1e6, 1e5}};
    no_cap.sources = {{"v", "a", SourceKind::ideal_voltage}};
    no_cap.validate();
    CHECK_THROWS_AS(compile_emt(no_cap), SingularNetwork);

    Topology floating = feeder();
    floating.loads.clear();
    floating.faults.clear();
    SwitchState sw(floating);
    sw.breaker_open[0][1] = kAllPhases;
    CHECK_THROWS_AS(compile_pm(floating, sw), SingularNetwork);

    CHECK_THROWS_AS(parse_phases("D"), ConfigError);
    CHECK(phases_to_string(parse_phases("ca")) == "AC");
}
