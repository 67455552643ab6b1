#include "vscsim/scenarios.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "vscsim/errors.hpp"

namespace vscsim {

using cd = std::complex<double>;

namespace {

const cd kA = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);

ComplexPhasorSet<double> balanced(cd x)
{
    return {x, x * kA * kA, x * kA};
}

std::string features_string(const VscFeatures& f)
{
    std::string s;
    auto add = [&](bool on, const char* n) {
        if (on) {
            s += (s.empty() ? "" : " ") + std::string(n);
        }
    };
    add(f.droops, "droops");
    add(f.lvrt, "lvrt");
    add(f.neg_seq, "neg_seq");
    return s.empty() ? "none" : s;
}

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Column indices of the signals one converter reports.
struct VscColumns {
    std::size_t first{0};
};

constexpr const char* kVscSignals[] = {"P_ac",   "Q_ac",   "iq_pos", "id_pos", "iq_neg", "id_neg", "vq_pos",
                                       "vd_pos", "vq_neg", "vd_neg", "f",      "iq_ref", "id_ref", "lvrt",
                                       "I_a",    "I_b",    "I_c",    "V_a",    "V_b",    "V_c"};

VscColumns add_vsc_columns(RunResult& r, const VscUnit& u)
{
    const auto& p = u.params;
    const double bases[] = {p.s_rated, p.s_rated, p.i_rated(), p.i_rated(), p.i_rated(), p.i_rated(), p.v_g_pk,
                            p.v_g_pk,  p.v_g_pk,  p.v_g_pk,    p.f_nom,     p.i_rated(), p.i_rated(), 1.0,
                            p.i_rated(), p.i_rated(), p.i_rated(), p.v_g_pk, p.v_g_pk, p.v_g_pk};
    VscColumns c{r.names.size()};
    for (std::size_t k = 0; k < std::size(kVscSignals); ++k) {
        r.add_signal(u.name + "." + kVscSignals[k], bases[k]);
    }
    return c;
}

void push_vsc(RunResult& r, const VscColumns& c, const VscSignals& s, const ThreePhaseSample<double>& i,
              const ThreePhaseSample<double>& v)
{
    const double vals[] = {s.p,       s.q,       s.i.pos.q, s.i.pos.d, s.i.neg.q, s.i.neg.d, s.v.pos.q,
                           s.v.pos.d, s.v.neg.q, s.v.neg.d, s.f,       s.iq_ref,  s.id_ref,  s.lvrt ? 1.0 : 0.0,
                           i.a,       i.b,       i.c,       v.a,       v.b,       v.c};
    for (std::size_t k = 0; k < std::size(vals); ++k) {
        r.data[c.first + k].push_back(vals[k]);
    }
}

std::size_t add_machine_columns(RunResult& r, const SgMachine& m)
{
    const std::size_t first = r.names.size();
    r.add_signal(m.name + ".Te", 1.0);
    r.add_signal(m.name + ".omega_m", 1.0);
    r.add_signal(m.name + ".delta", 1.0);
    for (const char* ph : {"I_a", "I_b", "I_c"}) {
        r.add_signal(m.name + "." + ph, m.i_peak_base());
    }
    return first;
}

void push_machine(RunResult& r, std::size_t first, double te, const SgState& x, const ThreePhaseSample<double>& i)
{
    const double vals[] = {te, x.omega, x.delta, i.a, i.b, i.c};
    for (std::size_t k = 0; k < std::size(vals); ++k) {
        r.data[first + k].push_back(vals[k]);
    }
}

std::size_t add_bus_columns(RunResult& r, const Topology& t)
{
    const std::size_t first = r.names.size();
    for (const auto& b : t.buses) {
        for (const char* ph : {"V_a", "V_b", "V_c"}) {
            r.add_signal(b.name + "." + ph, t.base.v_peak());
        }
    }
    return first;
}

ThreePhaseSample<double> instantaneous(const ComplexPhasorSet<double>& x, double wt, double t)
{
    return phasors_at(x, wt, t);
}

std::size_t record_stride(double interval, double dt)
{
    return static_cast<std::size_t>(std::max(1.0, std::floor(interval / dt + 1e-9)));
}

void fill_metadata(RunResult& r, const SystemModel& sys, const ScenarioConfig& cfg, const VscFeatures& feat,
                   double duration, double record_interval, std::size_t steps)
{
    auto& m = r.metadata;
    m["system"] = sys.name;
    m["test"] = cfg.test;
    m["model"] = model_name(cfg.model);
    m["dt"] = num(cfg.dt);
    m["duration"] = num(duration);
    m["record_interval"] = num(record_interval);
    m["steps"] = std::to_string(steps);
    m["features"] = features_string(feat);
    m["droops"] = feat.droops ? "true" : "false";
    m["lvrt"] = feat.lvrt ? "true" : "false";
    m["neg_seq"] = feat.neg_seq ? "true" : "false";
    std::string ov;
    for (const auto& [k, v] : cfg.overrides) {
        ov += (ov.empty() ? "" : ";") + k + "=" + v;
    }
    m["overrides"] = ov;
    for (const auto& u : sys.vscs) {
        const auto g = tune_gains(u.params);
        m[u.name + ".kp_pll"] = num(g.kp_pll);
        m[u.name + ".tau_i_pll"] = num(g.tau_i_pll);
        m[u.name + ".kp_c"] = num(g.kp_c);
        m[u.name + ".tau_i_c"] = num(g.tau_i_c);
        m[u.name + ".kp_pq"] = num(g.kp_pq);
        m[u.name + ".tau_i_pq"] = num(g.tau_i_pq);
        m[u.name + ".tau_c"] = num(g.tau_c);
        m[u.name + ".tau_pq"] = num(g.tau_pq);
    }
}

/// Events that touch devices rather than the network.
struct DeviceTargets {
    std::vector<std::string> vscs;
    std::vector<std::string> harmonics;

    std::optional<std::size_t> vsc(const std::string& n) const
    {
        for (std::size_t k = 0; k < vscs.size(); ++k) {
            if (vscs[k] == n) {
                return k;
            }
        }
        return std::nullopt;
    }
    std::optional<std::size_t> harmonic(const std::string& n) const
    {
        for (std::size_t k = 0; k < harmonics.size(); ++k) {
            if (harmonics[k] == n) {
                return k;
            }
        }
        return std::nullopt;
    }
};

DeviceTargets device_targets(const SystemModel& sys)
{
    DeviceTargets d;
    for (const auto& v : sys.vscs) {
        d.vscs.push_back(v.name);
    }
    for (const auto& h : sys.harmonics) {
        d.harmonics.push_back(h.name);
    }
    return d;
}

template <typename Vsc>
void apply_device_event(const Event& e, const DeviceTargets& d, std::vector<Vsc>& vscs, std::vector<bool>& harm_on)
{
    if (e.action == EventAction::set_setpoint) {
        const auto k = d.vsc(e.target);
        if (!k) {
            throw UnknownTarget("no converter named '" + e.target + "'");
        }
        if (e.key == "p") {
            vscs[*k].set_p_ref(e.value);
        } else {
            vscs[*k].set_q_ref(e.value);
        }
    } else if (e.action == EventAction::enable_harmonics) {
        const auto k = d.harmonic(e.target);
        if (!k) {
            throw UnknownTarget("no harmonic source named '" + e.target + "'");
        }
        harm_on[*k] = true;
    }
}

void check_machine(const SgState& x, const std::string& name, double t, double dt)
{
    const bool ok = std::isfinite(x.delta) && std::isfinite(x.eqp) && std::isfinite(x.psi1d) &&
                    std::isfinite(x.edpp) && x.omega > 0.8 && x.omega < 1.2;
    if (!ok) {
        throw NumericalDivergence("machine " + name + " left its stable range at t = " + std::to_string(t), t, dt);
    }
}

double terminal_v_pu(const ThreePhaseSample<double>& v, double v_pk)
{
    const auto ab = clarke(v);
    return std::hypot(ab.alpha, ab.beta) / v_pk;
}

RunResult run_emt(const SystemModel& sys, const ScenarioConfig& cfg, const VscFeatures& feat, double duration,
                  double record_interval)
{
    const Topology topo = sys.topology(Domain::emt);
    const double w = topo.base.omega_nom();
    const double dt = cfg.dt;
    const double v_pk = topo.base.v_peak();
    const SteadyState ss = initialize_steady_state(sys);
    const std::size_t nm = sys.machines.size();
    const std::size_t nv = sys.vscs.size();
    const std::size_t nh = sys.harmonics.size();

    std::vector<SgMachine> machines;
    for (std::size_t k = 0; k < nm; ++k) {
        machines.push_back(sys.machines[k].machine);
        machines.back().x = ss.machines[k];
    }
    std::vector<EmtVsc> vscs;
    for (std::size_t k = 0; k < nv; ++k) {
        const auto& u = sys.vscs[k];
        vscs.emplace_back(u.params, feat);
        vscs.back().initialize(ss.vsc_v[k], ss.vsc_i[k], u.p_set, u.q_set, 0.0, dt);
    }
    std::vector<HarmonicSpectrum> spectra;
    std::vector<bool> harm_on(nh, false);
    for (const auto& h : sys.harmonics) {
        spectra.push_back(h.spectrum(topo.base));
    }
    const DeviceTargets targets = device_targets(sys);

    SwitchGear sw(topo, Domain::emt);
    EmtNetworkCache cache(topo, dt);
    const EmtNetworkCache::Entry* net = &cache.get(sw.state());

    // Sinusoidal steady state of the compiled network at the initial inputs.
    Eigen::VectorXcd uc = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(net->net.n_inputs));
    for (std::size_t k = 0; k < nm; ++k) {
        const auto e = balanced(subtransient_emf(machines[k].params, machines[k].x) * v_pk);
        for (std::size_t p = 0; p < 3; ++p) {
            uc[static_cast<Eigen::Index>(3 * k + p)] = e[p];
        }
    }
    for (std::size_t k = 0; k < nv; ++k) {
        const auto e = balanced(vscs[k].steady_emf(ss.vsc_v[k], ss.vsc_i[k]));
        for (std::size_t p = 0; p < 3; ++p) {
            uc[static_cast<Eigen::Index>(3 * (nm + k) + p)] = e[p];
        }
    }
    const auto n_states = static_cast<Eigen::Index>(net->net.n_states());
    const Eigen::MatrixXcd jw = cd(0.0, w) * Eigen::MatrixXcd::Identity(n_states, n_states) -
                                net->net.a.cast<cd>();
    const Eigen::VectorXcd x_ph = jw.partialPivLu().solve(net->net.b.cast<cd>() * uc);
    Eigen::VectorXd x = x_ph.real();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net->net.n_inputs));
    Eigen::VectorXd x_next(x.size());

    std::vector<std::size_t> machine_bus(nm), vsc_bus(nv);
    for (std::size_t k = 0; k < nm; ++k) {
        machine_bus[k] = *topo.bus_index(sys.machines[k].bus);
    }
    for (std::size_t k = 0; k < nv; ++k) {
        vsc_bus[k] = *topo.bus_index(sys.vscs[k].bus);
    }

    RunResult r;
    std::vector<std::size_t> m_cols;
    for (const auto& m : machines) {
        m_cols.push_back(add_machine_columns(r, m));
    }
    std::vector<VscColumns> v_cols;
    for (const auto& v : sys.vscs) {
        v_cols.push_back(add_vsc_columns(r, v));
    }
    const std::size_t bus_cols = add_bus_columns(r, topo);

    const auto n_steps = static_cast<std::size_t>(std::llround(duration / dt));
    const std::size_t stride = record_stride(record_interval, dt);
    const std::size_t n_rec = n_steps / stride + 1;
    r.time.reserve(n_rec);
    for (auto& col : r.data) {
        col.reserve(n_rec);
    }
    fill_metadata(r, sys, cfg, feat, duration, record_interval, n_steps);

    EventSchedule schedule(sys.test(cfg.test).events);
    std::vector<double> te(nm, 0.0);
    std::vector<ThreePhaseSample<double>> m_i(nm);
    const double bound = cfg.divergence_bound * v_pk;

    auto node_v = [&](std::size_t bus, double t) {
        const auto& cy = net->net.cy;
        const auto& dy = net->net.dy;
        ThreePhaseSample<double> v;
        v.t = t;
        for (int p = 0; p < 3; ++p) {
            const auto n = static_cast<Eigen::Index>(NodeLayout::bus_node(bus, p));
            const double val = cy.row(n).dot(x) + dy.row(n).dot(u);
            (p == 0 ? v.a : (p == 1 ? v.b : v.c)) = val;
        }
        return v;
    };
    auto source_i = [&](std::size_t s, double t) {
        ThreePhaseSample<double> i;
        i.t = t;
        const int o = net->net.source_state[s];
        if (o >= 0) {
            i.a = x[o];
            i.b = x[o + 1];
            i.c = x[o + 2];
        }
        return i;
    };
    auto switch_to = [&]() {
        const auto* next = &cache.get(sw.state());
        x = remap_state(net->net, next->net, x, u);
        net = next;
        x_next.resize(x.size());
    };

    const auto wall0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        bool changed = false;
        for (const auto& e : schedule.due(t + kTimeEpsilon)) {
            if (sw.handles(e.action)) {
                changed |= sw.apply(e);
            } else {
                apply_device_event(e, targets, vscs, harm_on);
            }
        }
        if (changed) {
            switch_to();
        }
        if (!sw.pending().empty()) {
            const bool opened = sw.update_pending([&](const PendingOpening& po) {
                if (po.kind == PendingOpening::Kind::breaker) {
                    return x[net->net.line_state[po.index] + po.phase];
                }
                return x[net->net.source_state[po.index] + po.phase];
            });
            if (opened) {
                switch_to();
            }
        }

        const double tm = t + 0.5 * dt;
        const cd rot_mid = std::polar(1.0, w * tm);
        for (std::size_t m = 0; m < nm; ++m) {
            auto& mc = machines[m];
            m_i[m] = source_i(m, t);
            const auto ab = clarke(m_i[m]);
            const cd i_pu = cd(ab.alpha, ab.beta) * std::polar(1.0, -w * t) / mc.i_peak_base();
            const cd epp = subtransient_emf(mc.params, mc.x);
            te[m] = (epp * std::conj(i_pu)).real();
            const double vm = terminal_v_pu(node_v(machine_bus[m], t), v_pk);
            sg_step_explicit(mc.params, mc.avr, mc.gov, mc.x, i_pu, vm, dt);
            const auto& so = sw.state().source_open[m];
            if (!(so[0] && so[1] && so[2])) {
                check_machine(mc.x, mc.name, t, dt);
            }
            // Stator-side EMF includes the transformer term of the rotor flux,
            // without which fast damper dynamics feed negative sequence.
            const cd epp_new = subtransient_emf(mc.params, mc.x);
            const cd e = (0.5 * (epp + epp_new) - cd(0.0, 1.0) * (epp_new - epp) / (w * dt)) * v_pk * rot_mid;
            const auto eb = balanced(e);
            for (std::size_t p = 0; p < 3; ++p) {
                u[static_cast<Eigen::Index>(3 * m + p)] = eb[p].real();
            }
        }
        std::vector<ThreePhaseSample<double>> v_meas(nv), i_meas(nv);
        for (std::size_t v = 0; v < nv; ++v) {
            v_meas[v] = node_v(vsc_bus[v], t);
            i_meas[v] = source_i(nm + v, t);
            const auto vc = vscs[v].step(t, dt, v_meas[v], i_meas[v]);
            const auto o = static_cast<Eigen::Index>(3 * (nm + v));
            u[o] = vc.a;
            u[o + 1] = vc.b;
            u[o + 2] = vc.c;
        }
        for (std::size_t h = 0; h < nh; ++h) {
            const auto o = static_cast<Eigen::Index>(3 * (nm + nv + h));
            if (harm_on[h]) {
                const auto ih = harmonic_injection_emt(spectra[h], w, tm);
                u[o] = ih.a;
                u[o + 1] = ih.b;
                u[o + 2] = ih.c;
            } else {
                u.segment(o, 3).setZero();
            }
        }

        if (k % stride == 0) {
            r.time.push_back(t);
            for (std::size_t m = 0; m < nm; ++m) {
                push_machine(r, m_cols[m], te[m], machines[m].x, m_i[m]);
            }
            for (std::size_t v = 0; v < nv; ++v) {
                push_vsc(r, v_cols[v], vscs[v].signals(), i_meas[v], v_meas[v]);
            }
            for (std::size_t b = 0; b < topo.buses.size(); ++b) {
                const auto vb = node_v(b, t);
                r.data[bus_cols + 3 * b].push_back(vb.a);
                r.data[bus_cols + 3 * b + 1].push_back(vb.b);
                r.data[bus_cols + 3 * b + 2].push_back(vb.c);
            }
        }

        x_next.noalias() = net->disc.phi * x;
        x_next.noalias() += net->disc.gamma * u;
        x.swap(x_next);
        if (!x.allFinite() || x.cwiseAbs().maxCoeff() > bound) {
            throw NumericalDivergence("network state diverged at t = " + std::to_string(t + dt), t + dt, dt);
        }
    }
    r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return r;
}

RunResult run_pm(const SystemModel& sys, const ScenarioConfig& cfg, const VscFeatures& feat, double duration,
                 double record_interval)
{
    const Topology topo = sys.topology(Domain::pm);
    const double w = topo.base.omega_nom();
    const double dt = cfg.dt;
    const double v_pk = topo.base.v_peak();
    const SteadyState ss = initialize_steady_state(sys);
    const std::size_t nm = sys.machines.size();
    const std::size_t nv = sys.vscs.size();
    const std::size_t nh = sys.harmonics.size();

    std::vector<SgMachine> machines;
    for (std::size_t k = 0; k < nm; ++k) {
        machines.push_back(sys.machines[k].machine);
        machines.back().x = ss.machines[k];
    }
    std::vector<PmVsc> vscs;
    for (std::size_t k = 0; k < nv; ++k) {
        const auto& u = sys.vscs[k];
        vscs.emplace_back(cfg.model, u.params, feat);
        vscs.back().initialize(ss.vsc_v[k], ss.vsc_i[k], u.p_set, u.q_set);
    }
    std::vector<HarmonicSpectrum> spectra;
    std::vector<bool> harm_on(nh, false);
    for (const auto& h : sys.harmonics) {
        spectra.push_back(h.spectrum(topo.base));
    }
    const DeviceTargets targets = device_targets(sys);

    SwitchGear sw(topo, Domain::pm);
    PmNetworkCache cache(topo);

    RunResult r;
    std::vector<std::size_t> m_cols;
    for (const auto& m : machines) {
        m_cols.push_back(add_machine_columns(r, m));
    }
    std::vector<VscColumns> v_cols;
    for (const auto& v : sys.vscs) {
        v_cols.push_back(add_vsc_columns(r, v));
    }
    const std::size_t bus_cols = add_bus_columns(r, topo);

    const auto n_steps = static_cast<std::size_t>(std::llround(duration / dt));
    const std::size_t stride = record_stride(record_interval, dt);
    const std::size_t n_rec = n_steps / stride + 1;
    r.time.reserve(n_rec);
    for (auto& col : r.data) {
        col.reserve(n_rec);
    }
    fill_metadata(r, sys, cfg, feat, duration, record_interval, n_steps);

    EventSchedule schedule(sys.test(cfg.test).events);
    PmInjections inj;
    inj.values.resize(topo.sources.size());
    std::vector<ComplexPhasorSet<double>> emf(nm);

    const auto wall0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        for (const auto& e : schedule.due(t + kTimeEpsilon)) {
            if (sw.handles(e.action)) {
                sw.apply(e);
            } else {
                apply_device_event(e, targets, vscs, harm_on);
            }
        }
        const PmNetwork& net = cache.get(sw.state());
        for (std::size_t m = 0; m < nm; ++m) {
            emf[m] = balanced(subtransient_emf(machines[m].params, machines[m].x) * v_pk);
            inj.values[m] = emf[m];
        }
        for (std::size_t v = 0; v < nv; ++v) {
            inj.values[nm + v] = vscs[v].injection();
        }
        for (std::size_t h = 0; h < nh; ++h) {
            inj.values[nm + nv + h] = harm_on[h] ? harmonic_injection_pm(spectra[h], w, t) : ComplexPhasorSet<double>{};
        }
        const PmSolution sol = solve_pm(net, topo, inj);
        for (std::size_t b = 0; b < topo.buses.size(); ++b) {
            const auto vb = sol.bus(b);
            const double m = std::max({std::abs(vb.a), std::abs(vb.b), std::abs(vb.c)});
            if (!std::isfinite(m) || m > cfg.divergence_bound * v_pk) {
                throw NumericalDivergence("bus voltage diverged at t = " + std::to_string(t), t, dt);
            }
        }

        const bool record = k % stride == 0;
        const double wt = w * t;
        if (record) {
            r.time.push_back(t);
        }
        for (std::size_t m = 0; m < nm; ++m) {
            auto& mc = machines[m];
            const auto i = source_current(net, topo, m, emf[m], sol);
            const cd i_pu = fortescue(i).pos / mc.i_peak_base();
            const cd epp = subtransient_emf(mc.params, mc.x);
            const double te = (epp * std::conj(i_pu)).real();
            const double vm = std::abs(fortescue(sol.bus(*topo.bus_index(sys.machines[m].bus))).pos) / v_pk;
            if (record) {
                push_machine(r, m_cols[m], te, mc.x, instantaneous(i, wt, t));
            }
            sg_step_phasor(mc.params, mc.avr, mc.gov, mc.x, i_pu, vm, dt);
            const auto& so = sw.state().source_open[m];
            if (!(so[0] && so[1] && so[2])) {
                check_machine(mc.x, mc.name, t, dt);
            }
        }
        for (std::size_t v = 0; v < nv; ++v) {
            const auto vb = sol.bus(*topo.bus_index(sys.vscs[v].bus));
            const auto i = inj.values[nm + v];
            vscs[v].step(dt, vb);
            if (record) {
                push_vsc(r, v_cols[v], vscs[v].signals(), instantaneous(i, wt, t), instantaneous(vb, wt, t));
            }
        }
        if (record) {
            for (std::size_t b = 0; b < topo.buses.size(); ++b) {
                const auto vb = instantaneous(sol.bus(b), wt, t);
                r.data[bus_cols + 3 * b].push_back(vb.a);
                r.data[bus_cols + 3 * b + 1].push_back(vb.b);
                r.data[bus_cols + 3 * b + 2].push_back(vb.c);
            }
        }
    }
    r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return r;
}

} // namespace

std::vector<PfBus> power_flow_buses(const SystemModel& sys)
{
    const auto& t = sys.network;
    const double sb = t.base.s_base;
    std::vector<PfBus> buses(t.buses.size());
    for (const auto& m : sys.machines) {
        auto& b = buses[*t.bus_index(m.bus)];
        b.type = m.slack ? BusType::slack : BusType::pv;
        b.v_set = m.v_set;
        if (!m.slack) {
            b.p += m.p_set / sb;
        }
    }
    for (const auto& v : sys.vscs) {
        auto& b = buses[*t.bus_index(v.bus)];
        b.p += v.p_set / sb;
        b.q += v.q_set / sb;
    }
    return buses;
}

SteadyState initialize_steady_state(const SystemModel& sys, double tol)
{
    SteadyState ss;
    const auto& topo = sys.network;
    const double v_pk = topo.base.v_peak();
    const double sb = topo.base.s_base;
    ss.pf = solve_power_flow(positive_sequence_ybus(topo), power_flow_buses(sys));
    for (const auto& v : ss.pf.v) {
        ss.bus_v.push_back(v * v_pk);
    }
    for (const auto& u : sys.vscs) {
        const auto b = *topo.bus_index(u.bus);
        const cd v = ss.bus_v[b];
        ss.vsc_v.push_back(v);
        ss.vsc_i.push_back(std::conj(cd(u.p_set, u.q_set) / (1.5 * v)));
    }
    for (const auto& m : sys.machines) {
        const auto b = *topo.bus_index(m.bus);
        cd s = ss.pf.s[b] * sb;
        for (const auto& u : sys.vscs) {
            if (u.bus == m.bus) {
                s -= cd(u.p_set, u.q_set);
            }
        }
        const cd v_pu = ss.pf.v[b];
        const cd s_pu = s / m.machine.params.s_n;
        ss.machines.push_back(init_from_powerflow(m.machine.params, m.machine.avr, m.machine.gov, v_pu, s_pu, tol));
        ss.machine_i.push_back(std::conj(s / (1.5 * ss.bus_v[b])));
    }
    return ss;
}

RunResult run_scenario(const SystemModel& sys, const ScenarioConfig& cfg)
{
    validate_scenario(cfg, sys);
    const auto& test = sys.test(cfg.test);
    const VscFeatures feat = cfg.features.value_or(test.features);
    const double duration = cfg.duration.value_or(test.duration);
    const double ri = cfg.record_interval.value_or(sys.record_interval);
    return is_phasor(cfg.model) ? run_pm(sys, cfg, feat, duration, ri) : run_emt(sys, cfg, feat, duration, ri);
}

RunResult run_scenario(const ScenarioConfig& cfg)
{
    return run_scenario(resolve_system(cfg), cfg);
}

} // namespace vscsim
