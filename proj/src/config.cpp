#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vscsim/embedded_configs.hpp"
#include "vscsim/errors.hpp"
#include "vscsim/scenarios.hpp"

namespace vscsim {

namespace pt = boost::property_tree;

namespace {

using Section = pt::ptree;

double to_double(const std::string& where, const std::string& s)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (s.find_first_not_of(" \t", used) != std::string::npos) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a number, got '" + s + "'");
    }
}

bool to_bool(const std::string& where, std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
        return true;
    }
    if (s == "false" || s == "0" || s == "no" || s == "off") {
        return false;
    }
    throw ConfigError(where + ": expected a boolean, got '" + s + "'");
}

/// Reads typed keys out of one section and complains about leftovers.
class Reader {
public:
    Reader(std::string name, const Section& s) : name_(std::move(name)), sec_(s) {}

    std::optional<std::string> str(const std::string& key)
    {
        used_.insert(key);
        const auto v = sec_.get_optional<std::string>(pt::ptree::path_type(key, '\0'));
        if (!v) {
            return std::nullopt;
        }
        return *v;
    }
    std::string required(const std::string& key)
    {
        const auto v = str(key);
        if (!v || v->empty()) {
            throw ConfigError("[" + name_ + "] missing key '" + key + "'");
        }
        return *v;
    }
    void num(const std::string& key, double& out)
    {
        if (const auto v = str(key)) {
            out = to_double("[" + name_ + "] " + key, *v);
        }
    }
    void flag(const std::string& key, bool& out)
    {
        if (const auto v = str(key)) {
            out = to_bool("[" + name_ + "] " + key, *v);
        }
    }
    /// Keys starting with `prefix` are accepted without being read.
    void allow_prefix(const std::string& prefix) { prefixes_.push_back(prefix); }
    void finish() const
    {
        for (const auto& [k, v] : sec_) {
            const bool prefixed = std::any_of(prefixes_.begin(), prefixes_.end(),
                                              [&](const std::string& p) { return k.rfind(p, 0) == 0; });
            if (!used_.count(k) && !prefixed) {
                throw ConfigError("[" + name_ + "] unknown key '" + k + "'");
            }
        }
    }

private:
    std::string name_;
    const Section& sec_;
    std::set<std::string> used_;
    std::vector<std::string> prefixes_;
};

std::pair<std::string, std::string> split_section(const std::string& s)
{
    const auto dot = s.find('.');
    if (dot == std::string::npos) {
        return {s, ""};
    }
    return {s.substr(0, dot), s.substr(dot + 1)};
}

VscFeatures parse_features(const std::string& where, const std::string& text)
{
    VscFeatures f;
    std::string t = text;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream in(t);
    std::string w;
    while (in >> w) {
        if (w == "none") {
            continue;
        }
        if (w == "droops") {
            f.droops = true;
        } else if (w == "lvrt") {
            f.lvrt = true;
        } else if (w == "neg_seq") {
            f.neg_seq = true;
        } else {
            throw ConfigError(where + ": unknown feature '" + w + "' (droops, lvrt, neg_seq)");
        }
    }
    return f;
}

Event parse_event(const std::string& where, const std::string& text)
{
    std::istringstream in(text);
    std::string t, action, target, key, value;
    if (!(in >> t >> action >> target)) {
        throw ConfigError(where + ": event needs '<t> <action> <target> [key] [value]'");
    }
    in >> key >> value;
    Event e;
    e.t = to_double(where, t);
    const auto a = parse_action(action);
    if (!a) {
        throw ConfigError(where + ": unknown event action '" + action + "'");
    }
    e.action = *a;
    e.target = target;
    e.key = key;
    if (!value.empty()) {
        e.value = to_double(where, value);
    }
    if (e.action == EventAction::set_setpoint && (key != "p" && key != "q")) {
        throw ConfigError(where + ": set_setpoint needs key p or q");
    }
    if (e.action == EventAction::set_setpoint && value.empty()) {
        throw ConfigError(where + ": set_setpoint needs a value");
    }
    return e;
}

void read_machine(Reader& r, MachineUnit& m)
{
    double ref = 1.0;
    r.num("ref", ref);
    m.machine.params = reference_generator(static_cast<int>(ref));
    auto& p = m.machine.params;
    r.num("s_n", p.s_n);
    r.num("v_n", p.v_n);
    r.num("xd", p.xd);
    r.num("xq", p.xq);
    r.num("xdp", p.xdp);
    r.num("xdpp", p.xdpp);
    r.num("xqpp", p.xqpp);
    r.num("xl", p.xl);
    r.num("rs", p.rs);
    r.num("tdop", p.tdop);
    r.num("tdopp", p.tdopp);
    r.num("tqopp", p.tqopp);
    r.num("h", p.h);
    r.num("d", p.d);
    r.num("avr_ka", m.machine.avr.ka);
    r.num("avr_ta", m.machine.avr.ta);
    r.num("avr_efd_min", m.machine.avr.efd_min);
    r.num("avr_efd_max", m.machine.avr.efd_max);
    r.num("gov_droop", m.machine.gov.droop);
    r.num("gov_tg", m.machine.gov.tg);
    r.num("gov_tm_min", m.machine.gov.tm_min);
    r.num("gov_tm_max", m.machine.gov.tm_max);
    m.bus = r.required("bus");
    r.flag("slack", m.slack);
    r.num("p", m.p_set);
    r.num("v", m.v_set);
}

void read_vsc(Reader& r, VscUnit& u)
{
    auto& p = u.params;
    r.num("s_rated", p.s_rated);
    r.num("r", p.r);
    r.num("l", p.l);
    r.num("omega_c", p.omega_c);
    r.num("omega_pq", p.omega_pq);
    r.num("omega_pll", p.omega_pll);
    r.num("k_droop_f", p.k_droop_f);
    r.num("k_droop_v", p.k_droop_v);
    r.num("tau_droop", p.tau_droop);
    r.num("k_lvrt", p.k_lvrt);
    r.num("v_g_min", p.v_g_min);
    r.num("i_lvrt_max", p.i_lvrt_max);
    r.num("i_max", p.i_max);
    r.flag("current_limit", p.current_limit);
    u.bus = r.required("bus");
    r.num("p", u.p_set);
    r.num("q", u.q_set);
}

} // namespace

HarmonicSpectrum HarmonicUnit::spectrum(const PerUnitBase& base) const
{
    // Peak current of the reference load at nominal voltage.
    const double s = std::hypot(load_p, load_q);
    return default_harmonic_spectrum(2.0 * s / (3.0 * base.v_peak()));
}

const TestSpec& SystemModel::test(const std::string& id) const
{
    for (const auto& t : tests) {
        if (t.id == id) {
            return t;
        }
    }
    std::string known;
    for (const auto& t : tests) {
        known += (known.empty() ? "" : ", ") + t.id;
    }
    throw ConfigError("system '" + name + "' has no test '" + id + "' (available: " + known + ")");
}

Topology SystemModel::topology(Domain d) const
{
    Topology t = network;
    const double w = network.base.omega_nom();
    for (const auto& m : machines) {
        t.sources.push_back({m.machine.name, m.bus, SourceKind::thevenin, m.machine.thevenin_r(),
                             m.machine.thevenin_l(w)});
    }
    for (const auto& v : vscs) {
        if (d == Domain::emt) {
            t.sources.push_back({v.name, v.bus, SourceKind::thevenin, v.params.r, v.params.l, true});
        } else {
            t.sources.push_back({v.name, v.bus, SourceKind::current, 0.0, 0.0});
        }
    }
    for (const auto& h : harmonics) {
        t.sources.push_back({h.name, h.bus, SourceKind::current, 0.0, 0.0});
    }
    return t;
}

void SystemModel::validate() const
{
    network.validate();
    topology(Domain::emt).validate();
    int slack = 0;
    std::set<std::string> machine_buses;
    for (const auto& m : machines) {
        m.machine.params.validate();
        slack += m.slack ? 1 : 0;
        if (!machine_buses.insert(m.bus).second) {
            throw ConfigError("bus " + m.bus + " has more than one machine");
        }
        if (!(m.v_set > 0.5 && m.v_set < 1.5)) {
            throw ConfigError("machine " + m.machine.name + " voltage setpoint out of range");
        }
    }
    if (slack != 1) {
        throw ConfigError("system needs exactly one slack machine");
    }
    for (const auto& v : vscs) {
        v.params.validate();
    }
    if (!(record_interval > 0.0)) {
        throw ConfigError("record_interval must be positive");
    }
    for (const auto& t : tests) {
        if (!(t.duration > 0.0)) {
            throw ConfigError("test " + t.id + " needs a positive duration");
        }
        for (const auto& e : t.events) {
            const bool known = network.fault_index(e.target) || network.load_index(e.target) ||
                               topology(Domain::emt).source_index(e.target) ||
                               e.action == EventAction::open_breaker_phase;
            if (!known) {
                throw ConfigError("test " + t.id + ": event target '" + e.target + "' does not exist");
            }
        }
    }
}

SystemModel parse_system(const std::string& ini_text, const std::vector<std::pair<std::string, std::string>>& overrides)
{
    pt::ptree tree;
    try {
        std::istringstream in(ini_text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    for (const auto& [path, value] : overrides) {
        const auto dot = path.rfind('.');
        if (dot == std::string::npos || dot == 0) {
            throw ConfigError("override '" + path + "' must be <section>.<key>");
        }
        const std::string sec = path.substr(0, dot);
        const std::string key = path.substr(dot + 1);
        auto it = tree.find(sec);
        if (it == tree.not_found()) {
            throw ConfigError("override '" + path + "': no section [" + sec + "]");
        }
        tree.to_iterator(it)->second.put(pt::ptree::path_type(key, '\0'), value);
    }

    SystemModel sys;
    for (const auto& [sec_name, sec] : tree) {
        const auto [kind, name] = split_section(sec_name);
        Reader r(sec_name, sec);
        if (kind == "system") {
            sys.name = r.str("name").value_or("custom");
            r.num("s_base", sys.network.base.s_base);
            r.num("v_base", sys.network.base.v_base);
            r.num("f_nom", sys.network.base.f_nom);
            r.num("record_interval", sys.record_interval);
        } else if (kind == "bus") {
            BusSpec b{name};
            r.num("stray_capacitance", b.stray_capacitance);
            sys.network.buses.push_back(b);
        } else if (kind == "line") {
            LineSpec l;
            l.name = name;
            l.from = r.required("from");
            l.to = r.required("to");
            r.num("length_km", l.length_km);
            r.num("r1", l.r1);
            r.num("r0", l.r0);
            r.num("l1", l.l1);
            r.num("l0", l.l0);
            r.num("c1", l.c1);
            r.num("c0", l.c0);
            sys.network.lines.push_back(l);
        } else if (kind == "branch") {
            RlBranchSpec b;
            b.name = name;
            b.from = r.required("from");
            b.to = r.required("to");
            r.num("r", b.r);
            r.num("l", b.l);
            sys.network.branches.push_back(b);
        } else if (kind == "load") {
            LoadSpec l;
            l.name = name;
            l.bus = r.required("bus");
            r.num("p", l.p);
            r.num("q", l.q);
            r.flag("connected", l.connected);
            sys.network.loads.push_back(l);
        } else if (kind == "fault") {
            FaultSpec f;
            f.name = name;
            f.location = r.required("location");
            r.num("r", f.r);
            if (const auto ph = r.str("phases")) {
                f.phases = parse_phases(*ph);
            }
            sys.network.faults.push_back(f);
        } else if (kind == "machine") {
            MachineUnit m;
            m.machine.name = name;
            read_machine(r, m);
            sys.machines.push_back(m);
        } else if (kind == "vsc") {
            VscUnit u;
            u.name = name;
            read_vsc(r, u);
            sys.vscs.push_back(u);
        } else if (kind == "harmonic") {
            HarmonicUnit h;
            h.name = name;
            h.bus = r.required("bus");
            r.num("load_p", h.load_p);
            r.num("load_q", h.load_q);
            sys.harmonics.push_back(h);
        } else if (kind == "test") {
            TestSpec t;
            t.id = name;
            t.features = parse_features("[" + sec_name + "] features", r.str("features").value_or(""));
            r.num("duration", t.duration);
            r.allow_prefix("event");
            std::vector<std::pair<int, Event>> numbered;
            for (const auto& [k, v] : sec) {
                if (k.rfind("event", 0) != 0) {
                    continue;
                }
                const int n = static_cast<int>(to_double("[" + sec_name + "] " + k, k.substr(5)));
                numbered.emplace_back(n, parse_event("[" + sec_name + "] " + k, v.data()));
            }
            std::stable_sort(numbered.begin(), numbered.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            for (auto& [n, e] : numbered) {
                t.events.push_back(e);
            }
            std::stable_sort(t.events.begin(), t.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
            sys.tests.push_back(t);
        } else {
            throw ConfigError("unknown section [" + sec_name + "]");
        }
        r.finish();
    }
    if (!sys.network.base.valid()) {
        throw ConfigError("system base values must be positive");
    }
    const double v_pk = sys.network.base.v_peak();
    for (auto& m : sys.machines) {
        m.machine.params.f_nom = sys.network.base.f_nom;
        m.machine.v_peak_base = v_pk;
    }
    for (auto& v : sys.vscs) {
        v.params.v_g_pk = v_pk;
        v.params.f_nom = sys.network.base.f_nom;
    }
    sys.validate();
    return sys;
}

SystemModel load_system_file(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_system(ss.str(), overrides);
}

const char* shipped_system_ini(const std::string& name)
{
    if (name == "small") {
        return kSmallSystemIni;
    }
    if (name == "large") {
        return kLargeSystemIni;
    }
    return nullptr;
}

SystemModel build_small_system()
{
    return parse_system(kSmallSystemIni);
}

SystemModel build_large_system()
{
    return parse_system(kLargeSystemIni);
}

std::vector<std::string> test_ids(const std::string& system)
{
    const char* ini = shipped_system_ini(system);
    std::vector<std::string> out;
    if (!ini) {
        return out;
    }
    for (const auto& t : parse_system(ini).tests) {
        out.push_back(t.id);
    }
    return out;
}

SystemModel resolve_system(const ScenarioConfig& cfg)
{
    if (const char* ini = shipped_system_ini(cfg.system)) {
        return parse_system(ini, cfg.overrides);
    }
    return load_system_file(cfg.system, cfg.overrides);
}

void validate_scenario(const ScenarioConfig& cfg, const SystemModel& sys)
{
    // Relative slack so that values typed as 5e-6 or 12e-3 pass.
    if (!(cfg.dt >= kMinDt * (1.0 - 1e-9) && cfg.dt <= kMaxDt * (1.0 + 1e-9))) {
        throw ConfigError("dt " + std::to_string(cfg.dt) + " s is outside [5e-6, 12e-3] s");
    }
    const auto& t = sys.test(cfg.test);
    const double dur = cfg.duration.value_or(t.duration);
    if (!(cfg.divergence_bound > 0.0)) {
        throw ConfigError("divergence_bound must be positive");
    }
    if (!(dur > cfg.dt)) {
        throw ConfigError("duration must exceed dt");
    }
    if (cfg.record_interval && !(*cfg.record_interval > 0.0)) {
        throw ConfigError("record_interval must be positive");
    }
}

ScenarioConfig load_scenario_file(const std::filesystem::path& path)
{
    pt::ptree tree;
    {
        std::ifstream in(path);
        if (!in) {
            throw IoError("cannot read scenario " + path.string());
        }
        try {
            pt::ini_parser::read_ini(in, tree);
        } catch (const pt::ini_parser_error& e) {
            throw ConfigError(std::string("scenario syntax: ") + e.what());
        }
    }
    ScenarioConfig cfg;
    for (const auto& [sec_name, sec] : tree) {
        Reader r(sec_name, sec);
        if (sec_name == "scenario") {
            if (auto s = r.str("system")) {
                cfg.system = *s;
                // Relative config paths resolve next to the scenario file.
                if (!shipped_system_ini(cfg.system) && std::filesystem::path(cfg.system).is_relative()) {
                    cfg.system = (path.parent_path() / cfg.system).string();
                }
            }
            if (auto s = r.str("test")) {
                cfg.test = *s;
            }
            if (auto s = r.str("model")) {
                const auto m = parse_model(*s);
                if (!m) {
                    throw ConfigError("[scenario] unknown model '" + *s + "'");
                }
                cfg.model = *m;
            }
            r.num("dt", cfg.dt);
            double d = 0.0;
            if (r.str("duration")) {
                r.num("duration", d);
                cfg.duration = d;
            }
            if (auto s = r.str("features")) {
                cfg.features = parse_features("[scenario] features", *s);
            }
            if (r.str("record_interval")) {
                double ri = 0.0;
                r.num("record_interval", ri);
                cfg.record_interval = ri;
            }
            r.num("divergence_bound", cfg.divergence_bound);
            r.finish();
        } else if (sec_name == "override") {
            for (const auto& [k, v] : sec) {
                cfg.overrides.emplace_back(k, v.data());
            }
        } else {
            throw ConfigError("scenario file: unknown section [" + sec_name + "]");
        }
    }
    return cfg;
}

} // namespace vscsim
