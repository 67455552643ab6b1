#include "vscsim/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "vscsim/errors.hpp"

namespace vscsim {

namespace {

constexpr const char* kGroundName = "gnd";

template <typename T>
std::optional<std::size_t> find_named(const std::vector<T>& items, const std::string& name)
{
    for (std::size_t k = 0; k < items.size(); ++k) {
        if (items[k].name == name) {
            return k;
        }
    }
    return std::nullopt;
}

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x)
    {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

/// One three-phase inductive element in node terms.
struct InductiveElement {
    std::array<int, 3> from{-1, -1, -1};
    std::array<int, 3> to{-1, -1, -1};
    Eigen::Matrix3d r{Eigen::Matrix3d::Zero()};
    Eigen::Matrix3d l{Eigen::Matrix3d::Zero()};
    int emf_input{-1};
    PhaseMask open{false, false, false};
    int state_offset{0};
    bool floating_neutral{false};
};

std::array<int, 3> bus_nodes(std::size_t bus)
{
    return {static_cast<int>(3 * bus), static_cast<int>(3 * bus + 1), static_cast<int>(3 * bus + 2)};
}

std::array<int, 3> nodes_of(const Topology& topo, const std::string& name)
{
    if (name == kGroundName) {
        return {-1, -1, -1};
    }
    const auto b = topo.bus_index(name);
    if (!b) {
        throw ConfigError("unknown bus '" + name + "'");
    }
    return bus_nodes(*b);
}

Eigen::Matrix3d diag3(double v)
{
    return Eigen::Matrix3d::Identity() * v;
}

} // namespace

PhaseMask parse_phases(const std::string& s)
{
    PhaseMask m{false, false, false};
    if (s.empty()) {
        throw ConfigError("empty phase selection");
    }
    for (char ch : s) {
        const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (up < 'A' || up > 'C') {
            throw ConfigError("bad phase selection '" + s + "'");
        }
        m[static_cast<std::size_t>(up - 'A')] = true;
    }
    return m;
}

std::string phases_to_string(const PhaseMask& m)
{
    std::string out;
    for (int p = 0; p < 3; ++p) {
        if (m[static_cast<std::size_t>(p)]) {
            out += static_cast<char>('A' + p);
        }
    }
    return out;
}

std::optional<std::size_t> Topology::bus_index(const std::string& name) const { return find_named(buses, name); }
std::optional<std::size_t> Topology::line_index(const std::string& name) const { return find_named(lines, name); }
std::optional<std::size_t> Topology::load_index(const std::string& name) const { return find_named(loads, name); }
std::optional<std::size_t> Topology::fault_index(const std::string& name) const { return find_named(faults, name); }
std::optional<std::size_t> Topology::source_index(const std::string& name) const
{
    return find_named(sources, name);
}

void Topology::validate() const
{
    if (!base.valid()) {
        throw ConfigError("per-unit base must be strictly positive");
    }
    if (buses.empty()) {
        throw ConfigError("topology has no buses");
    }
    auto require_bus = [&](const std::string& name, const std::string& who) {
        if (!bus_index(name)) {
            throw ConfigError(who + " references unknown bus '" + name + "'");
        }
    };
    auto check_unique = [](const auto& items, const char* what) {
        std::vector<std::string> names;
        for (const auto& it : items) {
            names.push_back(it.name);
        }
        std::sort(names.begin(), names.end());
        if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
            throw ConfigError(std::string("duplicate ") + what + " name");
        }
    };
    check_unique(buses, "bus");
    check_unique(lines, "line");
    check_unique(branches, "branch");
    check_unique(loads, "load");
    check_unique(faults, "fault");
    check_unique(sources, "source");

    UnionFind uf(buses.size());
    for (const auto& l : lines) {
        require_bus(l.from, "line " + l.name);
        require_bus(l.to, "line " + l.name);
        if (!(l.length_km > 0.0)) {
            throw ConfigError("line " + l.name + " must have positive length");
        }
        if (l.r1 < 0.0 || l.r0 < 0.0 || !(l.l1 > 0.0) || !(l.l0 > 0.0) || l.c1 < 0.0 || l.c0 < 0.0) {
            throw ConfigError("line " + l.name + " has invalid per-km data");
        }
        uf.unite(*bus_index(l.from), *bus_index(l.to));
    }
    for (const auto& br : branches) {
        require_bus(br.from, "branch " + br.name);
        if (br.to != kGroundName) {
            require_bus(br.to, "branch " + br.name);
            uf.unite(*bus_index(br.from), *bus_index(br.to));
        }
        if (br.r < 0.0 || br.l < 0.0 || (br.r == 0.0 && br.l == 0.0)) {
            throw ConfigError("branch " + br.name + " needs R or L");
        }
    }
    for (const auto& ld : loads) {
        require_bus(ld.bus, "load " + ld.name);
        if (ld.p < 0.0 || ld.q < 0.0 || (ld.p == 0.0 && ld.q == 0.0)) {
            throw ConfigError("load " + ld.name + " must draw P >= 0 and Q >= 0, not both zero");
        }
    }
    for (const auto& f : faults) {
        (void)location_node(*this, f.location);
        if (!(f.r > 0.0)) {
            throw ConfigError("fault " + f.name + " needs positive resistance");
        }
    }
    for (const auto& s : sources) {
        require_bus(s.bus, "source " + s.name);
        if (s.kind == SourceKind::thevenin && !(s.l > 0.0)) {
            throw ConfigError("source " + s.name + " needs a series inductance");
        }
    }
    const auto root = uf.find(0);
    for (std::size_t b = 1; b < buses.size(); ++b) {
        if (uf.find(b) != root) {
            throw ConfigError("bus " + buses[b].name + " is not connected to the rest of the network");
        }
    }
}

LinePhaseData line_phase_data(const LineSpec& line)
{
    auto expand = [](double zero, double pos) {
        const double self = (zero + 2.0 * pos) / 3.0;
        const double mutual = (zero - pos) / 3.0;
        Eigen::Matrix3d m = Eigen::Matrix3d::Constant(mutual);
        m.diagonal().setConstant(self);
        return m;
    };
    const double len = line.length_km;
    return {expand(line.r0, line.r1) * len, expand(line.l0, line.l1) * len, expand(line.c0, line.c1) * len};
}

std::pair<double, double> load_rl(const LoadSpec& load, double v_ll, double omega)
{
    const double s2 = load.p * load.p + load.q * load.q;
    const double r = v_ll * v_ll * load.p / s2;
    const double x = v_ll * v_ll * load.q / s2;
    return {r, x / omega};
}

SwitchState::SwitchState(const Topology& topo)
{
    breaker_open.assign(topo.lines.size(), {PhaseMask{false, false, false}, PhaseMask{false, false, false}});
    for (const auto& ld : topo.loads) {
        load_connected.push_back(ld.connected);
    }
    for (const auto& f : topo.faults) {
        fault_applied.push_back(f.applied);
    }
    source_open.assign(topo.sources.size(), PhaseMask{false, false, false});
}

std::string SwitchState::key() const
{
    std::string k;
    k.reserve(8 * breaker_open.size() + load_connected.size() + fault_applied.size() + 3 * source_open.size() + 4);
    for (const auto& ends : breaker_open) {
        for (const auto& m : ends) {
            for (bool b : m) {
                k += b ? '1' : '0';
            }
        }
    }
    k += '|';
    for (bool b : load_connected) {
        k += b ? '1' : '0';
    }
    k += '|';
    for (bool b : fault_applied) {
        k += b ? '1' : '0';
    }
    k += '|';
    for (const auto& m : source_open) {
        for (bool b : m) {
            k += b ? '1' : '0';
        }
    }
    return k;
}

SwitchGear::SwitchGear(const Topology& topo, Domain domain) : topo_(&topo), domain_(domain), state_(topo) {}

bool SwitchGear::handles(EventAction a) const
{
    return a == EventAction::apply_fault || a == EventAction::clear_fault || a == EventAction::open_breaker_phase ||
           a == EventAction::connect_load || a == EventAction::disconnect_source;
}

bool SwitchGear::apply(const Event& e)
{
    switch (e.action) {
    case EventAction::apply_fault:
    case EventAction::clear_fault: {
        const auto idx = topo_->fault_index(e.target);
        if (!idx) {
            throw UnknownTarget("no fault named '" + e.target + "'");
        }
        const bool want = e.action == EventAction::apply_fault;
        const bool changed = state_.fault_applied[*idx] != want;
        state_.fault_applied[*idx] = want;
        return changed;
    }
    case EventAction::connect_load: {
        const auto idx = topo_->load_index(e.target);
        if (!idx) {
            throw UnknownTarget("no load named '" + e.target + "'");
        }
        const bool changed = !state_.load_connected[*idx];
        state_.load_connected[*idx] = true;
        return changed;
    }
    case EventAction::open_breaker_phase: {
        // target "<line>:from" or "<line>:to"; key holds the phases.
        const auto colon = e.target.rfind(':');
        if (colon == std::string::npos) {
            throw UnknownTarget("breaker target must be <line>:from|to, got '" + e.target + "'");
        }
        const auto line = topo_->line_index(e.target.substr(0, colon));
        const std::string end_name = e.target.substr(colon + 1);
        if (!line || (end_name != "from" && end_name != "to")) {
            throw UnknownTarget("no breaker '" + e.target + "'");
        }
        const LineEnd end = end_name == "from" ? LineEnd::from : LineEnd::to;
        const PhaseMask phases = e.key.empty() ? kAllPhases : parse_phases(e.key);
        auto& open = state_.breaker_open[*line][static_cast<std::size_t>(end)];
        bool changed = false;
        for (int p = 0; p < 3; ++p) {
            const auto up = static_cast<std::size_t>(p);
            if (!phases[up] || open[up]) {
                continue;
            }
            if (domain_ == Domain::pm) {
                open[up] = true;
                changed = true;
            } else {
                pending_.push_back({PendingOpening::Kind::breaker, *line, end, p, std::nullopt});
            }
        }
        return changed;
    }
    case EventAction::disconnect_source: {
        const auto idx = topo_->source_index(e.target);
        if (!idx) {
            throw UnknownTarget("no source named '" + e.target + "'");
        }
        auto& open = state_.source_open[*idx];
        bool changed = false;
        for (int p = 0; p < 3; ++p) {
            const auto up = static_cast<std::size_t>(p);
            if (open[up]) {
                continue;
            }
            if (domain_ == Domain::pm || topo_->sources[*idx].kind != SourceKind::thevenin) {
                open[up] = true;
                changed = true;
            } else {
                pending_.push_back({PendingOpening::Kind::source, *idx, LineEnd::from, p, std::nullopt});
            }
        }
        return changed;
    }
    default:
        return false;
    }
}

bool SwitchGear::update_pending(const std::function<double(const PendingOpening&)>& current)
{
    bool changed = false;
    for (auto it = pending_.begin(); it != pending_.end();) {
        const double i = current(*it);
        const bool crossed = it->last_current && ((*it->last_current > 0.0) != (i > 0.0) || i == 0.0);
        if (crossed) {
            const auto up = static_cast<std::size_t>(it->phase);
            if (it->kind == PendingOpening::Kind::breaker) {
                state_.breaker_open[it->index][static_cast<std::size_t>(it->end)][up] = true;
            } else {
                state_.source_open[it->index][up] = true;
            }
            changed = true;
            it = pending_.erase(it);
        } else {
            it->last_current = i;
            ++it;
        }
    }
    return changed;
}

std::size_t NodeLayout::line_end_node(const Topology& topo, std::size_t line, LineEnd end, int phase)
{
    return 3 * (topo.buses.size() + 2 * line + static_cast<std::size_t>(end)) + static_cast<std::size_t>(phase);
}

std::size_t location_node(const Topology& topo, const std::string& location)
{
    if (location.rfind("line:", 0) == 0) {
        const auto rest = location.substr(5);
        const auto colon = rest.rfind(':');
        if (colon != std::string::npos) {
            const auto line = topo.line_index(rest.substr(0, colon));
            const auto end = rest.substr(colon + 1);
            if (line && (end == "from" || end == "to")) {
                return NodeLayout::line_end_node(topo, *line, end == "from" ? LineEnd::from : LineEnd::to, 0);
            }
        }
        throw ConfigError("bad line-end location '" + location + "'");
    }
    const auto b = topo.bus_index(location);
    if (!b) {
        throw ConfigError("unknown location '" + location + "'");
    }
    return NodeLayout::bus_node(*b, 0);
}

NodeLayout NodeLayout::build(const Topology& topo, const SwitchState& sw)
{
    NodeLayout out;
    out.n_nodes = 3 * (topo.buses.size() + 2 * topo.lines.size());
    UnionFind uf(out.n_nodes);
    for (std::size_t l = 0; l < topo.lines.size(); ++l) {
        const auto& line = topo.lines[l];
        const std::size_t ends[2] = {*topo.bus_index(line.from), *topo.bus_index(line.to)};
        for (int e = 0; e < 2; ++e) {
            for (int p = 0; p < 3; ++p) {
                if (!sw.breaker_open[l][static_cast<std::size_t>(e)][static_cast<std::size_t>(p)]) {
                    uf.unite(line_end_node(topo, l, static_cast<LineEnd>(e), p), bus_node(ends[e], p));
                }
            }
        }
    }
    std::vector<int> root_prescribed(out.n_nodes, -1);
    for (std::size_t s = 0; s < topo.sources.size(); ++s) {
        if (topo.sources[s].kind != SourceKind::ideal_voltage) {
            continue;
        }
        const auto b = *topo.bus_index(topo.sources[s].bus);
        for (int p = 0; p < 3; ++p) {
            root_prescribed[uf.find(bus_node(b, p))] = static_cast<int>(3 * s + static_cast<std::size_t>(p));
        }
    }
    out.group_of.assign(out.n_nodes, -1);
    out.prescribed_of.assign(out.n_nodes, -1);
    std::vector<int> root_group(out.n_nodes, -1);
    for (std::size_t n = 0; n < out.n_nodes; ++n) {
        const auto r = uf.find(n);
        if (root_prescribed[r] >= 0) {
            out.prescribed_of[n] = root_prescribed[r];
            continue;
        }
        if (root_group[r] < 0) {
            root_group[r] = static_cast<int>(out.groups.size());
            out.groups.emplace_back();
        }
        out.group_of[n] = root_group[r];
        out.groups[static_cast<std::size_t>(root_group[r])].push_back(static_cast<int>(n));
    }
    return out;
}

namespace {

/// Element data shared by the EMT and phasor compilers.
struct ElementSet {
    std::vector<InductiveElement> inductive;
    Eigen::MatrixXd cap;    ///< nodal capacitance
    Eigen::MatrixXd cond;   ///< nodal conductance
    std::vector<int> line_state, load_state, branch_state, source_state;
    std::size_t n_inductor{0};
};

void stamp_conductance(Eigen::MatrixXd& g, int a, int b, double y)
{
    if (a >= 0) {
        g(a, a) += y;
    }
    if (b >= 0) {
        g(b, b) += y;
    }
    if (a >= 0 && b >= 0) {
        g(a, b) -= y;
        g(b, a) -= y;
    }
}

ElementSet collect_elements(const Topology& topo, const SwitchState& sw)
{
    const double omega = topo.base.omega_nom();
    const std::size_t nn = 3 * (topo.buses.size() + 2 * topo.lines.size());
    ElementSet es;
    es.cap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nn), static_cast<Eigen::Index>(nn));
    es.cond = es.cap;
    int offset = 0;

    for (std::size_t l = 0; l < topo.lines.size(); ++l) {
        const auto data = line_phase_data(topo.lines[l]);
        InductiveElement el;
        for (int p = 0; p < 3; ++p) {
            el.from[static_cast<std::size_t>(p)] =
                static_cast<int>(NodeLayout::line_end_node(topo, l, LineEnd::from, p));
            el.to[static_cast<std::size_t>(p)] = static_cast<int>(NodeLayout::line_end_node(topo, l, LineEnd::to, p));
        }
        el.r = data.r;
        el.l = data.l;
        el.state_offset = offset;
        es.line_state.push_back(offset);
        offset += 3;
        es.inductive.push_back(el);
        const Eigen::Matrix3d half = 0.5 * data.c_total;
        for (auto end : {el.from, el.to}) {
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    es.cap(end[static_cast<std::size_t>(i)], end[static_cast<std::size_t>(j)]) += half(i, j);
                }
            }
        }
    }

    for (const auto& br : topo.branches) {
        const auto from = nodes_of(topo, br.from);
        const auto to = nodes_of(topo, br.to);
        if (br.l > 0.0) {
            InductiveElement el;
            el.from = from;
            el.to = to;
            el.r = diag3(br.r);
            el.l = diag3(br.l);
            el.state_offset = offset;
            es.branch_state.push_back(offset);
            offset += 3;
            es.inductive.push_back(el);
        } else {
            es.branch_state.push_back(-1);
            for (int p = 0; p < 3; ++p) {
                stamp_conductance(es.cond, from[static_cast<std::size_t>(p)], to[static_cast<std::size_t>(p)], 1.0 / br.r);
            }
        }
    }

    for (std::size_t k = 0; k < topo.loads.size(); ++k) {
        const auto& ld = topo.loads[k];
        const auto [r, l] = load_rl(ld, topo.base.v_base, omega);
        const auto nodes = nodes_of(topo, ld.bus);
        if (l > 0.0) {
            InductiveElement el;
            el.from = nodes;
            el.r = diag3(r);
            el.l = diag3(l);
            el.state_offset = offset;
            if (!sw.load_connected[k]) {
                el.open = kAllPhases;
            }
            es.load_state.push_back(offset);
            offset += 3;
            es.inductive.push_back(el);
        } else {
            es.load_state.push_back(-1);
            if (sw.load_connected[k]) {
                for (int p = 0; p < 3; ++p) {
                    stamp_conductance(es.cond, nodes[static_cast<std::size_t>(p)], -1, 1.0 / r);
                }
            }
        }
    }

    for (std::size_t k = 0; k < topo.faults.size(); ++k) {
        if (!sw.fault_applied[k]) {
            continue;
        }
        const auto& f = topo.faults[k];
        const auto first = static_cast<int>(location_node(topo, f.location));
        for (int p = 0; p < 3; ++p) {
            if (f.phases[static_cast<std::size_t>(p)]) {
                stamp_conductance(es.cond, first + p, -1, 1.0 / f.r);
            }
        }
    }

    for (std::size_t b = 0; b < topo.buses.size(); ++b) {
        for (int p = 0; p < 3; ++p) {
            const auto n = static_cast<Eigen::Index>(NodeLayout::bus_node(b, p));
            es.cap(n, n) += topo.buses[b].stray_capacitance;
        }
    }

    for (std::size_t s = 0; s < topo.sources.size(); ++s) {
        const auto& src = topo.sources[s];
        if (src.kind != SourceKind::thevenin) {
            es.source_state.push_back(-1);
            continue;
        }
        InductiveElement el;
        el.to = nodes_of(topo, src.bus);
        el.r = diag3(src.r);
        el.l = diag3(src.l);
        el.emf_input = static_cast<int>(3 * s);
        el.open = sw.source_open[s];
        el.floating_neutral = src.floating_neutral;
        el.state_offset = offset;
        es.source_state.push_back(offset);
        offset += 3;
        es.inductive.push_back(el);
    }
    es.n_inductor = static_cast<std::size_t>(offset);
    return es;
}

} // namespace

EmtNetwork compile_emt(const Topology& topo, const SwitchState& sw)
{
    EmtNetwork net;
    net.layout = NodeLayout::build(topo, sw);
    net.switches = sw;
    const auto es = collect_elements(topo, sw);
    const auto nn = static_cast<Eigen::Index>(net.layout.n_nodes);
    const auto ni = static_cast<Eigen::Index>(es.n_inductor);
    const auto ng = static_cast<Eigen::Index>(net.layout.n_groups());
    const auto m = static_cast<Eigen::Index>(3 * topo.sources.size());
    net.n_inductor = es.n_inductor;
    net.n_inputs = static_cast<std::size_t>(m);
    net.line_state = es.line_state;
    net.load_state = es.load_state;
    net.branch_state = es.branch_state;
    net.source_state = es.source_state;
    for (std::size_t s = 0; s < topo.sources.size(); ++s) {
        net.source_input.push_back(static_cast<int>(3 * s));
    }

    Eigen::MatrixXd pd = Eigen::MatrixXd::Zero(nn, ng);
    Eigen::MatrixXd pp = Eigen::MatrixXd::Zero(nn, m);
    for (Eigen::Index n = 0; n < nn; ++n) {
        const auto un = static_cast<std::size_t>(n);
        if (net.layout.group_of[un] >= 0) {
            pd(n, net.layout.group_of[un]) = 1.0;
        } else {
            pp(n, net.layout.prescribed_of[un]) = 1.0;
        }
    }

    Eigen::MatrixXd linv = Eigen::MatrixXd::Zero(ni, ni);
    Eigen::MatrixXd rmat = Eigen::MatrixXd::Zero(ni, ni);
    Eigen::MatrixXd inc = Eigen::MatrixXd::Zero(ni, nn);
    Eigen::MatrixXd emf = Eigen::MatrixXd::Zero(ni, m);
    for (const auto& el : es.inductive) {
        const int o = el.state_offset;
        std::vector<int> closed;
        for (int p = 0; p < 3; ++p) {
            if (!el.open[static_cast<std::size_t>(p)]) {
                closed.push_back(p);
            }
        }
        const auto nc = static_cast<Eigen::Index>(closed.size());
        if (nc > 0) {
            Eigen::MatrixXd lc(nc, nc);
            for (Eigen::Index i = 0; i < nc; ++i) {
                for (Eigen::Index j = 0; j < nc; ++j) {
                    lc(i, j) = el.l(closed[static_cast<std::size_t>(i)], closed[static_cast<std::size_t>(j)]);
                }
            }
            const Eigen::MatrixXd li = lc.inverse();
            for (Eigen::Index i = 0; i < nc; ++i) {
                for (Eigen::Index j = 0; j < nc; ++j) {
                    linv(o + closed[static_cast<std::size_t>(i)], o + closed[static_cast<std::size_t>(j)]) = li(i, j);
                }
            }
        }
        rmat.block(o, o, 3, 3) = el.r;
        for (int p : closed) {
            const auto up = static_cast<std::size_t>(p);
            if (el.from[up] >= 0) {
                inc(o + p, el.from[up]) += 1.0;
            }
            if (el.to[up] >= 0) {
                inc(o + p, el.to[up]) -= 1.0;
            }
            if (el.emf_input >= 0) {
                emf(o + p, el.emf_input + p) = 1.0;
            }
        }
    }

    Eigen::MatrixXd inj = Eigen::MatrixXd::Zero(nn, m);
    for (std::size_t s = 0; s < topo.sources.size(); ++s) {
        if (topo.sources[s].kind != SourceKind::current) {
            continue;
        }
        const auto nodes = nodes_of(topo, topo.sources[s].bus);
        for (int p = 0; p < 3; ++p) {
            if (!sw.source_open[s][static_cast<std::size_t>(p)]) {
                inj(nodes[static_cast<std::size_t>(p)], static_cast<Eigen::Index>(3 * s) + p) = 1.0;
            }
        }
    }

    const Eigen::MatrixXd cg = pd.transpose() * es.cap * pd;
    for (Eigen::Index g = 0; g < ng; ++g) {
        if (!(cg(g, g) > 0.0)) {
            const auto first = net.layout.groups[static_cast<std::size_t>(g)].front();
            throw SingularNetwork("node " + std::to_string(first) +
                                  " has no shunt capacitance; EMT needs a capacitive path at every bus");
        }
    }
    const Eigen::LLT<Eigen::MatrixXd> cllt(cg);
    if (cllt.info() != Eigen::Success) {
        throw SingularNetwork("nodal capacitance matrix is not positive definite");
    }
    const Eigen::MatrixXd gg = pd.transpose() * es.cond * pd;
    const Eigen::MatrixXd gp = pd.transpose() * es.cond * pp;

    net.a = Eigen::MatrixXd::Zero(ni + ng, ni + ng);
    net.b = Eigen::MatrixXd::Zero(ni + ng, m);
    net.a.topLeftCorner(ni, ni) = -linv * rmat;
    net.a.topRightCorner(ni, ng) = linv * inc * pd;
    net.a.bottomLeftCorner(ng, ni) = -cllt.solve(pd.transpose() * inc.transpose());
    net.a.bottomRightCorner(ng, ng) = -cllt.solve(gg);
    net.b.topRows(ni) = linv * (emf + inc * pp);
    net.b.bottomRows(ng) = cllt.solve(pd.transpose() * inj - gp);

    // Floating star point: the neutral voltage takes whatever value keeps
    // the closed phase currents summing to zero. With equal phase R and L
    // this projects the rows onto the zero-sum subspace.
    for (const auto& el : es.inductive) {
        if (!el.floating_neutral) {
            continue;
        }
        std::vector<Eigen::Index> rows;
        for (int p = 0; p < 3; ++p) {
            if (!el.open[static_cast<std::size_t>(p)]) {
                rows.push_back(el.state_offset + p);
            }
        }
        const auto nc = static_cast<Eigen::Index>(rows.size());
        if (nc == 0) {
            continue;
        }
        Eigen::MatrixXd proj = -Eigen::MatrixXd::Constant(nc, nc, 1.0 / static_cast<double>(nc));
        proj.diagonal().array() += 1.0;
        for (auto* mat : {&net.a, &net.b}) {
            Eigen::MatrixXd sub(nc, mat->cols());
            for (Eigen::Index i = 0; i < nc; ++i) {
                sub.row(i) = mat->row(rows[static_cast<std::size_t>(i)]);
            }
            sub = proj * sub;
            for (Eigen::Index i = 0; i < nc; ++i) {
                mat->row(rows[static_cast<std::size_t>(i)]) = sub.row(i);
            }
        }
    }

    net.cy = Eigen::MatrixXd::Zero(nn, ni + ng);
    net.cy.rightCols(ng) = pd;
    net.dy = pp;
    if (!net.a.allFinite() || !net.b.allFinite()) {
        throw SingularNetwork("EMT state matrices are not finite");
    }
    return net;
}

EmtNetwork compile_emt(const Topology& topo)
{
    return compile_emt(topo, SwitchState(topo));
}

EmtDiscrete discretize(const EmtNetwork& net, double dt)
{
    const auto n = net.a.rows();
    const auto m = net.b.cols();
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + m, n + m);
    aug.topLeftCorner(n, n) = net.a * dt;
    aug.topRightCorner(n, m) = net.b * dt;
    const Eigen::MatrixXd e = aug.exp();
    return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

Eigen::VectorXd remap_state(const EmtNetwork& from, const EmtNetwork& to, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u)
{
    const Eigen::VectorXd v_nodes = from.cy * x + from.dy * u;
    const auto ni = static_cast<Eigen::Index>(to.n_inductor);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(to.n_states()));
    out.head(ni) = x.head(ni);
    // Currents of newly opened phases are forced to zero.
    for (Eigen::Index k = 0; k < ni; ++k) {
        if (to.a.row(k).isZero(0.0) && to.b.row(k).isZero(0.0)) {
            out[k] = 0.0;
        }
    }
    for (std::size_t g = 0; g < to.layout.n_groups(); ++g) {
        double sum = 0.0;
        for (int n : to.layout.groups[g]) {
            sum += v_nodes[n];
        }
        out[ni + static_cast<Eigen::Index>(g)] = sum / static_cast<double>(to.layout.groups[g].size());
    }
    return out;
}

PmNetwork compile_pm(const Topology& topo, const SwitchState& sw)
{
    using cd = std::complex<double>;
    PmNetwork net;
    net.layout = NodeLayout::build(topo, sw);
    net.switches = sw;
    net.omega = topo.base.omega_nom();
    const double w = net.omega;
    const auto nn = static_cast<Eigen::Index>(net.layout.n_nodes);
    const auto es = collect_elements(topo, sw);

    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(nn, nn);
    y += cd(0.0, w) * es.cap.cast<cd>();
    y += es.cond.cast<cd>();
    net.source_admittance.assign(3 * topo.sources.size(), cd(0.0, 0.0));
    for (const auto& el : es.inductive) {
        std::vector<int> closed;
        for (int p = 0; p < 3; ++p) {
            if (!el.open[static_cast<std::size_t>(p)]) {
                closed.push_back(p);
            }
        }
        if (closed.empty()) {
            continue;
        }
        const auto nc = static_cast<Eigen::Index>(closed.size());
        Eigen::MatrixXcd z(nc, nc);
        for (Eigen::Index i = 0; i < nc; ++i) {
            for (Eigen::Index j = 0; j < nc; ++j) {
                const int pi = closed[static_cast<std::size_t>(i)];
                const int pj = closed[static_cast<std::size_t>(j)];
                z(i, j) = cd(el.r(pi, pj), w * el.l(pi, pj));
            }
        }
        const Eigen::MatrixXcd ys = z.inverse();
        for (Eigen::Index i = 0; i < nc; ++i) {
            for (Eigen::Index j = 0; j < nc; ++j) {
                const auto pi = static_cast<std::size_t>(closed[static_cast<std::size_t>(i)]);
                const auto pj = static_cast<std::size_t>(closed[static_cast<std::size_t>(j)]);
                const int fi = el.from[pi], fj = el.from[pj], ti = el.to[pi], tj = el.to[pj];
                if (fi >= 0 && fj >= 0) {
                    y(fi, fj) += ys(i, j);
                }
                if (ti >= 0 && tj >= 0) {
                    y(ti, tj) += ys(i, j);
                }
                if (fi >= 0 && tj >= 0) {
                    y(fi, tj) -= ys(i, j);
                }
                if (ti >= 0 && fj >= 0) {
                    y(ti, fj) -= ys(i, j);
                }
            }
        }
        if (el.emf_input >= 0) {
            for (Eigen::Index i = 0; i < nc; ++i) {
                net.source_admittance[static_cast<std::size_t>(el.emf_input + closed[static_cast<std::size_t>(i)])] =
                    ys(i, i);
            }
        }
    }
    net.y_full = y;

    const auto ng = static_cast<Eigen::Index>(net.layout.n_groups());
    const auto m = static_cast<Eigen::Index>(3 * topo.sources.size());
    net.y_groups = Eigen::MatrixXcd::Zero(ng, ng);
    net.y_prescribed = Eigen::MatrixXcd::Zero(ng, m);
    for (Eigen::Index i = 0; i < nn; ++i) {
        const int gi = net.layout.group_of[static_cast<std::size_t>(i)];
        if (gi < 0) {
            continue;
        }
        for (Eigen::Index j = 0; j < nn; ++j) {
            if (y(i, j) == cd(0.0, 0.0)) {
                continue;
            }
            const int gj = net.layout.group_of[static_cast<std::size_t>(j)];
            if (gj >= 0) {
                net.y_groups(gi, gj) += y(i, j);
            } else {
                net.y_prescribed(gi, net.layout.prescribed_of[static_cast<std::size_t>(j)]) += y(i, j);
            }
        }
    }
    if (ng > 0) {
        net.lu.compute(net.y_groups);
        const double rc = net.lu.rcond();
        if (!(rc > 1e-13)) {
            throw SingularNetwork("phasor admittance matrix is singular (floating or islanded node), rcond=" +
                                  std::to_string(rc));
        }
    }
    return net;
}

PmNetwork compile_pm(const Topology& topo)
{
    return compile_pm(topo, SwitchState(topo));
}

ComplexPhasorSet<double> PmSolution::bus(std::size_t b) const
{
    return node(3 * b);
}

ComplexPhasorSet<double> PmSolution::node(std::size_t first) const
{
    const auto n = static_cast<Eigen::Index>(first);
    return {node_voltage[n], node_voltage[n + 1], node_voltage[n + 2]};
}

PmSolution solve_pm(const PmNetwork& net, const Topology& topo, const PmInjections& inj)
{
    using cd = std::complex<double>;
    if (inj.values.size() != topo.sources.size()) {
        throw ConfigError("solve_pm: one injection per source required");
    }
    const auto ng = static_cast<Eigen::Index>(net.layout.n_groups());
    const auto m = static_cast<Eigen::Index>(3 * topo.sources.size());
    Eigen::VectorXcd u(m);
    Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(ng);
    for (std::size_t s = 0; s < topo.sources.size(); ++s) {
        const auto& src = topo.sources[s];
        const auto b = *topo.bus_index(src.bus);
        for (int p = 0; p < 3; ++p) {
            const auto up = static_cast<std::size_t>(p);
            const cd val = inj.values[s][up];
            u[static_cast<Eigen::Index>(3 * s + up)] = val;
            const int g = net.layout.group_of[NodeLayout::bus_node(b, p)];
            if (g < 0 || net.switches.source_open[s][up]) {
                continue;
            }
            if (src.kind == SourceKind::current) {
                rhs[g] += val;
            } else if (src.kind == SourceKind::thevenin) {
                rhs[g] += net.source_admittance[3 * s + up] * val;
            }
        }
    }
    if (m > 0) {
        rhs -= net.y_prescribed * u;
    }
    PmSolution sol;
    Eigen::VectorXcd vg = ng > 0 ? Eigen::VectorXcd(net.lu.solve(rhs)) : Eigen::VectorXcd();
    if (ng > 0) {
        const double scale = std::max(rhs.norm(), 1e-300);
        sol.kcl_residual = (net.y_groups * vg - rhs).norm() / scale;
        if (rhs.norm() > 0.0 && sol.kcl_residual > 1e-9) {
            throw SingularNetwork("phasor solve KCL residual " + std::to_string(sol.kcl_residual));
        }
    }
    const auto nn = static_cast<Eigen::Index>(net.layout.n_nodes);
    sol.node_voltage.resize(nn);
    for (Eigen::Index n = 0; n < nn; ++n) {
        const int g = net.layout.group_of[static_cast<std::size_t>(n)];
        sol.node_voltage[n] = g >= 0 ? vg[g] : u[net.layout.prescribed_of[static_cast<std::size_t>(n)]];
    }
    return sol;
}

ComplexPhasorSet<double> source_current(const PmNetwork& net, const Topology& topo, std::size_t source,
                                        const ComplexPhasorSet<double>& emf, const PmSolution& sol)
{
    const auto v = sol.bus(*topo.bus_index(topo.sources[source].bus));
    ComplexPhasorSet<double> out;
    for (std::size_t p = 0; p < 3; ++p) {
        if (!net.switches.source_open[source][p]) {
            out[p] = net.source_admittance[3 * source + p] * (emf[p] - v[p]);
        }
    }
    return out;
}

const PmNetwork& PmNetworkCache::get(const SwitchState& sw)
{
    const auto key = sw.key();
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        it = cache_.emplace(key, std::make_unique<PmNetwork>(compile_pm(*topo_, sw))).first;
    }
    return *it->second;
}

const EmtNetworkCache::Entry& EmtNetworkCache::get(const SwitchState& sw)
{
    const auto key = sw.key();
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        auto entry = std::make_unique<Entry>();
        entry->net = compile_emt(*topo_, sw);
        entry->disc = discretize(entry->net, dt_);
        it = cache_.emplace(key, std::move(entry)).first;
    }
    return *it->second;
}

HarmonicSpectrum default_harmonic_spectrum(double base_current)
{
    return {base_current, {{2, 0.01}, {3, 0.25}, {4, 0.025}, {5, 0.15}, {7, 0.075}, {11, 0.04}, {13, 0.025}}};
}

ThreePhaseSample<double> harmonic_injection_emt(const HarmonicSpectrum& h, double omega, double t)
{
    ThreePhaseSample<double> out;
    out.t = t;
    constexpr double shift = 2.0 * std::numbers::pi / 3.0;
    for (const auto& [order, frac] : h.components) {
        const double amp = frac * h.base_current;
        const double ph = order * omega * t;
        out.a += amp * std::cos(ph);
        out.b += amp * std::cos(ph - order * shift);
        out.c += amp * std::cos(ph + order * shift);
    }
    return out;
}

ComplexPhasorSet<double> harmonic_injection_pm(const HarmonicSpectrum& h, double omega, double t)
{
    ComplexPhasorSet<double> out;
    constexpr double shift = 2.0 * std::numbers::pi / 3.0;
    for (const auto& [order, frac] : h.components) {
        const double amp = frac * h.base_current;
        const double ph = (order - 1) * omega * t;
        out.a += std::polar(amp, ph);
        out.b += std::polar(amp, ph - order * shift);
        out.c += std::polar(amp, ph + order * shift);
    }
    return out;
}

} // namespace vscsim
