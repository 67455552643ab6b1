#pragma once

#include <array>
#include <complex>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vscsim/frames.hpp"
#include "vscsim/solver.hpp"

namespace vscsim {

using PhaseMask = std::array<bool, 3>;

inline constexpr PhaseMask kAllPhases{true, true, true};

/// "ABC", "B", "ac" ... -> mask. Throws ConfigError on anything else.
PhaseMask parse_phases(const std::string& s);
std::string phases_to_string(const PhaseMask& m);

struct BusSpec {
    std::string name;
    double stray_capacitance{0.0};  ///< F per phase to ground
};

/// Overhead line as one lumped pi section. Per-km sequence data.
struct LineSpec {
    std::string name;
    std::string from;
    std::string to;
    double length_km{100.0};
    double r1{0.121};
    double r0{0.446};
    double l1{1.33e-3};
    double l0{3.73e-3};
    double c1{8.762e-9};
    double c0{6.373e-9};
};

/// Uncoupled three-phase series R-L, between buses or from a bus to ground.
struct RlBranchSpec {
    std::string name;
    std::string from;
    std::string to;  ///< "gnd" for a shunt branch
    double r{0.0};
    double l{0.0};
};

/// Constant-impedance load, sized at nominal voltage.
struct LoadSpec {
    std::string name;
    std::string bus;
    double p{0.0};  ///< W, three-phase
    double q{0.0};  ///< var, three-phase, inductive positive
    bool connected{true};
};

/// Per-phase resistance to ground at a bus or at a line end
/// ("line:<name>:from" / "line:<name>:to").
struct FaultSpec {
    std::string name;
    std::string location;
    double r{1.0};
    PhaseMask phases{kAllPhases};
    bool applied{false};
};

enum class SourceKind {
    thevenin,       ///< controlled EMF behind R-L (machines, EMT converter)
    current,        ///< current injection (phasor converter, harmonics)
    ideal_voltage,  ///< prescribed bus voltage
};

struct SourceSpec {
    std::string name;
    std::string bus;
    SourceKind kind{SourceKind::thevenin};
    double r{0.0};
    double l{0.0};
    /// EMT only: star point not grounded, so no zero-sequence current.
    bool floating_neutral{false};
};

struct Topology {
    PerUnitBase base;
    std::vector<BusSpec> buses;
    std::vector<LineSpec> lines;
    std::vector<RlBranchSpec> branches;
    std::vector<LoadSpec> loads;
    std::vector<FaultSpec> faults;
    std::vector<SourceSpec> sources;

    std::optional<std::size_t> bus_index(const std::string& name) const;
    std::optional<std::size_t> line_index(const std::string& name) const;
    std::optional<std::size_t> load_index(const std::string& name) const;
    std::optional<std::size_t> fault_index(const std::string& name) const;
    std::optional<std::size_t> source_index(const std::string& name) const;

    /// Structural checks: references resolve, lengths positive, graph
    /// connected through lines and branches. Throws ConfigError.
    void validate() const;
};

/// Series impedance and shunt capacitance matrices of a line (phase domain).
struct LinePhaseData {
    Eigen::Matrix3d r;
    Eigen::Matrix3d l;
    Eigen::Matrix3d c_total;
};
LinePhaseData line_phase_data(const LineSpec& line);

/// R and L of a constant-impedance load at the given voltage.
std::pair<double, double> load_rl(const LoadSpec& load, double v_ll, double omega);

enum class Domain { emt, pm };
enum class LineEnd { from = 0, to = 1 };

/// Status of every switchable element.
struct SwitchState {
    std::vector<std::array<PhaseMask, 2>> breaker_open;  ///< per line, per end
    std::vector<bool> load_connected;
    std::vector<bool> fault_applied;
    std::vector<PhaseMask> source_open;

    SwitchState() = default;
    explicit SwitchState(const Topology& topo);
    std::string key() const;
    bool operator==(const SwitchState&) const = default;
};

/// What an EMT current-zero opening is waiting for.
struct PendingOpening {
    enum class Kind { breaker, source } kind{Kind::breaker};
    std::size_t index{0};
    LineEnd end{LineEnd::from};
    int phase{0};
    std::optional<double> last_current;
};

/// Owns the switch state and applies network events. In the phasor domain
/// every operation is immediate. In EMT, breaker and source openings wait for
/// the next current zero of the phase; fault and load switches act at once.
class SwitchGear {
public:
    SwitchGear(const Topology& topo, Domain domain);

    const SwitchState& state() const { return state_; }
    SwitchState& state() { return state_; }

    /// Returns true if the switch state changed now. Throws UnknownTarget.
    bool apply(const Event& e);
    bool handles(EventAction a) const;

    /// Opens pending phases whose current crossed zero since the last call.
    /// `current` returns the present current of the phase being opened.
    bool update_pending(const std::function<double(const PendingOpening&)>& current);
    const std::vector<PendingOpening>& pending() const { return pending_; }

private:
    const Topology* topo_;
    Domain domain_;
    SwitchState state_;
    std::vector<PendingOpening> pending_;
};

/// Node bookkeeping shared by both domains. Each bus and each line end has
/// three phase nodes; closed breakers merge a line end into its bus.
struct NodeLayout {
    std::size_t n_nodes{0};
    std::vector<int> group_of;        ///< node -> dynamic group, or -1
    std::vector<int> prescribed_of;   ///< node -> prescribed input slot, or -1
    std::vector<std::vector<int>> groups;
    std::size_t n_groups() const { return groups.size(); }

    static NodeLayout build(const Topology& topo, const SwitchState& sw);
    static std::size_t bus_node(std::size_t bus, int phase) { return 3 * bus + static_cast<std::size_t>(phase); }
    static std::size_t line_end_node(const Topology& topo, std::size_t line, LineEnd end, int phase);
};

/// Resolve "bus" or "line:<name>:from|to" to node index for phase 0.
std::size_t location_node(const Topology& topo, const std::string& location);

/// Continuous EMT model x' = A x + B u, y = Cy x + Dy u, with
/// x = [inductor currents, dynamic node-group voltages] and
/// u = [Thevenin EMFs, prescribed voltages, injected currents], three entries
/// per source. Rebuilt on every switching change.
struct EmtNetwork {
    NodeLayout layout;
    SwitchState switches;
    std::size_t n_inductor{0};
    Eigen::MatrixXd a;
    Eigen::MatrixXd b;
    /// Node voltages from x and u (Nn rows).
    Eigen::MatrixXd cy;
    Eigen::MatrixXd dy;

    /// Offsets of each source's three inputs in u, and of each source's
    /// inductor currents in x (Thevenin only, else -1).
    std::vector<int> source_input;
    std::vector<int> source_state;
    std::vector<int> line_state;
    std::vector<int> load_state;
    std::vector<int> branch_state;
    std::size_t n_inputs{0};

    std::size_t n_states() const { return static_cast<std::size_t>(a.rows()); }
};

EmtNetwork compile_emt(const Topology& topo, const SwitchState& sw);
EmtNetwork compile_emt(const Topology& topo);

/// Zero-order-hold discretization x+ = phi x + gamma u of an EmtNetwork.
struct EmtDiscrete {
    Eigen::MatrixXd phi;
    Eigen::MatrixXd gamma;
};
EmtDiscrete discretize(const EmtNetwork& net, double dt);

/// Map a state vector across a recompile: inductor currents carry over,
/// group voltages come from the member nodes' previous voltages.
Eigen::VectorXd remap_state(const EmtNetwork& from, const EmtNetwork& to, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u);

/// Phasor-domain network: nodal admittance over node groups.
struct PmNetwork {
    NodeLayout layout;
    SwitchState switches;
    double omega{0.0};
    Eigen::MatrixXcd y_full;     ///< node admittance (Nn x Nn), before grouping
    Eigen::MatrixXcd y_groups;   ///< reduced to dynamic groups
    Eigen::MatrixXcd y_prescribed;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu;
    std::vector<std::complex<double>> source_admittance;  ///< Thevenin sources, per phase
};

PmNetwork compile_pm(const Topology& topo, const SwitchState& sw);
PmNetwork compile_pm(const Topology& topo);

/// Per-source phasor inputs, indexed like Topology::sources. Thevenin
/// sources take an EMF, current sources an injected current, ideal
/// sources a bus voltage.
struct PmInjections {
    std::vector<ComplexPhasorSet<double>> values;
};

struct PmSolution {
    Eigen::VectorXcd node_voltage;
    double kcl_residual{0.0};

    ComplexPhasorSet<double> bus(std::size_t b) const;
    ComplexPhasorSet<double> node(std::size_t first_node) const;
};

/// V = Z I with the cached factorization. Throws SingularNetwork when the
/// KCL residual exceeds 1e-9 relative.
PmSolution solve_pm(const PmNetwork& net, const Topology& topo, const PmInjections& inj);

/// Current out of a Thevenin source into its bus.
ComplexPhasorSet<double> source_current(const PmNetwork& net, const Topology& topo, std::size_t source,
                                        const ComplexPhasorSet<double>& emf, const PmSolution& sol);

/// Caches compiled networks by switch state.
class PmNetworkCache {
public:
    explicit PmNetworkCache(const Topology& topo) : topo_(&topo) {}
    const PmNetwork& get(const SwitchState& sw);

private:
    const Topology* topo_;
    std::map<std::string, std::unique_ptr<PmNetwork>> cache_;
};

class EmtNetworkCache {
public:
    EmtNetworkCache(const Topology& topo, double dt) : topo_(&topo), dt_(dt) {}
    struct Entry {
        EmtNetwork net;
        EmtDiscrete disc;
    };
    const Entry& get(const SwitchState& sw);

private:
    const Topology* topo_;
    double dt_;
    std::map<std::string, std::unique_ptr<Entry>> cache_;
};

/// Balanced harmonic current source.
struct HarmonicSpectrum {
    double base_current{0.0};  ///< peak A that the fractions refer to
    std::vector<std::pair<int, double>> components;  ///< (order, fraction)
};

/// Harmonic orders and magnitudes of the small-system harmonics study.
HarmonicSpectrum default_harmonic_spectrum(double base_current);

/// Instantaneous injected currents at time t (EMT).
ThreePhaseSample<double> harmonic_injection_emt(const HarmonicSpectrum& h, double omega, double t);

/// Phasor of the injection relative to the nominal rotating frame (PM):
/// order h rotates at (h - 1) omega.
ComplexPhasorSet<double> harmonic_injection_pm(const HarmonicSpectrum& h, double omega, double t);

} // namespace vscsim
