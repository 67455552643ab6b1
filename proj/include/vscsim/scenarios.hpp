#pragma once

#include <complex>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vscsim/machines.hpp"
#include "vscsim/network.hpp"
#include "vscsim/powerflow.hpp"
#include "vscsim/results.hpp"
#include "vscsim/solver.hpp"
#include "vscsim/vsc.hpp"

namespace vscsim {

struct MachineUnit {
    SgMachine machine;
    std::string bus;
    bool slack{false};
    double p_set{0.0};  ///< W, ignored at the slack
    double v_set{1.0};  ///< pu terminal voltage
};

struct VscUnit {
    std::string name;
    std::string bus;
    VscParams params;
    double p_set{0.0};  ///< W
    double q_set{0.0};  ///< var
};

/// Balanced harmonic current source, sized from a reference load.
struct HarmonicUnit {
    std::string name;
    std::string bus;
    double load_p{30e6};
    double load_q{10e6};
    bool enabled{false};

    HarmonicSpectrum spectrum(const PerUnitBase& base) const;
};

struct TestSpec {
    std::string id;
    VscFeatures features;
    double duration{3.5};
    std::vector<Event> events;
};

/// A test system: passive network plus devices and its scripted tests.
struct SystemModel {
    std::string name;
    Topology network;  ///< without device sources
    std::vector<MachineUnit> machines;
    std::vector<VscUnit> vscs;
    std::vector<HarmonicUnit> harmonics;
    std::vector<TestSpec> tests;
    double record_interval{50e-6};

    const TestSpec& test(const std::string& id) const;
    /// Network with the device sources attached. Machines come first, then
    /// converters, then harmonic sources. Converters are Thevenin branches
    /// in EMT and current injections in the phasor domain.
    Topology topology(Domain d) const;
    /// Structural checks on network and device data. Throws ConfigError.
    void validate() const;
};

/// Parse a system from INI text. Overrides are ("section.key", value)
/// pairs applied before interpretation, e.g. ("vsc.VSC.omega_pq", "169.5").
SystemModel parse_system(const std::string& ini_text,
                         const std::vector<std::pair<std::string, std::string>>& overrides = {});
SystemModel load_system_file(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// The shipped configurations, compiled into the library.
SystemModel build_small_system();
SystemModel build_large_system();
const char* shipped_system_ini(const std::string& name);

/// One simulation request.
struct ScenarioConfig {
    std::string system{"small"};  ///< "small", "large" or a path to an INI file
    std::string test{"setpoint"};
    VscModel model{VscModel::emt_avg};
    double dt{5e-6};
    std::optional<double> duration;
    std::optional<VscFeatures> features;
    std::optional<double> record_interval;
    /// Run is declared divergent once a network voltage exceeds this
    /// multiple of the base peak voltage.
    double divergence_bound{kDefaultDivergenceBound};
    std::vector<std::pair<std::string, std::string>> overrides;
};

inline constexpr double kMinDt = 5e-6;
inline constexpr double kMaxDt = 12e-3;

/// Reads a per-test file with [scenario] and [override] sections.
ScenarioConfig load_scenario_file(const std::filesystem::path& path);

/// Loads the system named by the config, with its overrides applied.
SystemModel resolve_system(const ScenarioConfig& cfg);

/// Checks dt range and that the test exists. Throws ConfigError.
void validate_scenario(const ScenarioConfig& cfg, const SystemModel& sys);

/// Power-flow operating point and the device states derived from it.
struct SteadyState {
    PowerFlowResult pf;
    std::vector<std::complex<double>> bus_v;       ///< peak V phasors, phase a
    std::vector<SgState> machines;
    std::vector<std::complex<double>> machine_i;  ///< peak A out of each machine
    std::vector<std::complex<double>> vsc_v;
    std::vector<std::complex<double>> vsc_i;      ///< peak A out of each converter
};

SteadyState initialize_steady_state(const SystemModel& sys, double tol = 1e-6);

/// Bus data for the power flow of a system, in system per unit.
std::vector<PfBus> power_flow_buses(const SystemModel& sys);

RunResult run_scenario(const ScenarioConfig& cfg);
RunResult run_scenario(const SystemModel& sys, const ScenarioConfig& cfg);

/// Named tests and which system offers them.
std::vector<std::string> test_ids(const std::string& system);

} // namespace vscsim
