#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "vscsim/network.hpp"

namespace vscsim {

enum class BusType { pq, pv, slack };

/// Per-bus power-flow data, per unit of the system base. Injections are
/// positive into the network; constant-impedance loads live in Y.
struct PfBus {
    BusType type{BusType::pq};
    double p{0.0};
    double q{0.0};
    double v_set{1.0};
    double angle{0.0};  ///< slack angle, rad
};

struct PowerFlowResult {
    std::vector<std::complex<double>> v;  ///< bus voltages, pu
    std::vector<std::complex<double>> s;  ///< net complex injection per bus, pu
    int iterations{0};
    double mismatch{0.0};
};

/// Positive-sequence bus admittance in pu: pi lines, R-L branches,
/// constant-impedance loads that are connected, bus stray capacitance.
Eigen::MatrixXcd positive_sequence_ybus(const Topology& topo);

/// Newton-Raphson in polar form. Throws PowerFlowDiverged if the mismatch
/// stays above tol after max_iter iterations.
PowerFlowResult solve_power_flow(const Eigen::MatrixXcd& ybus, const std::vector<PfBus>& buses, double tol = 1e-10,
                                 int max_iter = 30);

} // namespace vscsim
