#pragma once

#include <complex>
#include <string>

#include "vscsim/frames.hpp"

namespace vscsim {

/// Round-rotor machine data on its own rating. Reactances in pu, time
/// constants in s.
struct SgParams {
    double s_n{700e6};
    double v_n{22e3};
    double xd{1.25};
    double xq{1.00};
    double xdp{0.333};
    double xdpp{0.292};
    double xqpp{0.292};
    double xl{0.15};
    double rs{0.01};
    double tdop{5.0};
    double tdopp{0.002};
    double tqopp{0.002};
    double h{5.0};
    double d{0.0};
    double f_nom{50.0};  ///< system frequency the rotor angle is measured against

    /// Throws ConfigError unless xd >= xd' >= xd'' > xl > 0, xq >= xq'' > xl,
    /// time constants and inertia positive.
    void validate() const;
};

/// Generator data of the four-machine system, index 0..3.
SgParams reference_generator(int index);

/// First-order exciter with ceiling.
struct AvrParams {
    double ka{50.0};
    double ta{0.05};
    double efd_min{-3.0};
    double efd_max{6.0};
};

/// First-order turbine with permanent speed droop.
struct GovernorParams {
    double droop{0.05};
    double tg{0.2};
    double tm_max{1.2};
    double tm_min{0.0};
};

/// Dynamic state. Fluxes and voltages in pu of the machine rating.
struct SgState {
    double delta{0.0};   ///< rad, q axis relative to the synchronous frame
    double omega{1.0};   ///< pu speed
    double eqp{0.0};     ///< e'q
    double psi1d{0.0};   ///< d-axis damper flux
    double edpp{0.0};    ///< e''d (q-axis damper)
    double efd{0.0};     ///< exciter output
    double tm{0.0};      ///< mechanical torque
    double v_ref{1.0};   ///< exciter setpoint
    double p_ref{0.0};   ///< governor setpoint
};

struct SgRates {
    SgState dx;          ///< time derivatives (setpoint fields stay zero)
    double te{0.0};      ///< electrical torque, pu
};

/// e''q from the d-axis fluxes.
double subtransient_q(const SgParams& p, double eqp, double psi1d);

/// E'' in the synchronous frame (pu), i.e. (e''d + j e''q) e^{j(delta - pi/2)}.
std::complex<double> subtransient_emf(const SgParams& p, const SgState& x);

/// Rotate a synchronous-frame phasor into the machine (d + j q) frame.
std::complex<double> to_machine_frame(std::complex<double> z, double delta);

/// Subtransient saliency is neglected: both axes use xd'' so the machine
/// fits a single Thevenin branch.
inline double xqpp_model(const SgParams& p) { return p.xdpp; }

/// Right-hand side of the machine model for stator current i (pu,
/// synchronous frame, out of the machine) and terminal voltage magnitude.
SgRates sg_derivatives(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, const SgState& x,
                       std::complex<double> i, double v_mag);

/// Exciter and governor updates in isolation; return the new output.
double avr_step(const AvrParams& avr, SgState& x, double v_mag, double dt);
double governor_step(const GovernorParams& gov, SgState& x, double dt);

/// Forward Euler over the whole state.
void sg_step_explicit(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, SgState& x,
                      std::complex<double> i, double v_mag, double dt);

/// Phasor-mode update: the rotor fluxes use a linearly implicit Euler step
/// with the stator current held over the step; mechanics and controls use
/// forward Euler.
void sg_step_phasor(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, SgState& x,
                    std::complex<double> i, double v_mag, double dt);

/// Back-initialize from a solved operating point. v and s are the terminal
/// voltage phasor and the complex power out, both in pu of the machine
/// rating. Throws InitFailure if any derivative exceeds tol.
SgState init_from_powerflow(const SgParams& p, const AvrParams& avr, const GovernorParams& gov,
                            std::complex<double> v, std::complex<double> s, double tol = 1e-6);

/// Machine with its network interface on a given system base.
struct SgMachine {
    std::string name;
    SgParams params;
    AvrParams avr;
    GovernorParams gov;
    SgState x;
    double v_peak_base{0.0};  ///< network peak phase voltage, V

    double z_base() const;
    double i_peak_base() const;
    /// Thevenin branch seen by the network (ohm, H).
    double thevenin_r() const;
    double thevenin_l(double omega_nom) const;
};

} // namespace vscsim
