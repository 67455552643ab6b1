#pragma once

#include <optional>
#include <string>
#include <utility>

#include "vscsim/frames.hpp"
#include "vscsim/solver.hpp"

namespace vscsim {

enum class VscModel { emt_avg, pm_full, pm_i1, pm_i0, pm_pq1 };

const char* model_name(VscModel m);
/// Accepts "pm-i0" and "pm_i0" spellings.
std::optional<VscModel> parse_model(std::string name);
inline bool is_phasor(VscModel m) { return m != VscModel::emt_avg; }

/// Converter plant and control constants. SI units unless noted.
struct VscParams {
    double s_rated{100e6};
    double r{2.42};                 ///< ohm, aggregate filter and transformer
    double l{0.2311};               ///< H
    double omega_c{847.46};         ///< rad/s, inner bandwidth
    double omega_pq{84.746};        ///< rad/s, outer bandwidth
    double omega_pll{50.0};         ///< rad/s
    double zeta_pll{0.7071067811865476};
    double k_droop_f{20e6};         ///< W/Hz
    double k_droop_v{5000.0};       ///< var/V (peak phase voltage)
    double tau_droop{0.1};          ///< s, droop measurement filters
    double k_lvrt{2.0};             ///< pu current per pu voltage
    double v_g_min{0.9};            ///< pu
    double i_lvrt_max{1.0};         ///< pu
    double i_max{1.1};              ///< pu
    double v_g_pk{179629.0};        ///< V, nominal peak phase voltage
    double f_nom{50.0};
    bool current_limit{true};

    /// Peak current at rated power and nominal voltage.
    double i_rated() const { return 2.0 * s_rated / (3.0 * v_g_pk); }
    double omega_nom() const { return 2.0 * std::numbers::pi * f_nom; }
    /// Throws ConfigError on non-positive gains, omega_pq >= omega_c or
    /// i_lvrt_max > i_max.
    void validate() const;
};

struct VscFeatures {
    bool droops{false};
    bool lvrt{false};
    bool neg_seq{false};
    bool operator==(const VscFeatures&) const = default;
};

struct VscGains {
    double zeta_pll{0.0};
    double kp_pll{0.0};
    double tau_i_pll{0.0};
    double kp_c{0.0};
    double tau_i_c{0.0};
    double kp_pq{0.0};
    double tau_i_pq{0.0};
    double tau_c{0.0};
    double tau_pq{0.0};
};

VscGains tune_gains(const VscParams& p);

/// Positive and negative sequence rotating-frame pair.
struct SeqDq {
    DqSample<double> pos{};
    DqSample<double> neg{0.0, 0.0, 0.0, Sequence::negative};
};

struct PllState {
    double theta{0.0};
    double integral{0.0};  ///< rad/s added to the nominal speed
    double omega{0.0};     ///< estimate used during the last step
};

/// One PLL step driving v_d to zero. Returns the angle used for this step
/// and advances theta with the new speed estimate.
double pll_step(PllState& s, const VscGains& g, double v_d, double omega_nom, double dt);

struct InnerLoop {
    PiBlock q_pos, d_pos, q_neg, d_neg;
};

/// PI controllers for the inner loop with zero integrator state.
InnerLoop make_inner_loop(const VscGains& g);

/// Converter voltage references from current errors, with grid-voltage
/// and omega*L decoupling feedforward; negative sequence mirrored.
SeqDq inner_current_step(InnerLoop& loop, const SeqDq& i_ref, const SeqDq& i_meas, const SeqDq& v_g, double omega_l,
                         double dt, bool neg_seq);

/// Reactive current demand of the ride-through curve, pu of rated current.
double lvrt_current_ref(double v_pu, const VscParams& p);

struct DroopState {
    FirstOrderLag f_filter;
    FirstOrderLag v_filter;
    double v_ref{0.0};  ///< V, voltage the droop regulates around
};

DroopState make_droop(const VscParams& p, double f0, double v0);
/// Delta P = k_f (f_nom - f_filtered), W.
double freq_droop(DroopState& s, double f, const VscParams& p, double dt);
/// Delta Q = k_v (v_ref - v_filtered), var.
double volt_droop(DroopState& s, double v_q, const VscParams& p, double dt);

/// Limit a positive-sequence current reference (A). With `d_priority` the
/// d channel keeps its value up to i_lvrt_max and q gets the remainder;
/// otherwise the vector is scaled down.
std::pair<double, double> limit_current(double iq, double id, const VscParams& p, bool d_priority);

struct OuterLoop {
    PiBlock p;
    PiBlock q;
    bool lvrt_active{false};
};

OuterLoop make_outer_loop(const VscGains& g);

struct OuterInputs {
    double p_ref{0.0};   ///< W including droop
    double q_ref{0.0};   ///< var including droop
    double p{0.0};
    double q{0.0};
    double v_pu{1.0};    ///< positive-sequence v_q in pu
};

/// Power loop for the EMT, full and I1 models. Returns (iq*, id*) in A.
std::pair<double, double> outer_pq_step(OuterLoop& loop, const VscParams& par, const VscFeatures& f,
                                        const OuterInputs& in, double dt);

/// Everything a device reports each step.
struct VscSignals {
    double p{0.0};
    double q{0.0};
    SeqDq v;
    SeqDq i;
    double iq_ref{0.0};
    double id_ref{0.0};
    double f{50.0};
    bool lvrt{false};
    double theta{0.0};
};

/// Average-value converter in the EMT domain: a controlled voltage behind
/// the R-L filter, driven by PLL, DSC, outer and inner loops.
class EmtVsc {
public:
    EmtVsc(const VscParams& p, const VscFeatures& f);

    /// Steady state for grid phasor v (peak V, angle at t0) and output
    /// phasor current i (peak A), with setpoints (p_ref, q_ref).
    void initialize(std::complex<double> v, std::complex<double> i, double p_ref, double q_ref, double t0, double dt);

    void set_p_ref(double p) { p_ref_ = p; }
    void set_q_ref(double q) { q_ref_ = q; }
    double p_ref() const { return p_ref_; }
    double q_ref() const { return q_ref_; }

    /// Measurements at t; returns the converter voltage to apply over
    /// [t, t + dt] (evaluated at mid-step).
    ThreePhaseSample<double> step(double t, double dt, const ThreePhaseSample<double>& v_abc,
                                  const ThreePhaseSample<double>& i_abc);

    /// Steady converter voltage phasor for a given grid voltage and current.
    std::complex<double> steady_emf(std::complex<double> v, std::complex<double> i) const;

    const VscSignals& signals() const { return sig_; }
    const VscParams& params() const { return par_; }
    const VscGains& gains() const { return gains_; }

private:
    SeqDq split(DscBuffer& buf, double t, const ThreePhaseSample<double>& x, double theta) const;

    VscParams par_;
    VscFeatures feat_;
    VscGains gains_;
    PllState pll_;
    DscBuffer dsc_v_;
    DscBuffer dsc_i_;
    InnerLoop inner_;
    OuterLoop outer_;
    DroopState droop_;
    double p_ref_{0.0};
    double q_ref_{0.0};
    VscSignals sig_;
};

/// The four phasor approximations. The converter is a current source;
/// its reference frame is the angle of the positive-sequence voltage.
class PmVsc {
public:
    PmVsc(VscModel model, const VscParams& p, const VscFeatures& f);

    void initialize(std::complex<double> v, std::complex<double> i, double p_ref, double q_ref);

    void set_p_ref(double p) { p_ref_ = p; }
    void set_q_ref(double q) { q_ref_ = q; }
    double p_ref() const { return p_ref_; }
    double q_ref() const { return q_ref_; }

    /// Injected phase currents (peak A) from the present state.
    ComplexPhasorSet<double> injection() const;

    /// Measure at the solved bus voltage and advance the states by dt.
    void step(double dt, const ComplexPhasorSet<double>& v_bus);

    const VscSignals& signals() const { return sig_; }
    VscModel model() const { return model_; }
    const VscGains& gains() const { return gains_; }

private:
    std::pair<double, double> lvrt_override(double iq, double id, double v_pu);

    VscModel model_;
    VscParams par_;
    VscFeatures feat_;
    VscGains gains_;
    double theta_{0.0};
    bool have_theta_{false};
    // Output current state per sequence (A), meaning depends on the model.
    SeqDq i_state_;
    InnerLoop inner_;
    OuterLoop outer_;
    FirstOrderLag lag_q_pos_, lag_d_pos_;
    DroopState droop_;
    double p_ref_{0.0};
    double q_ref_{0.0};
    double last_theta_{0.0};
    VscSignals sig_;
};

} // namespace vscsim
