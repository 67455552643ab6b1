#include "vscsim/machines.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "vscsim/errors.hpp"

namespace vscsim {

using cd = std::complex<double>;

void SgParams::validate() const
{
    if (!(s_n > 0.0 && v_n > 0.0)) {
        throw ConfigError("machine rating must be positive");
    }
    if (!(xd >= xdp && xdp >= xdpp && xdpp > xl && xl > 0.0)) {
        throw ConfigError("machine reactances must satisfy xd >= xd' >= xd'' > xl > 0");
    }
    if (!(xq >= xqpp && xqpp > xl)) {
        throw ConfigError("machine reactances must satisfy xq >= xq'' > xl");
    }
    if (!(tdop > 0.0 && tdopp > 0.0 && tqopp > 0.0 && h > 0.0) || rs < 0.0 || d < 0.0) {
        throw ConfigError("machine time constants and inertia must be positive");
    }
}

SgParams reference_generator(int index)
{
    struct Row {
        double s_n, xd, xq, xdp, xdpp, xqpp, tdop, tdopp, tqopp, h;
    };
    static constexpr std::array<Row, 4> rows{{
        {1000e6, 2.00, 1.80, 0.35, 0.25, 0.30, 4.485, 0.068, 0.10, 6.0},
        {700e6, 1.25, 1.00, 0.333, 0.292, 0.292, 5.00, 0.002, 0.002, 5.0},
        {500e6, 1.667, 1.125, 0.25, 0.233, 0.225, 6.00, 0.002, 0.002, 3.0},
        {500e6, 1.25, 1.00, 0.333, 0.292, 0.292, 5.00, 0.002, 0.002, 5.0},
    }};
    if (index < 0 || index > 3) {
        throw ConfigError("reference generator index must be 0..3");
    }
    const Row& r = rows[static_cast<std::size_t>(index)];
    SgParams p;
    p.s_n = r.s_n;
    p.v_n = 22e3;
    p.xd = r.xd;
    p.xq = r.xq;
    p.xdp = r.xdp;
    p.xdpp = r.xdpp;
    p.xqpp = r.xqpp;
    p.xl = 0.15;
    p.rs = 0.01;
    p.tdop = r.tdop;
    p.tdopp = r.tdopp;
    p.tqopp = r.tqopp;
    p.h = r.h;
    return p;
}

double subtransient_q(const SgParams& p, double eqp, double psi1d)
{
    const double den = p.xdp - p.xl;
    return ((p.xdpp - p.xl) * eqp + (p.xdp - p.xdpp) * psi1d) / den;
}

cd to_machine_frame(cd z, double delta)
{
    return z * std::polar(1.0, -(delta - 0.5 * std::numbers::pi));
}

cd subtransient_emf(const SgParams& p, const SgState& x)
{
    const cd e(x.edpp, subtransient_q(p, x.eqp, x.psi1d));
    return e * std::polar(1.0, x.delta - 0.5 * std::numbers::pi);
}

namespace {

/// Flux derivatives as (rate = (target - state) / T) targets.
struct FluxTargets {
    double eqp, psi1d, edpp;
};

FluxTargets flux_targets(const SgParams& p, const SgState& x, cd im)
{
    const double id = im.real();
    const double iq = im.imag();
    const double den = p.xdp - p.xl;
    const double k = (p.xdp - p.xdpp) / (den * den);
    FluxTargets t{};
    t.eqp = x.efd - (p.xd - p.xdp) * (id - k * (x.psi1d + den * id - x.eqp));
    t.psi1d = x.eqp - den * id;
    t.edpp = (p.xq - xqpp_model(p)) * iq;
    return t;
}

double electrical_torque(const SgParams& p, const SgState& x, cd i)
{
    return (subtransient_emf(p, x) * std::conj(i)).real();
}

} // namespace

SgRates sg_derivatives(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, const SgState& x, cd i,
                       double v_mag)
{
    const cd im = to_machine_frame(i, x.delta);
    const auto t = flux_targets(p, x, im);
    SgRates r;
    r.te = electrical_torque(p, x, i);
    r.dx.delta = 2.0 * std::numbers::pi * p.f_nom * (x.omega - 1.0);
    r.dx.omega = (x.tm - r.te - p.d * (x.omega - 1.0)) / (2.0 * p.h);
    r.dx.eqp = (t.eqp - x.eqp) / p.tdop;
    r.dx.psi1d = (t.psi1d - x.psi1d) / p.tdopp;
    r.dx.edpp = (t.edpp - x.edpp) / p.tqopp;
    r.dx.efd = (avr.ka * (x.v_ref - v_mag) - x.efd) / avr.ta;
    r.dx.tm = (x.p_ref - (x.omega - 1.0) / gov.droop - x.tm) / gov.tg;
    r.dx.v_ref = 0.0;
    r.dx.p_ref = 0.0;
    return r;
}

double avr_step(const AvrParams& avr, SgState& x, double v_mag, double dt)
{
    x.efd += dt * (avr.ka * (x.v_ref - v_mag) - x.efd) / avr.ta;
    x.efd = std::clamp(x.efd, avr.efd_min, avr.efd_max);
    return x.efd;
}

double governor_step(const GovernorParams& gov, SgState& x, double dt)
{
    x.tm += dt * (x.p_ref - (x.omega - 1.0) / gov.droop - x.tm) / gov.tg;
    x.tm = std::clamp(x.tm, gov.tm_min, gov.tm_max);
    return x.tm;
}

namespace {

void mechanics_and_controls(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, SgState& x,
                            double te, double v_mag, double dt)
{
    const double f_scale = 2.0 * std::numbers::pi * p.f_nom;
    const double domega = (x.tm - te - p.d * (x.omega - 1.0)) / (2.0 * p.h);
    x.delta += dt * f_scale * (x.omega - 1.0);
    const double omega_old = x.omega;
    x.omega += dt * domega;
    SgState ctl = x;
    ctl.omega = omega_old;
    avr_step(avr, ctl, v_mag, dt);
    governor_step(gov, ctl, dt);
    x.efd = ctl.efd;
    x.tm = ctl.tm;
}

} // namespace

void sg_step_explicit(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, SgState& x, cd i,
                      double v_mag, double dt)
{
    const cd im = to_machine_frame(i, x.delta);
    const auto t = flux_targets(p, x, im);
    const double te = electrical_torque(p, x, i);
    const SgState old = x;
    mechanics_and_controls(p, avr, gov, x, te, v_mag, dt);
    x.eqp = old.eqp + dt * (t.eqp - old.eqp) / p.tdop;
    x.psi1d = old.psi1d + dt * (t.psi1d - old.psi1d) / p.tdopp;
    x.edpp = old.edpp + dt * (t.edpp - old.edpp) / p.tqopp;
}

void sg_step_phasor(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, SgState& x, cd i,
                    double v_mag, double dt)
{
    const cd im = to_machine_frame(i, x.delta);
    const double te = electrical_torque(p, x, i);
    const double id = im.real();
    const double iq = im.imag();
    const SgState old = x;
    mechanics_and_controls(p, avr, gov, x, te, v_mag, dt);

    // Backward Euler on the three flux equations with efd and i frozen.
    // T'do eqp'  = efd - eqp - (xd - xd')(id - k(psi1d + a id - eqp))
    // T''do psi' = eqp - psi1d - a id
    const double a = p.xdp - p.xl;
    const double k = (p.xdp - p.xdpp) / (a * a);
    const double c = p.xd - p.xdp;
    const double h1 = dt / p.tdop;
    const double h2 = dt / p.tdopp;
    Eigen::Matrix2d m;
    m << 1.0 + h1 * (1.0 + c * k), -h1 * c * k, -h2, 1.0 + h2;
    Eigen::Vector2d rhs;
    rhs << old.eqp + h1 * (old.efd - c * id + c * k * a * id), old.psi1d - h2 * a * id;
    const Eigen::Vector2d sol = m.partialPivLu().solve(rhs);
    x.eqp = sol[0];
    x.psi1d = sol[1];
    const double h3 = dt / p.tqopp;
    x.edpp = (old.edpp + h3 * (p.xq - xqpp_model(p)) * iq) / (1.0 + h3);
}

SgState init_from_powerflow(const SgParams& p, const AvrParams& avr, const GovernorParams& gov, cd v, cd s,
                            double tol)
{
    p.validate();
    if (std::abs(v) < 1e-6) {
        throw InitFailure("machine terminal voltage is zero");
    }
    const cd i = std::conj(s / v);
    SgState x;
    x.delta = std::arg(v + cd(p.rs, p.xq) * i);
    x.omega = 1.0;
    const cd im = to_machine_frame(i, x.delta);
    const cd vm = to_machine_frame(v, x.delta);
    const double id = im.real();
    const double iq = im.imag();
    const double vq = vm.imag();
    const double epp_q = vq + p.rs * iq + p.xdpp * id;
    x.eqp = epp_q + (p.xdp - p.xdpp) * id;
    x.psi1d = x.eqp - (p.xdp - p.xl) * id;
    x.edpp = (p.xq - xqpp_model(p)) * iq;
    x.efd = x.eqp + (p.xd - p.xdp) * id;
    const double te = (subtransient_emf(p, x) * std::conj(i)).real();
    x.tm = te;
    x.p_ref = te;
    x.v_ref = std::abs(v) + x.efd / avr.ka;
    if (x.efd > avr.efd_max || x.efd < avr.efd_min) {
        throw InitFailure("field voltage " + std::to_string(x.efd) + " outside exciter limits");
    }
    if (x.tm > gov.tm_max || x.tm < gov.tm_min) {
        throw InitFailure("mechanical torque " + std::to_string(x.tm) + " outside governor limits");
    }
    const auto r = sg_derivatives(p, avr, gov, x, i, std::abs(v));
    const double worst = std::max({std::abs(r.dx.delta), std::abs(r.dx.omega), std::abs(r.dx.eqp),
                                   std::abs(r.dx.psi1d), std::abs(r.dx.edpp), std::abs(r.dx.efd),
                                   std::abs(r.dx.tm)});
    if (worst > tol) {
        throw InitFailure("machine initial derivative " + std::to_string(worst) + " exceeds tolerance");
    }
    return x;
}

double SgMachine::z_base() const
{
    const double v_ll = v_peak_base * std::numbers::sqrt3 / std::numbers::sqrt2;
    return v_ll * v_ll / params.s_n;
}

double SgMachine::i_peak_base() const
{
    return 2.0 * params.s_n / (3.0 * v_peak_base);
}

double SgMachine::thevenin_r() const
{
    return params.rs * z_base();
}

double SgMachine::thevenin_l(double omega_nom) const
{
    return params.xdpp * z_base() / omega_nom;
}

} // namespace vscsim
