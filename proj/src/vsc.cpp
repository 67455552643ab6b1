#include "vscsim/vsc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <tuple>

#include "vscsim/errors.hpp"

namespace vscsim {

using cd = std::complex<double>;

const char* model_name(VscModel m)
{
    switch (m) {
    case VscModel::emt_avg: return "emt-avg";
    case VscModel::pm_full: return "pm-full";
    case VscModel::pm_i1: return "pm-i1";
    case VscModel::pm_i0: return "pm-i0";
    case VscModel::pm_pq1: return "pm-pq1";
    }
    return "?";
}

std::optional<VscModel> parse_model(std::string name)
{
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) {
        return c == '_' ? '-' : static_cast<char>(std::tolower(c));
    });
    for (auto m : {VscModel::emt_avg, VscModel::pm_full, VscModel::pm_i1, VscModel::pm_i0, VscModel::pm_pq1}) {
        if (name == model_name(m)) {
            return m;
        }
    }
    return std::nullopt;
}

void VscParams::validate() const
{
    const double positives[] = {s_rated, r, l, omega_c, omega_pq, omega_pll, zeta_pll, k_droop_f, k_droop_v,
                                tau_droop, k_lvrt, v_g_min, i_lvrt_max, i_max, v_g_pk, f_nom};
    for (double v : positives) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw ConfigError("converter parameters and gains must be positive and finite");
        }
    }
    if (!(omega_pq < omega_c)) {
        throw ConfigError("outer bandwidth must be below the inner bandwidth");
    }
    if (i_lvrt_max > i_max) {
        throw ConfigError("i_lvrt_max must not exceed i_max");
    }
}

VscGains tune_gains(const VscParams& p)
{
    VscGains g;
    g.zeta_pll = 1.0 / std::sqrt(2.0);
    g.kp_pll = 2.0 * g.zeta_pll * p.omega_pll / p.v_g_pk;
    g.tau_i_pll = 2.0 * g.zeta_pll / p.omega_pll;
    g.tau_i_c = p.l / p.r;
    g.kp_c = p.l * p.omega_c;
    g.tau_i_pq = 1.0 / p.omega_c;
    g.kp_pq = g.tau_i_pq * p.omega_pq * 2.0 / (3.0 * p.v_g_pk);
    g.tau_c = 1.0 / p.omega_c;
    g.tau_pq = 1.0 / p.omega_pq;
    return g;
}

double pll_step(PllState& s, const VscGains& g, double v_d, double omega_nom, double dt)
{
    const double e = -v_d;
    const double used = s.theta;
    s.omega = omega_nom + g.kp_pll * e + s.integral;
    s.integral += dt * g.kp_pll / g.tau_i_pll * e;
    s.theta = wrap_angle(s.theta + dt * s.omega);
    return used;
}

namespace {

PiBlock make_pi(double kp, double tau_i)
{
    PiBlock b;
    b.kp = kp;
    b.tau_i = tau_i;
    return b;
}

} // namespace

InnerLoop make_inner_loop(const VscGains& g)
{
    const PiBlock pi = make_pi(g.kp_c, g.tau_i_c);
    return {pi, pi, pi, pi};
}

SeqDq inner_current_step(InnerLoop& loop, const SeqDq& i_ref, const SeqDq& i_meas, const SeqDq& v_g, double omega_l,
                         double dt, bool neg_seq)
{
    SeqDq out;
    const double uq = pi_step(loop.q_pos, i_ref.pos.q - i_meas.pos.q, dt);
    const double ud = pi_step(loop.d_pos, i_ref.pos.d - i_meas.pos.d, dt);
    out.pos.q = v_g.pos.q + uq + omega_l * i_meas.pos.d;
    out.pos.d = v_g.pos.d + ud - omega_l * i_meas.pos.q;
    if (neg_seq) {
        const double nq = pi_step(loop.q_neg, i_ref.neg.q - i_meas.neg.q, dt);
        const double nd = pi_step(loop.d_neg, i_ref.neg.d - i_meas.neg.d, dt);
        out.neg.q = v_g.neg.q + nq - omega_l * i_meas.neg.d;
        out.neg.d = v_g.neg.d + nd + omega_l * i_meas.neg.q;
    }
    return out;
}

double lvrt_current_ref(double v_pu, const VscParams& p)
{
    if (v_pu >= p.v_g_min) {
        return 0.0;
    }
    return std::min(p.k_lvrt * (p.v_g_min - v_pu), p.i_lvrt_max);
}

DroopState make_droop(const VscParams& p, double f0, double v0)
{
    DroopState s;
    s.f_filter = {p.tau_droop, f0};
    s.v_filter = {p.tau_droop, v0};
    s.v_ref = v0;
    return s;
}

double freq_droop(DroopState& s, double f, const VscParams& p, double dt)
{
    const double filtered = lag_step(s.f_filter, f, dt);
    return p.k_droop_f * (p.f_nom - filtered);
}

double volt_droop(DroopState& s, double v_q, const VscParams& p, double dt)
{
    const double filtered = lag_step(s.v_filter, v_q, dt);
    return p.k_droop_v * (s.v_ref - filtered);
}

std::pair<double, double> limit_current(double iq, double id, const VscParams& p, bool d_priority)
{
    if (!p.current_limit) {
        return {iq, id};
    }
    const double i_max = p.i_max * p.i_rated();
    if (d_priority) {
        const double d_lim = std::min(p.i_lvrt_max, p.i_max) * p.i_rated();
        const double d = std::clamp(id, -d_lim, d_lim);
        const double q_lim = std::sqrt(std::max(0.0, i_max * i_max - d * d));
        return {std::clamp(iq, -q_lim, q_lim), d};
    }
    const double mag = std::hypot(iq, id);
    if (mag <= i_max) {
        return {iq, id};
    }
    const double k = i_max / mag;
    return {iq * k, id * k};
}

OuterLoop make_outer_loop(const VscGains& g)
{
    return {make_pi(g.kp_pq, g.tau_i_pq), make_pi(g.kp_pq, g.tau_i_pq), false};
}

std::pair<double, double> outer_pq_step(OuterLoop& loop, const VscParams& par, const VscFeatures& f,
                                        const OuterInputs& in, double dt)
{
    const double e_p = in.p_ref - in.p;
    const double e_q = in.q_ref - in.q;
    loop.lvrt_active = f.lvrt && in.v_pu < par.v_g_min;
    const double iq_u = loop.p.output(e_p);
    const double id_u = loop.lvrt_active ? lvrt_current_ref(in.v_pu, par) * par.i_rated() : loop.q.output(e_q);
    const auto [iq, id] = limit_current(iq_u, id_u, par, loop.lvrt_active);
    pi_integrate(loop.p, e_p, dt, iq != iq_u);
    if (loop.lvrt_active) {
        // Track so the reactive loop resumes from the ride-through value.
        loop.q.state = id - loop.q.kp * e_q;
    } else {
        pi_integrate(loop.q, e_q, dt, id != id_u);
    }
    return {iq, id};
}

namespace {

DqSample<double> neg_zero()
{
    return {0.0, 0.0, 0.0, Sequence::negative};
}

double droop_p(DroopState& s, const VscParams& p, const VscFeatures& f, double freq, double dt)
{
    return f.droops ? freq_droop(s, freq, p, dt) : 0.0;
}

double droop_q(DroopState& s, const VscParams& p, const VscFeatures& f, double v_q, double dt)
{
    return f.droops ? volt_droop(s, v_q, p, dt) : 0.0;
}

} // namespace

EmtVsc::EmtVsc(const VscParams& p, const VscFeatures& f)
    : par_(p), feat_(f), gains_(tune_gains(p)), dsc_v_(p.f_nom), dsc_i_(p.f_nom), inner_(make_inner_loop(gains_)),
      outer_(make_outer_loop(gains_)), droop_(make_droop(p, p.f_nom, p.v_g_pk))
{
    par_.validate();
}

cd EmtVsc::steady_emf(cd v, cd i) const
{
    return v + cd(par_.r, par_.omega_nom() * par_.l) * i;
}

void EmtVsc::initialize(cd v, cd i, double p_ref, double q_ref, double t0, double dt)
{
    const double w = par_.omega_nom();
    const double theta = std::arg(v) + w * t0;
    pll_ = {wrap_angle(theta), 0.0, w};
    const auto idq = phasor_to_dq(i, std::arg(v), Sequence::positive);
    inner_ = make_inner_loop(gains_);
    inner_.q_pos.state = par_.r * idq.q;
    inner_.d_pos.state = par_.r * idq.d;
    outer_ = make_outer_loop(gains_);
    outer_.p.state = idq.q;
    outer_.q.state = idq.d;
    droop_ = make_droop(par_, par_.f_nom, std::abs(v));
    p_ref_ = p_ref;
    q_ref_ = q_ref;

    dsc_v_.clear();
    dsc_i_.clear();
    const int n = static_cast<int>(std::ceil(dsc_v_.delay() / dt)) + 2;
    for (int k = -n; k < 0; ++k) {
        const double tk = t0 + k * dt;
        const cd rot = std::polar(1.0, w * tk);
        const cd vs = v * rot;
        const cd is = i * rot;
        dsc_v_.push(tk, {vs.real(), vs.imag()});
        dsc_i_.push(tk, {is.real(), is.imag()});
    }
    sig_ = {};
    sig_.p = 1.5 * std::abs(v) * idq.q;
    sig_.q = 1.5 * std::abs(v) * idq.d;
    sig_.v.pos = {std::abs(v), 0.0};
    sig_.i.pos = idq;
    sig_.iq_ref = idq.q;
    sig_.id_ref = idq.d;
    sig_.f = par_.f_nom;
    sig_.theta = pll_.theta;
}

SeqDq EmtVsc::split(DscBuffer& buf, double t, const ThreePhaseSample<double>& x, double theta) const
{
    const auto ab = clarke(x);
    SeqDq out;
    if (feat_.neg_seq) {
        buf.push(t, ab);
        const auto d = dsc_extract(buf, t);
        out.pos = park(d.pos, theta, Sequence::positive);
        out.neg = park(d.neg, theta, Sequence::negative);
    } else {
        out.pos = park(ab, theta, Sequence::positive);
        out.neg = neg_zero();
    }
    return out;
}

ThreePhaseSample<double> EmtVsc::step(double t, double dt, const ThreePhaseSample<double>& v_abc,
                                      const ThreePhaseSample<double>& i_abc)
{
    const double theta = pll_.theta;
    const SeqDq v = split(dsc_v_, t, v_abc, theta);
    const SeqDq i = split(dsc_i_, t, i_abc, theta);
    pll_step(pll_, gains_, v.pos.d, par_.omega_nom(), dt);
    const double omega = pll_.omega;
    const double f = omega / (2.0 * std::numbers::pi);

    const auto [p, q] = power_qd(v.pos, i.pos);
    OuterInputs in;
    in.p_ref = p_ref_ + droop_p(droop_, par_, feat_, f, dt);
    in.q_ref = q_ref_ + droop_q(droop_, par_, feat_, v.pos.q, dt);
    in.p = p;
    in.q = q;
    in.v_pu = v.pos.q / par_.v_g_pk;
    const auto [iq_ref, id_ref] = outer_pq_step(outer_, par_, feat_, in, dt);

    SeqDq ref;
    ref.pos = {iq_ref, id_ref};
    ref.neg = neg_zero();
    const SeqDq vc = inner_current_step(inner_, ref, i, v, par_.omega_nom() * par_.l, dt, feat_.neg_seq);

    const double theta_out = theta + 0.5 * dt * omega;
    auto out = inverse_park(vc.pos, theta_out, t);
    if (feat_.neg_seq) {
        const auto n = inverse_park(vc.neg, theta_out, t);
        out.a += n.a;
        out.b += n.b;
        out.c += n.c;
    }

    sig_.p = p;
    sig_.q = q;
    sig_.v = v;
    sig_.i = i;
    sig_.iq_ref = iq_ref;
    sig_.id_ref = id_ref;
    sig_.f = f;
    sig_.lvrt = outer_.lvrt_active;
    sig_.theta = theta;
    return out;
}

PmVsc::PmVsc(VscModel model, const VscParams& p, const VscFeatures& f)
    : model_(model), par_(p), feat_(f), gains_(tune_gains(p)), inner_(make_inner_loop(gains_)),
      outer_(make_outer_loop(gains_)), lag_q_pos_{gains_.tau_c, 0.0}, lag_d_pos_{gains_.tau_c, 0.0},
      droop_(make_droop(p, p.f_nom, p.v_g_pk))
{
    if (!is_phasor(model)) {
        throw ConfigError("PmVsc needs a phasor model");
    }
    par_.validate();
    if (model_ == VscModel::pm_pq1) {
        lag_q_pos_.tau = gains_.tau_pq;
        lag_d_pos_.tau = gains_.tau_pq;
    }
}

void PmVsc::initialize(cd v, cd i, double p_ref, double q_ref)
{
    theta_ = std::arg(v);
    last_theta_ = theta_;
    have_theta_ = true;
    const auto idq = phasor_to_dq(i, theta_, Sequence::positive);
    i_state_ = {};
    i_state_.pos = idq;
    inner_ = make_inner_loop(gains_);
    inner_.q_pos.state = par_.r * idq.q;
    inner_.d_pos.state = par_.r * idq.d;
    outer_ = make_outer_loop(gains_);
    outer_.p.state = idq.q;
    outer_.q.state = idq.d;
    lag_q_pos_.state = idq.q;
    lag_d_pos_.state = idq.d;
    droop_ = make_droop(par_, par_.f_nom, std::abs(v));
    p_ref_ = p_ref;
    q_ref_ = q_ref;
    sig_ = {};
    sig_.p = 1.5 * std::abs(v) * idq.q;
    sig_.q = 1.5 * std::abs(v) * idq.d;
    sig_.v.pos = {std::abs(v), 0.0};
    sig_.i.pos = idq;
    sig_.iq_ref = idq.q;
    sig_.id_ref = idq.d;
    sig_.f = par_.f_nom;
    sig_.theta = theta_;
}

ComplexPhasorSet<double> PmVsc::injection() const
{
    DqSample<double> pos = i_state_.pos;
    if (model_ == VscModel::pm_pq1) {
        const auto [q, d] = limit_current(pos.q, pos.d, par_, outer_.lvrt_active);
        pos.q = q;
        pos.d = d;
    }
    SequenceComponents<double> s;
    s.pos = dq_to_phasor(pos, theta_);
    s.neg = dq_to_phasor(i_state_.neg, theta_);
    return inverse_fortescue(s);
}

std::pair<double, double> PmVsc::lvrt_override(double iq, double id, double v_pu)
{
    outer_.lvrt_active = feat_.lvrt && v_pu < par_.v_g_min;
    if (outer_.lvrt_active) {
        id = lvrt_current_ref(v_pu, par_) * par_.i_rated();
    }
    return {iq, id};
}

void PmVsc::step(double dt, const ComplexPhasorSet<double>& v_bus)
{
    const auto vs = fortescue(v_bus);
    const auto is = fortescue(injection());
    double theta = theta_;
    if (std::abs(vs.pos) > 1e-6 * par_.v_g_pk) {
        theta = std::arg(vs.pos);
    }
    const double f = have_theta_ ? par_.f_nom + wrap_angle(theta - last_theta_) / (2.0 * std::numbers::pi * dt)
                                 : par_.f_nom;
    last_theta_ = theta;
    have_theta_ = true;

    SeqDq v, i;
    v.pos = phasor_to_dq(vs.pos, theta, Sequence::positive);
    v.neg = phasor_to_dq(vs.neg, theta, Sequence::negative);
    i.pos = phasor_to_dq(is.pos, theta, Sequence::positive);
    i.neg = phasor_to_dq(is.neg, theta, Sequence::negative);
    const auto [p, q] = power_qd(v.pos, i.pos);
    const double v_pu = v.pos.q / par_.v_g_pk;
    const double p_ref = p_ref_ + droop_p(droop_, par_, feat_, f, dt);
    const double q_ref = q_ref_ + droop_q(droop_, par_, feat_, v.pos.q, dt);
    OuterInputs in{p_ref, q_ref, p, q, v_pu};

    double iq_ref = 0.0, id_ref = 0.0;
    switch (model_) {
    case VscModel::pm_full: {
        std::tie(iq_ref, id_ref) = outer_pq_step(outer_, par_, feat_, in, dt);
        SeqDq ref;
        ref.pos = {iq_ref, id_ref};
        const double wl = par_.omega_nom() * par_.l;
        const SeqDq vc = inner_current_step(inner_, ref, i, v, wl, dt, feat_.neg_seq);
        // R-L filter seen from the converter terminal, rotating frames.
        const double k = dt / par_.l;
        SeqDq next = i;
        next.pos.q += k * (vc.pos.q - v.pos.q - par_.r * i.pos.q - wl * i.pos.d);
        next.pos.d += k * (vc.pos.d - v.pos.d - par_.r * i.pos.d + wl * i.pos.q);
        if (feat_.neg_seq) {
            next.neg.q += k * (vc.neg.q - v.neg.q - par_.r * i.neg.q + wl * i.neg.d);
            next.neg.d += k * (vc.neg.d - v.neg.d - par_.r * i.neg.d - wl * i.neg.q);
        } else {
            // No negative-sequence path without the negative-sequence controller.
            next.neg = neg_zero();
        }
        i_state_ = next;
        break;
    }
    case VscModel::pm_i1: {
        std::tie(iq_ref, id_ref) = outer_pq_step(outer_, par_, feat_, in, dt);
        lag_step(lag_q_pos_, iq_ref, dt);
        lag_step(lag_d_pos_, id_ref, dt);
        i_state_.pos = {lag_q_pos_.state, lag_d_pos_.state};
        i_state_.neg = neg_zero();
        break;
    }
    case VscModel::pm_i0: {
        const double k = dt * 2.0 / (3.0 * par_.v_g_pk * gains_.tau_pq);
        const double iq_u = i_state_.pos.q + k * (p_ref - p);
        const double id_u = i_state_.pos.d + k * (q_ref - q);
        const auto [iq_o, id_o] = lvrt_override(iq_u, id_u, v_pu);
        std::tie(iq_ref, id_ref) = limit_current(iq_o, id_o, par_, outer_.lvrt_active);
        i_state_.pos = {iq_ref, id_ref};
        i_state_.neg = neg_zero();
        break;
    }
    case VscModel::pm_pq1: {
        if (v_pu < 0.01) {
            // Degenerate voltage: hold the last reference.
            iq_ref = sig_.iq_ref;
            id_ref = sig_.id_ref;
            break;
        }
        const double iq_t = 2.0 / 3.0 * p_ref / v.pos.q;
        const double id_t = 2.0 / 3.0 * q_ref / v.pos.q;
        std::tie(iq_ref, id_ref) = lvrt_override(iq_t, id_t, v_pu);
        lag_step(lag_q_pos_, iq_ref, dt);
        lag_step(lag_d_pos_, id_ref, dt);
        i_state_.pos = {lag_q_pos_.state, lag_d_pos_.state};
        i_state_.neg = neg_zero();
        break;
    }
    case VscModel::emt_avg:
        break;
    }
    if (!std::isfinite(i_state_.pos.q) || !std::isfinite(i_state_.pos.d) ||
        std::abs(i_state_.pos.q) + std::abs(i_state_.pos.d) > kDefaultDivergenceBound * par_.i_rated()) {
        throw NumericalDivergence("converter current diverged", 0.0, dt);
    }
    theta_ = theta;

    sig_.p = p;
    sig_.q = q;
    sig_.v = v;
    sig_.i = i;
    sig_.iq_ref = iq_ref;
    sig_.id_ref = id_ref;
    sig_.f = f;
    sig_.lvrt = outer_.lvrt_active;
    sig_.theta = theta;
}

} // namespace vscsim
