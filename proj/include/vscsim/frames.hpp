#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <deque>
#include <numbers>
#include <utility>

#include <Eigen/Dense>

namespace vscsim {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
using Complex = std::complex<Scalar>;

enum class Sequence { positive, negative };

/// Instantaneous phase quantities (V or A) at time t.
template <typename Scalar = double>
struct ThreePhaseSample {
    Scalar a{};
    Scalar b{};
    Scalar c{};
    double t{};

    Vec3<Scalar> vec() const { return {a, b, c}; }
};

/// Rotating-frame quantities. The q axis leads: a synchronized balanced set
/// of peak X maps to (q, d) = (X, 0). The zero-sequence component rides
/// along so the transform stays invertible on unbalanced inputs.
template <typename Scalar = double>
struct DqSample {
    Scalar q{};
    Scalar d{};
    Scalar zero{};
    Sequence sequence{Sequence::positive};
    Scalar theta_ref{};

    Scalar magnitude() const { return std::hypot(q, d); }
};

template <typename Scalar = double>
struct AlphaBeta {
    Scalar alpha{};
    Scalar beta{};
};

/// Per-phase peak phasors at nominal frequency.
template <typename Scalar = double>
struct ComplexPhasorSet {
    Complex<Scalar> a{};
    Complex<Scalar> b{};
    Complex<Scalar> c{};

    Complex<Scalar>& operator[](std::size_t k) { return k == 0 ? a : (k == 1 ? b : c); }
    const Complex<Scalar>& operator[](std::size_t k) const { return k == 0 ? a : (k == 1 ? b : c); }
};

template <typename Scalar = double>
struct SequenceComponents {
    Complex<Scalar> pos{};
    Complex<Scalar> neg{};
    Complex<Scalar> zero{};
};

/// Base quantities for one voltage level. v_base is line-to-line RMS.
struct PerUnitBase {
    double s_base{100e6};
    double v_base{220e3};
    double f_nom{50.0};

    double z_base() const { return v_base * v_base / s_base; }
    double omega_nom() const { return 2.0 * std::numbers::pi * f_nom; }
    /// Peak phase-to-ground voltage.
    double v_peak() const { return v_base * std::numbers::sqrt2 / std::numbers::sqrt3; }
    /// Peak phase current that carries s_base at v_peak (amplitude-invariant).
    double i_peak() const { return 2.0 * s_base / (3.0 * v_peak()); }
    bool valid() const { return s_base > 0.0 && v_base > 0.0 && f_nom > 0.0; }
};

template <typename Scalar>
inline Complex<Scalar> phase_rotator()
{
    // a = e^{j 2pi/3}
    return std::polar(Scalar(1), Scalar(2) * std::numbers::pi_v<Scalar> / Scalar(3));
}

template <typename Scalar>
AlphaBeta<Scalar> clarke(const ThreePhaseSample<Scalar>& x)
{
    const Scalar two_thirds = Scalar(2) / Scalar(3);
    return {two_thirds * (x.a - Scalar(0.5) * (x.b + x.c)),
            (x.b - x.c) / std::numbers::sqrt3_v<Scalar>};
}

template <typename Scalar>
ThreePhaseSample<Scalar> inverse_clarke(const AlphaBeta<Scalar>& ab, Scalar zero = Scalar(0), double t = 0.0)
{
    const Scalar h = std::numbers::sqrt3_v<Scalar> / Scalar(2);
    return {ab.alpha + zero, -Scalar(0.5) * ab.alpha + h * ab.beta + zero,
            -Scalar(0.5) * ab.alpha - h * ab.beta + zero, t};
}

/// Rotate an alpha-beta vector into the (q, d) frame at theta. Negative
/// sequence frames rotate the opposite way.
template <typename Scalar>
DqSample<Scalar> park(const AlphaBeta<Scalar>& ab, Scalar theta, Sequence seq = Sequence::positive)
{
    const Scalar c = std::cos(theta);
    const Scalar s = std::sin(theta);
    DqSample<Scalar> out;
    out.sequence = seq;
    out.theta_ref = theta;
    if (seq == Sequence::positive) {
        out.q = ab.alpha * c + ab.beta * s;
        out.d = ab.alpha * s - ab.beta * c;
    } else {
        out.q = ab.alpha * c - ab.beta * s;
        out.d = -(ab.alpha * s + ab.beta * c);
    }
    return out;
}

template <typename Scalar>
DqSample<Scalar> park(const ThreePhaseSample<Scalar>& abc, Scalar theta, Sequence seq = Sequence::positive)
{
    auto out = park(clarke(abc), theta, seq);
    out.zero = (abc.a + abc.b + abc.c) / Scalar(3);
    return out;
}

template <typename Scalar>
AlphaBeta<Scalar> inverse_park_ab(const DqSample<Scalar>& dq, Scalar theta)
{
    const Scalar c = std::cos(theta);
    const Scalar s = std::sin(theta);
    if (dq.sequence == Sequence::positive) {
        return {dq.q * c + dq.d * s, dq.q * s - dq.d * c};
    }
    return {dq.q * c - dq.d * s, -dq.q * s - dq.d * c};
}

template <typename Scalar>
ThreePhaseSample<Scalar> inverse_park(const DqSample<Scalar>& dq, Scalar theta, double t = 0.0)
{
    return inverse_clarke(inverse_park_ab(dq, theta), dq.zero, t);
}

/// The rotating-frame complex value q - j d.
template <typename Scalar>
Complex<Scalar> to_complex(const DqSample<Scalar>& dq)
{
    return {dq.q, -dq.d};
}

template <typename Scalar>
DqSample<Scalar> from_complex(const Complex<Scalar>& z, Sequence seq, Scalar theta = Scalar(0))
{
    DqSample<Scalar> out;
    out.q = z.real();
    out.d = -z.imag();
    out.sequence = seq;
    out.theta_ref = theta;
    return out;
}

template <typename Scalar>
SequenceComponents<Scalar> fortescue(const ComplexPhasorSet<Scalar>& x)
{
    const auto a = phase_rotator<Scalar>();
    const auto a2 = a * a;
    const Scalar third = Scalar(1) / Scalar(3);
    return {third * (x.a + a * x.b + a2 * x.c), third * (x.a + a2 * x.b + a * x.c),
            third * (x.a + x.b + x.c)};
}

template <typename Scalar>
ComplexPhasorSet<Scalar> inverse_fortescue(const SequenceComponents<Scalar>& s)
{
    const auto a = phase_rotator<Scalar>();
    const auto a2 = a * a;
    return {s.zero + s.pos + s.neg, s.zero + a2 * s.pos + a * s.neg, s.zero + a * s.pos + a2 * s.neg};
}

/// Phasor-domain rotation into the control frame aligned with angle theta.
/// Positive sequence: X e^{-j theta}. Negative sequence is conjugated so that
/// it matches the opposite-rotating frame used with instantaneous waveforms.
template <typename Scalar>
DqSample<Scalar> phasor_to_dq(const Complex<Scalar>& x, Scalar theta, Sequence seq)
{
    const auto r = x * std::polar(Scalar(1), -theta);
    return from_complex(seq == Sequence::positive ? r : std::conj(r), seq, theta);
}

template <typename Scalar>
Complex<Scalar> dq_to_phasor(const DqSample<Scalar>& dq, Scalar theta)
{
    const auto r = to_complex(dq);
    const auto rot = std::polar(Scalar(1), theta);
    return dq.sequence == Sequence::positive ? r * rot : std::conj(r) * rot;
}

/// Instantaneous value of a peak phasor at angle omega*t.
template <typename Scalar>
ThreePhaseSample<Scalar> phasors_at(const ComplexPhasorSet<Scalar>& x, Scalar wt, double t = 0.0)
{
    const auto e = std::polar(Scalar(1), wt);
    return {(x.a * e).real(), (x.b * e).real(), (x.c * e).real(), t};
}

/// Three-phase active and reactive power from rotating-frame peak values.
template <typename Scalar>
std::pair<Scalar, Scalar> power_qd(const DqSample<Scalar>& v, const DqSample<Scalar>& i)
{
    const Scalar k = Scalar(1.5);
    return {k * (v.q * i.q + v.d * i.d), k * (v.q * i.d - v.d * i.q)};
}

inline double wrap_angle(double theta)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    theta = std::fmod(theta + std::numbers::pi, two_pi);
    if (theta < 0.0) {
        theta += two_pi;
    }
    return theta - std::numbers::pi;
}

/// History of alpha-beta samples for delayed signal cancellation. The delay
/// is a quarter of the nominal period; delayed values are linearly
/// interpolated between stored samples.
class DscBuffer {
public:
    explicit DscBuffer(double f_nom = 50.0) : delay_(0.25 / f_nom) {}

    void push(double t, const AlphaBeta<double>& ab);
    double delay() const { return delay_; }
    bool ready(double t) const;
    /// Linearly interpolated sample at time t. Requires ready(t + delay()).
    AlphaBeta<double> at(double t) const;
    void clear() { samples_.clear(); }

private:
    struct Entry {
        double t;
        AlphaBeta<double> ab;
    };
    double delay_;
    std::deque<Entry> samples_;
};

struct DscOutput {
    AlphaBeta<double> pos;
    AlphaBeta<double> neg;
    bool settled{false};
};

/// Split the latest buffered sample into positive and negative sequence.
/// Until a quarter period of history exists, the raw signal is returned as
/// positive sequence.
DscOutput dsc_extract(const DscBuffer& history, double t);

} // namespace vscsim
