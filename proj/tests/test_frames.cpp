#include <doctest.h>

#include <random>

#include "vscsim/frames.hpp"

using namespace vscsim;
using cd = std::complex<double>;

namespace {

ThreePhaseSample<double> balanced(double amp, double angle)
{
    constexpr double k = 2.0 * std::numbers::pi / 3.0;
    return {amp * std::cos(angle), amp * std::cos(angle - k), amp * std::cos(angle + k)};
}

} // namespace

TEST_CASE("park aligns a synchronized balanced set on the q axis")
{
    for (double th : {0.0, 0.3, -2.0, 3.1}) {
        const auto dq = park(balanced(1.0, th), th);
        CHECK(dq.q == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(std::abs(dq.d) < 1e-14);
        CHECK(std::abs(dq.zero) < 1e-14);
    }
    const auto zero = park(ThreePhaseSample<double>{}, 1.234);
    CHECK(zero.q == 0.0);
    CHECK(zero.d == 0.0);
}

TEST_CASE("park and inverse park round-trip random samples")
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int k = 0; k < 200; ++k) {
        const ThreePhaseSample<double> x{u(rng), u(rng), u(rng)};
        const double th = u(rng);
        for (auto seq : {Sequence::positive, Sequence::negative}) {
            const auto back = inverse_park(park(x, th, seq), th);
            const double scale = x.vec().norm();
            CHECK((back.vec() - x.vec()).norm() <= 1e-12 * scale);
        }
    }
}

TEST_CASE("amplitude is invariant under a phase offset")
{
    for (double off : {0.1, 1.0, 2.5}) {
        const auto dq = park(balanced(3.0, 0.7 + off), 0.7);
        CHECK(dq.magnitude() == doctest::Approx(3.0).epsilon(1e-13));
    }
}

TEST_CASE("negative sequence frame sees a reverse-rotating set as constant")
{
    constexpr double k = 2.0 * std::numbers::pi / 3.0;
    for (double th : {0.0, 0.9, 2.2}) {
        const ThreePhaseSample<double> x{std::cos(-th), std::cos(-th - k), std::cos(-th + k)};
        const auto dq = park(x, th, Sequence::negative);
        CHECK(dq.q == doctest::Approx(1.0).epsilon(1e-13));
        CHECK(std::abs(dq.d) < 1e-13);
    }
}

TEST_CASE("fortescue of simple sets")
{
    const auto a = phase_rotator<double>();
    const auto s = fortescue(ComplexPhasorSet<double>{1.0, a * a, a});
    CHECK(std::abs(s.pos - 1.0) < 1e-15);
    CHECK(std::abs(s.neg) < 1e-15);
    CHECK(std::abs(s.zero) < 1e-15);

    const auto single = fortescue(ComplexPhasorSet<double>{1.0, 0.0, 0.0});
    for (auto c : {single.pos, single.neg, single.zero}) {
        CHECK(std::abs(c - 1.0 / 3.0) < 1e-15);
    }
}

TEST_CASE("fortescue matches a dense matrix product and inverts exactly")
{
    // Phase voltages of a bus with a single-phase fault on phase b.
    const ComplexPhasorSet<double> v{std::polar(1.02, 0.05), std::polar(0.41, -2.30), std::polar(0.97, 2.12)};
    const cd a = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);
    Eigen::Matrix3cd m;
    m << 1.0, a, a * a, 1.0, a * a, a, 1.0, 1.0, 1.0;
    m /= 3.0;
    const Eigen::Vector3cd ref = m * Eigen::Vector3cd(v.a, v.b, v.c);
    const auto s = fortescue(v);
    CHECK(std::abs(s.pos - ref[0]) < 1e-14);
    CHECK(std::abs(s.neg - ref[1]) < 1e-14);
    CHECK(std::abs(s.zero - ref[2]) < 1e-14);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int k = 0; k < 100; ++k) {
        const ComplexPhasorSet<double> x{{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}};
        const auto back = inverse_fortescue(fortescue(x));
        for (std::size_t p = 0; p < 3; ++p) {
            CHECK(std::abs(back[p] - x[p]) <= 1e-12 * (std::abs(x[p]) + 1.0));
        }
    }
}

TEST_CASE("phasor rotation matches the instantaneous park transform")
{
    const double w = 2.0 * std::numbers::pi * 50.0;
    const ComplexPhasorSet<double> x{std::polar(1.1, 0.2), std::polar(0.6, -1.9), std::polar(0.9, 2.0)};
    const auto seq = fortescue(x);
    const double t = 0.0123;
    const double theta = w * t + 0.4;
    const auto inst = phasors_at(x, w * t);
    const auto ab = clarke(inst);
    // Remove the negative sequence before comparing the positive frame.
    const auto pos_only = phasors_at(inverse_fortescue(SequenceComponents<double>{seq.pos, 0.0, 0.0}), w * t);
    const auto dq_inst = park(pos_only, theta);
    const auto dq_ph = phasor_to_dq(seq.pos, theta - w * t, Sequence::positive);
    CHECK(dq_inst.q == doctest::Approx(dq_ph.q).epsilon(1e-12));
    CHECK(dq_inst.d == doctest::Approx(dq_ph.d).epsilon(1e-12));

    const auto neg_only = phasors_at(inverse_fortescue(SequenceComponents<double>{0.0, seq.neg, 0.0}), w * t);
    const auto dqn_inst = park(neg_only, theta, Sequence::negative);
    const auto dqn_ph = phasor_to_dq(seq.neg, theta - w * t, Sequence::negative);
    CHECK(dqn_inst.q == doctest::Approx(dqn_ph.q).epsilon(1e-12));
    CHECK(dqn_inst.d == doctest::Approx(dqn_ph.d).epsilon(1e-12));
    (void)ab;

    const auto back = dq_to_phasor(dqn_ph, theta - w * t);
    CHECK(std::abs(back - seq.neg) < 1e-12);
}

TEST_CASE("DSC separates sequences after a quarter period")
{
    const double f = 50.0, w = 2.0 * std::numbers::pi * f, dt = 1e-5;
    struct Mix {
        double pos, neg;
    };
    for (Mix mix : {Mix{1.0, 0.0}, Mix{0.0, 1.0}, Mix{0.5, 0.5}}) {
        DscBuffer buf(f);
        DscOutput out;
        double t = 0.0;
        for (int k = 0; k <= 600; ++k) {
            t = k * dt;
            // alpha-beta of pos e^{j wt} + neg e^{-j (wt - 0.3)}
            const cd z = mix.pos * std::polar(1.0, w * t) + mix.neg * std::polar(1.0, -(w * t - 0.3));
            buf.push(t, {z.real(), z.imag()});
            out = dsc_extract(buf, t);
        }
        REQUIRE(out.settled);
        const cd pos = mix.pos * std::polar(1.0, w * t);
        const cd neg = mix.neg * std::polar(1.0, -(w * t - 0.3));
        CHECK(std::abs(cd(out.pos.alpha, out.pos.beta) - pos) < 1e-6);
        CHECK(std::abs(cd(out.neg.alpha, out.neg.beta) - neg) < 1e-6);
    }
}

TEST_CASE("DSC passes the raw signal through before the buffer fills")
{
    DscBuffer buf(50.0);
    buf.push(0.0, {0.3, -0.2});
    const auto out = dsc_extract(buf, 0.0);
    CHECK_FALSE(out.settled);
    CHECK(out.pos.alpha == 0.3);
    CHECK(out.pos.beta == -0.2);
    CHECK(out.neg.alpha == 0.0);
}

TEST_CASE("power from rotating-frame values")
{
    DqSample<double> v{1.0, 0.0};
    auto [p, q] = power_qd(v, DqSample<double>{1.0, 0.0});
    CHECK(p == 1.5);
    CHECK(q == 0.0);
    std::tie(p, q) = power_qd(v, DqSample<double>{0.0, 1.0});
    CHECK(p == 0.0);
    CHECK(q == 1.5);
}

TEST_CASE("power from rotating-frame values equals cycle-averaged instantaneous power")
{
    const double w = 2.0 * std::numbers::pi * 50.0;
    const double vm = 1.7, im = 0.8, phi = 0.6;
    const int n = 4000;
    const double period = 2.0 * std::numbers::pi / w;
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
        const double t = period * k / n;
        const auto v = balanced(vm, w * t);
        const auto i = balanced(im, w * t - phi);
        acc += v.a * i.a + v.b * i.b + v.c * i.c;
    }
    const double p_avg = acc / n;
    const double t0 = 0.004;
    const auto v = park(balanced(vm, w * t0), w * t0);
    const auto i = park(balanced(im, w * t0 - phi), w * t0);
    const auto [p, q] = power_qd(v, i);
    CHECK(std::abs(p - p_avg) < 1e-9 * std::abs(p_avg));
    // Lagging current out of the source carries positive reactive power.
    CHECK(q == doctest::Approx(1.5 * vm * im * std::sin(phi)).epsilon(1e-12));
}

TEST_CASE("per-unit base quantities")
{
    PerUnitBase b;
    CHECK(b.valid());
    CHECK(b.z_base() == doctest::Approx(484.0));
    CHECK(b.v_peak() == doctest::Approx(220e3 * std::sqrt(2.0 / 3.0)));
    CHECK(1.5 * b.v_peak() * b.i_peak() == doctest::Approx(b.s_base));
    CHECK(wrap_angle(3.5 * std::numbers::pi) == doctest::Approx(-0.5 * std::numbers::pi));
}
