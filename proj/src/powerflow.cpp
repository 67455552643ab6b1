#include "vscsim/powerflow.hpp"

#include <cmath>
#include <string>

#include "vscsim/errors.hpp"

namespace vscsim {

using cd = std::complex<double>;

Eigen::MatrixXcd positive_sequence_ybus(const Topology& topo)
{
    const auto nb = static_cast<Eigen::Index>(topo.buses.size());
    const double w = topo.base.omega_nom();
    const double zb = topo.base.z_base();
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(nb, nb);
    auto series = [&](Eigen::Index a, Eigen::Index b, cd ys) {
        y(a, a) += ys;
        if (b >= 0) {
            y(b, b) += ys;
            y(a, b) -= ys;
            y(b, a) -= ys;
        }
    };
    for (const auto& ln : topo.lines) {
        const auto a = static_cast<Eigen::Index>(*topo.bus_index(ln.from));
        const auto b = static_cast<Eigen::Index>(*topo.bus_index(ln.to));
        const cd z(ln.r1 * ln.length_km, w * ln.l1 * ln.length_km);
        series(a, b, zb / z);
        const cd half(0.0, 0.5 * w * ln.c1 * ln.length_km * zb);
        y(a, a) += half;
        y(b, b) += half;
    }
    for (const auto& br : topo.branches) {
        const auto a = static_cast<Eigen::Index>(*topo.bus_index(br.from));
        const Eigen::Index b = br.to == "gnd" ? -1 : static_cast<Eigen::Index>(*topo.bus_index(br.to));
        series(a, b, zb / cd(br.r, w * br.l));
    }
    for (const auto& ld : topo.loads) {
        if (!ld.connected) {
            continue;
        }
        const auto a = static_cast<Eigen::Index>(*topo.bus_index(ld.bus));
        y(a, a) += cd(ld.p, -ld.q) / topo.base.s_base;
    }
    for (std::size_t b = 0; b < topo.buses.size(); ++b) {
        const auto a = static_cast<Eigen::Index>(b);
        y(a, a) += cd(0.0, w * topo.buses[b].stray_capacitance * zb);
    }
    return y;
}

PowerFlowResult solve_power_flow(const Eigen::MatrixXcd& ybus, const std::vector<PfBus>& buses, double tol,
                                 int max_iter)
{
    const auto n = static_cast<Eigen::Index>(buses.size());
    if (ybus.rows() != n || ybus.cols() != n) {
        throw ConfigError("power flow: bus data and admittance size differ");
    }
    // Unknowns: angles of non-slack buses, magnitudes of PQ buses.
    std::vector<Eigen::Index> ang_idx, mag_idx;
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto t = buses[static_cast<std::size_t>(k)].type;
        if (t != BusType::slack) {
            ang_idx.push_back(k);
        }
        if (t == BusType::pq) {
            mag_idx.push_back(k);
        }
    }
    if (ang_idx.size() == static_cast<std::size_t>(n)) {
        throw ConfigError("power flow needs a slack bus");
    }

    Eigen::VectorXd vm(n), va(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& b = buses[static_cast<std::size_t>(k)];
        vm[k] = b.type == BusType::pq ? 1.0 : b.v_set;
        va[k] = b.type == BusType::slack ? b.angle : 0.0;
    }
    const Eigen::MatrixXd g = ybus.real();
    const Eigen::MatrixXd bm = ybus.imag();
    const auto na = static_cast<Eigen::Index>(ang_idx.size());
    const auto nm = static_cast<Eigen::Index>(mag_idx.size());

    PowerFlowResult res;
    for (int it = 0; it <= max_iter; ++it) {
        Eigen::VectorXd p(n), q(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double pi = 0.0, qi = 0.0;
            for (Eigen::Index k = 0; k < n; ++k) {
                const double th = va[i] - va[k];
                pi += vm[k] * (g(i, k) * std::cos(th) + bm(i, k) * std::sin(th));
                qi += vm[k] * (g(i, k) * std::sin(th) - bm(i, k) * std::cos(th));
            }
            p[i] = vm[i] * pi;
            q[i] = vm[i] * qi;
        }
        Eigen::VectorXd f(na + nm);
        for (Eigen::Index r = 0; r < na; ++r) {
            f[r] = buses[static_cast<std::size_t>(ang_idx[static_cast<std::size_t>(r)])].p -
                   p[ang_idx[static_cast<std::size_t>(r)]];
        }
        for (Eigen::Index r = 0; r < nm; ++r) {
            f[na + r] = buses[static_cast<std::size_t>(mag_idx[static_cast<std::size_t>(r)])].q -
                        q[mag_idx[static_cast<std::size_t>(r)]];
        }
        res.mismatch = f.size() > 0 ? f.cwiseAbs().maxCoeff() : 0.0;
        res.iterations = it;
        if (!std::isfinite(res.mismatch)) {
            break;
        }
        if (res.mismatch < tol) {
            res.v.resize(static_cast<std::size_t>(n));
            res.s.resize(static_cast<std::size_t>(n));
            for (Eigen::Index k = 0; k < n; ++k) {
                res.v[static_cast<std::size_t>(k)] = std::polar(vm[k], va[k]);
                res.s[static_cast<std::size_t>(k)] = cd(p[k], q[k]);
            }
            return res;
        }

        // Jacobian of (P, Q) with respect to (angle, magnitude).
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(na + nm, na + nm);
        auto dp_da = [&](Eigen::Index i, Eigen::Index k) {
            if (i == k) {
                return -q[i] - bm(i, i) * vm[i] * vm[i];
            }
            const double th = va[i] - va[k];
            return vm[i] * vm[k] * (g(i, k) * std::sin(th) - bm(i, k) * std::cos(th));
        };
        auto dp_dv = [&](Eigen::Index i, Eigen::Index k) {
            if (i == k) {
                return p[i] / vm[i] + g(i, i) * vm[i];
            }
            const double th = va[i] - va[k];
            return vm[i] * (g(i, k) * std::cos(th) + bm(i, k) * std::sin(th));
        };
        auto dq_da = [&](Eigen::Index i, Eigen::Index k) {
            if (i == k) {
                return p[i] - g(i, i) * vm[i] * vm[i];
            }
            const double th = va[i] - va[k];
            return -vm[i] * vm[k] * (g(i, k) * std::cos(th) + bm(i, k) * std::sin(th));
        };
        auto dq_dv = [&](Eigen::Index i, Eigen::Index k) {
            if (i == k) {
                return q[i] / vm[i] - bm(i, i) * vm[i];
            }
            const double th = va[i] - va[k];
            return vm[i] * (g(i, k) * std::sin(th) - bm(i, k) * std::cos(th));
        };
        for (Eigen::Index r = 0; r < na; ++r) {
            const auto i = ang_idx[static_cast<std::size_t>(r)];
            for (Eigen::Index c = 0; c < na; ++c) {
                jac(r, c) = dp_da(i, ang_idx[static_cast<std::size_t>(c)]);
            }
            for (Eigen::Index c = 0; c < nm; ++c) {
                jac(r, na + c) = dp_dv(i, mag_idx[static_cast<std::size_t>(c)]);
            }
        }
        for (Eigen::Index r = 0; r < nm; ++r) {
            const auto i = mag_idx[static_cast<std::size_t>(r)];
            for (Eigen::Index c = 0; c < na; ++c) {
                jac(na + r, c) = dq_da(i, ang_idx[static_cast<std::size_t>(c)]);
            }
            for (Eigen::Index c = 0; c < nm; ++c) {
                jac(na + r, na + c) = dq_dv(i, mag_idx[static_cast<std::size_t>(c)]);
            }
        }
        const Eigen::VectorXd dx = jac.fullPivLu().solve(f);
        if (!dx.allFinite()) {
            break;
        }
        for (Eigen::Index r = 0; r < na; ++r) {
            va[ang_idx[static_cast<std::size_t>(r)]] += dx[r];
        }
        for (Eigen::Index r = 0; r < nm; ++r) {
            vm[mag_idx[static_cast<std::size_t>(r)]] += dx[na + r];
        }
    }
    throw PowerFlowDiverged("power flow did not converge, mismatch " + std::to_string(res.mismatch) + " pu after " +
                            std::to_string(res.iterations) + " iterations");
}

} // namespace vscsim
