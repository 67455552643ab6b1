#include "vscsim/frames.hpp"

#include <algorithm>
#include <iterator>

namespace vscsim {

void DscBuffer::push(double t, const AlphaBeta<double>& ab)
{
    samples_.push_back({t, ab});
    // Keep one sample at or before t - delay for interpolation.
    const double horizon = t - delay_;
    while (samples_.size() > 2 && samples_[1].t <= horizon) {
        samples_.pop_front();
    }
}

bool DscBuffer::ready(double t) const
{
    return !samples_.empty() && samples_.front().t <= t - delay_ + 1e-12;
}

AlphaBeta<double> DscBuffer::at(double t) const
{
    if (samples_.empty()) {
        return {};
    }
    if (t <= samples_.front().t) {
        return samples_.front().ab;
    }
    const auto hi = std::lower_bound(samples_.begin(), samples_.end(), t,
                                     [](const Entry& e, double value) { return e.t < value; });
    if (hi == samples_.end()) {
        return samples_.back().ab;
    }
    const auto lo = std::prev(hi);
    const double span = hi->t - lo->t;
    const double w = span > 0.0 ? (t - lo->t) / span : 1.0;
    return {lo->ab.alpha + w * (hi->ab.alpha - lo->ab.alpha), lo->ab.beta + w * (hi->ab.beta - lo->ab.beta)};
}

DscOutput dsc_extract(const DscBuffer& history, double t)
{
    const AlphaBeta<double> now = history.at(t);
    if (!history.ready(t)) {
        return {now, {}, false};
    }
    const AlphaBeta<double> old = history.at(t - history.delay());
    DscOutput out;
    // x+ = (x(t) + j x(t - T/4)) / 2, x- = (x(t) - j x(t - T/4)) / 2
    out.pos = {0.5 * (now.alpha - old.beta), 0.5 * (now.beta + old.alpha)};
    out.neg = {0.5 * (now.alpha + old.beta), 0.5 * (now.beta - old.alpha)};
    out.settled = true;
    return out;
}

} // namespace vscsim
