#include "vscsim/solver.hpp"

#include <algorithm>
#include <cmath>

#include "vscsim/errors.hpp"

namespace vscsim {

void check_finite(const Eigen::Ref<const Eigen::VectorXd>& x, double bound, double t, double dt, const char* what)
{
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double v = x[k];
        if (!std::isfinite(v) || std::abs(v) > bound) {
            throw NumericalDivergence(std::string(what) + " diverged at state " + std::to_string(k), t, dt);
        }
    }
}

StateVector euler_step(const Derivative& f, const StateVector& x, double dt, double bound)
{
    if (!(dt > 0.0)) {
        throw ConfigError("euler_step: dt must be positive");
    }
    StateVector next;
    next.values = x.values + dt * f(x.values, x.t);
    next.labels = x.labels;
    next.t = x.t + dt;
    check_finite(next.values, bound, next.t, dt, "euler_step");
    return next;
}

double PiBlock::output(double error) const
{
    double u = kp * error + state;
    if (out_max && u > *out_max) {
        u = *out_max;
    }
    if (out_min && u < *out_min) {
        u = *out_min;
    }
    return u;
}

bool PiBlock::saturated(double error) const
{
    const double u = kp * error + state;
    return (out_max && u > *out_max) || (out_min && u < *out_min);
}

void pi_integrate(PiBlock& block, double error, double dt, bool frozen)
{
    if (!frozen) {
        block.state += dt * block.kp / block.tau_i * error;
    }
}

double pi_step(PiBlock& block, double error, double dt)
{
    const double u = block.output(error);
    pi_integrate(block, error, dt, block.anti_windup && block.saturated(error));
    return u;
}

double lag_step(FirstOrderLag& block, double u, double dt)
{
    if (dt >= 2.0 * block.tau) {
        throw NumericalDivergence("first-order lag unstable: dt >= 2 tau", 0.0, dt);
    }
    const double y = block.state;
    block.state += dt / block.tau * (u - block.state);
    return y;
}

const char* action_name(EventAction a)
{
    switch (a) {
    case EventAction::apply_fault: return "apply_fault";
    case EventAction::clear_fault: return "clear_fault";
    case EventAction::open_breaker_phase: return "open_breaker_phase";
    case EventAction::connect_load: return "connect_load";
    case EventAction::disconnect_source: return "disconnect_source";
    case EventAction::set_setpoint: return "set_setpoint";
    case EventAction::enable_harmonics: return "enable_harmonics";
    }
    return "?";
}

std::optional<EventAction> parse_action(const std::string& name)
{
    for (auto a : {EventAction::apply_fault, EventAction::clear_fault, EventAction::open_breaker_phase,
                   EventAction::connect_load, EventAction::disconnect_source, EventAction::set_setpoint,
                   EventAction::enable_harmonics}) {
        if (name == action_name(a)) {
            return a;
        }
    }
    return std::nullopt;
}

EventSchedule::EventSchedule(std::vector<Event> events) : events_(std::move(events))
{
    std::stable_sort(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
}

void EventSchedule::add(Event e)
{
    const auto pos = std::upper_bound(events_.begin(), events_.end(), e.t,
                                      [](double t, const Event& x) { return t < x.t; });
    events_.insert(pos, std::move(e));
}

std::vector<Event> EventSchedule::due(double t)
{
    std::vector<Event> out;
    while (next_ < events_.size() && t + kTimeEpsilon >= events_[next_].t) {
        out.push_back(events_[next_++]);
    }
    return out;
}

std::vector<Event> run_events(EventSchedule& schedule, double t, EventSink& system)
{
    auto fired = schedule.due(t);
    for (const auto& e : fired) {
        system.apply(e);
    }
    return fired;
}

const char* category_name(ErrorCategory c)
{
    switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::numerical_divergence: return "numerical_divergence";
    case ErrorCategory::io: return "io";
    case ErrorCategory::singular_network: return "singular_network";
    case ErrorCategory::unknown_target: return "unknown_target";
    case ErrorCategory::power_flow_diverged: return "power_flow_diverged";
    case ErrorCategory::init_failure: return "init_failure";
    case ErrorCategory::empty_window: return "empty_window";
    }
    return "unknown";
}

} // namespace vscsim
