#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vscsim {

/// Default bound on per-unit signal magnitude before a run is declared
/// numerically divergent.
inline constexpr double kDefaultDivergenceBound = 1e9;

struct StateVector {
    Eigen::VectorXd values;
    std::vector<std::string> labels;
    double t{0.0};
};

using Derivative = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;

/// x' = x + dt f(x, t). Throws NumericalDivergence when a state leaves the
/// finite range or exceeds `bound` in magnitude.
StateVector euler_step(const Derivative& f, const StateVector& x, double dt,
                       double bound = kDefaultDivergenceBound);

/// Throws NumericalDivergence if any entry is non-finite or above bound.
void check_finite(const Eigen::Ref<const Eigen::VectorXd>& x, double bound, double t, double dt,
                  const char* what);

/// G(s) = kp (1 + 1/(tau_i s)) with optional output clamp. The integrator
/// is frozen while the output sits on a limit.
struct PiBlock {
    double kp{1.0};
    double tau_i{1.0};
    double state{0.0};
    std::optional<double> out_min;
    std::optional<double> out_max;
    bool anti_windup{true};

    double output(double error) const;
    bool saturated(double error) const;
};

/// Output for this step, then advance the integrator by forward Euler.
double pi_step(PiBlock& block, double error, double dt);

/// Advance the integrator only, with the freeze decision taken by the caller.
void pi_integrate(PiBlock& block, double error, double dt, bool frozen = false);

/// 1/(1 + tau s), forward Euler.
struct FirstOrderLag {
    double tau{1.0};
    double state{0.0};
};

/// Returns the output at the start of the step and advances the state.
/// Throws NumericalDivergence when dt >= 2 tau.
double lag_step(FirstOrderLag& block, double u, double dt);

enum class EventAction {
    apply_fault,
    clear_fault,
    open_breaker_phase,
    connect_load,
    disconnect_source,
    set_setpoint,
    enable_harmonics,
};

const char* action_name(EventAction a);
std::optional<EventAction> parse_action(const std::string& name);

struct Event {
    double t{0.0};
    EventAction action{EventAction::set_setpoint};
    std::string target;
    std::string key;  ///< setpoint name or phase letter, when relevant
    double value{0.0};
};

/// Events in firing order. Each fires exactly once, on the first step whose
/// time reaches t (ties keep insertion order).
class EventSchedule {
public:
    EventSchedule() = default;
    explicit EventSchedule(std::vector<Event> events);

    void add(Event e);
    const std::vector<Event>& events() const { return events_; }
    bool empty() const { return events_.empty(); }
    void reset() { next_ = 0; }

    /// Pops every event due at time t, in order.
    std::vector<Event> due(double t);

private:
    std::vector<Event> events_;
    std::size_t next_{0};
};

/// Anything events can act on. Unknown targets must throw UnknownTarget.
class EventSink {
public:
    virtual ~EventSink() = default;
    virtual void apply(const Event& e) = 0;
};

/// Applies every event due at t to `system` and returns them.
std::vector<Event> run_events(EventSchedule& schedule, double t, EventSink& system);

/// Tolerance used when comparing step times against event times.
inline constexpr double kTimeEpsilon = 1e-9;

} // namespace vscsim
