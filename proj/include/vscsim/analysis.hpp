#pragma once

#include <complex>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vscsim/results.hpp"
#include "vscsim/scenarios.hpp"

namespace vscsim {

/// Normalized RMSE reported for runs that diverged.
inline constexpr double kRmseCap = 10.0;
/// Time step of the reference model.
inline constexpr double kReferenceDt = 5e-6;

/// Comparison window; unset ends mean the whole overlap.
struct Window {
    std::optional<double> t_start;
    std::optional<double> t_end;
};

/// RMSE of two series on the same samples, divided by base.
double rmse(const std::vector<double>& ref, const std::vector<double>& cand, double base);

/// RMSE with the candidate resampled onto the reference time base by
/// zero-order hold, over the overlap of both series and the window.
/// Throws EmptyWindow when no reference sample falls in the overlap.
double rmse(const std::vector<double>& t_ref, const std::vector<double>& ref, const std::vector<double>& t_cand,
            const std::vector<double>& cand, double base, const Window& w = {});

struct ComparisonSpec {
    std::string signal;
    std::optional<double> base;  ///< default: the reference run's base for the signal
    Window window;
};

double compare_runs(const RunResult& reference, const RunResult& candidate, const ComparisonSpec& spec);

/// Signals compared by default for a test (full names).
std::vector<std::string> default_signals(const SystemModel& sys, const std::string& test);

/// Log grid with 20 points per decade over [5 us, 12 ms], plus the steps
/// shown in the study figures, sorted and de-duplicated.
std::vector<double> default_dt_grid();
std::vector<double> log_grid(double lo, double hi, int per_decade);

struct SweepPoint {
    VscModel model{VscModel::emt_avg};
    double dt{0.0};
    double bandwidth{0.0};  ///< rad/s of the swept loop, 0 for plain dt sweeps
    std::vector<double> rmse;  ///< one per signal, capped when diverged
    double wall_clock_s{0.0};
    bool diverged{false};
    std::string error;
};

struct SweepResult {
    std::vector<std::string> signals;
    std::vector<SweepPoint> points;  ///< ordered by (bandwidth, model, dt)
    std::string swept_loop;          ///< "omega_c" / "omega_pq" or empty

    std::vector<const SweepPoint*> series(VscModel m, double bandwidth = 0.0) const;
};

struct SweepSpec {
    std::string system{"small"};
    std::string test{"setpoint"};
    std::vector<VscModel> models{VscModel::emt_avg, VscModel::pm_full, VscModel::pm_i1, VscModel::pm_i0,
                                 VscModel::pm_pq1};
    std::vector<double> dt_grid;
    std::vector<std::string> signals;  ///< empty: default_signals
    Window window;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::optional<double> duration;
    int jobs{1};
    double divergence_bound{kDefaultDivergenceBound};
    double rmse_cap{kRmseCap};  ///< reported for diverged runs, and the ceiling of every RMSE
};

/// Runs `fn(i)` for i in [0, n) on `jobs` threads. Exceptions are rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

/// Reference run (EMT average model at 5 us) for a sweep spec.
RunResult reference_run(const SweepSpec& spec);

/// Model x dt grid against the reference. Diverged runs keep their dt and
/// report spec.rmse_cap.
SweepResult timestep_sweep(const SweepSpec& spec, const RunResult& reference);
SweepResult timestep_sweep(const SweepSpec& spec);

/// Same grid for each value of the named converter bandwidth ("omega_c"
/// or "omega_pq"), with a fresh reference per value.
SweepResult bandwidth_sweep(const SweepSpec& spec, const std::string& loop, const std::vector<double>& values);

/// Largest dt whose RMSE, and that of every smaller dt, stays within
/// `factor` times the error floor of the series. The floor is the smallest
/// RMSE of the series, but at least `abs_floor`.
std::optional<double> knee_dt(const std::vector<const SweepPoint*>& series, std::size_t signal, double factor = 2.0,
                              double abs_floor = 1e-3);

/// Smallest modeled time constant of a converter model.
double model_tau_min(VscModel m, const VscParams& p);

struct GuidelineRow {
    VscModel model{VscModel::emt_avg};
    double tau_min{0.0};
    double dt_low{0.0};   ///< tau_min / 10
    double dt_high{0.0};  ///< tau_min / 5
    std::optional<double> knee;
    bool flagged{false};  ///< knee off tau_min/5 by more than 2x
};

std::vector<GuidelineRow> guideline_report(const SweepResult& sweep, const VscParams& params, std::size_t signal = 0);

struct BenchmarkRow {
    VscModel model{VscModel::emt_avg};
    double dt{0.0};
    double wall_clock_s{0.0};
    double speedup{1.0};  ///< relative to the smallest dt of the same model
    bool diverged{false};
};

std::vector<BenchmarkRow> execution_benchmark(const SweepResult& sweep);

/// Single-cycle Fourier phasor (peak, relative to e^{j omega t}) of a
/// uniformly sampled signal over the cycle ending at t_end.
std::complex<double> fundamental_phasor(const std::vector<double>& t, const std::vector<double>& x, double t_end,
                                        double f);

/// Time constant of the first-order lag that best maps `u` onto `y` over
/// [t0, t1] (least squares, golden-section search in [lo, hi]).
double fit_lag_time_constant(const std::vector<double>& t, const std::vector<double>& u, const std::vector<double>& y,
                             double t0, double t1, double lo = 1e-5, double hi = 1.0);

void write_sweep_csv(const SweepResult& s, const std::filesystem::path& path);

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x{false};
    bool log_y{false};
    std::vector<PlotSeries> series;
    std::string note;
};

/// Standalone SVG line chart. Throws IoError.
void write_svg_plot(const PlotSpec& spec, const std::filesystem::path& path);

} // namespace vscsim
