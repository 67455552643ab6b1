#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vscsim {

/// Recorded time series of one run. All signals share `time`.
struct RunResult {
    std::vector<double> time;
    std::vector<std::string> names;
    std::vector<double> bases;  ///< normalization base per signal
    std::vector<std::vector<double>> data;
    double wall_clock_s{0.0};
    std::map<std::string, std::string> metadata;

    std::size_t add_signal(const std::string& name, double base);
    /// Exact name, or the unique signal whose name ends in "." + name.
    std::optional<std::size_t> find(const std::string& name) const;
    /// Like find, but throws ConfigError when missing or ambiguous.
    std::size_t index(const std::string& name) const;
    const std::vector<double>& signal(const std::string& name) const { return data[index(name)]; }
    std::size_t size() const { return time.size(); }
};

/// CSV with a header row and full round-trip precision, plus a JSON
/// sidecar (<stem>.meta) with metadata and signal bases. Throws IoError.
void write_run(const RunResult& r, const std::filesystem::path& csv);
RunResult read_run(const std::filesystem::path& csv);

std::filesystem::path meta_path(const std::filesystem::path& csv);

} // namespace vscsim
