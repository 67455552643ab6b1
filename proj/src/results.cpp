#include "vscsim/results.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vscsim/errors.hpp"

namespace vscsim {

std::size_t RunResult::add_signal(const std::string& name, double base)
{
    names.push_back(name);
    bases.push_back(base);
    data.emplace_back();
    return names.size() - 1;
}

std::optional<std::size_t> RunResult::find(const std::string& name) const
{
    std::optional<std::size_t> hit;
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (names[k] == name) {
            return k;
        }
    }
    const std::string suffix = "." + name;
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto& n = names[k];
        if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0) {
            if (hit) {
                return std::nullopt;
            }
            hit = k;
        }
    }
    return hit;
}

std::size_t RunResult::index(const std::string& name) const
{
    const auto k = find(name);
    if (!k) {
        throw ConfigError("signal '" + name + "' is missing or ambiguous");
    }
    return *k;
}

std::filesystem::path meta_path(const std::filesystem::path& csv)
{
    auto p = csv;
    p.replace_extension(".meta");
    return p;
}

void write_run(const RunResult& r, const std::filesystem::path& csv)
{
    if (csv.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(csv.parent_path(), ec);
    }
    std::FILE* f = std::fopen(csv.c_str(), "w");
    if (!f) {
        throw IoError("cannot write " + csv.string());
    }
    std::fputs("t", f);
    for (const auto& n : r.names) {
        std::fputc(',', f);
        std::fputs(n.c_str(), f);
    }
    std::fputc('\n', f);
    char buf[32];
    for (std::size_t k = 0; k < r.time.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", r.time[k]);
        std::fputs(buf, f);
        for (const auto& col : r.data) {
            std::snprintf(buf, sizeof buf, ",%.17g", col[k]);
            std::fputs(buf, f);
        }
        std::fputc('\n', f);
    }
    const bool bad = std::ferror(f) != 0;
    std::fclose(f);
    if (bad) {
        throw IoError("error while writing " + csv.string());
    }

    nlohmann::ordered_json meta;
    meta["wall_clock_s"] = r.wall_clock_s;
    meta["metadata"] = r.metadata;
    nlohmann::ordered_json bases = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < r.names.size(); ++k) {
        bases[r.names[k]] = r.bases[k];
    }
    meta["bases"] = bases;
    std::ofstream m(meta_path(csv));
    if (!m) {
        throw IoError("cannot write " + meta_path(csv).string());
    }
    m << meta.dump(2) << '\n';
}

RunResult read_run(const std::filesystem::path& csv)
{
    std::ifstream in(csv);
    if (!in) {
        throw IoError("cannot read " + csv.string());
    }
    RunResult r;
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError(csv.string() + " is empty");
    }
    {
        std::stringstream hs(line);
        std::string cell;
        std::getline(hs, cell, ',');
        while (std::getline(hs, cell, ',')) {
            r.names.push_back(cell);
        }
    }
    r.data.resize(r.names.size());
    r.bases.assign(r.names.size(), 1.0);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const char* p = line.c_str();
        char* end = nullptr;
        r.time.push_back(std::strtod(p, &end));
        for (auto& col : r.data) {
            if (*end != ',') {
                throw IoError("short row in " + csv.string());
            }
            p = end + 1;
            col.push_back(std::strtod(p, &end));
        }
    }

    std::ifstream m(meta_path(csv));
    if (m) {
        try {
            const auto meta = nlohmann::json::parse(m);
            r.wall_clock_s = meta.value("wall_clock_s", 0.0);
            if (meta.contains("metadata")) {
                r.metadata = meta["metadata"].get<std::map<std::string, std::string>>();
            }
            if (meta.contains("bases")) {
                for (std::size_t k = 0; k < r.names.size(); ++k) {
                    r.bases[k] = meta["bases"].value(r.names[k], 1.0);
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw IoError("bad metadata in " + meta_path(csv).string() + ": " + e.what());
        }
    }
    return r;
}

} // namespace vscsim
