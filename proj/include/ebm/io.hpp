#pragma once

// CSV emission and JSON checkpoints. CSV rows print floats with %.17g so
// outputs round-trip exactly; identical seed + config must give identical
// bytes regardless of --threads, which is why the config hash is computed
// over the effective config with threads and output paths excluded.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "ebm/core.hpp"
#include "json.hpp"

#ifndef EBM_GIT_DESCRIBE
#define EBM_GIT_DESCRIBE "unknown"
#endif

namespace ebm {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex_u64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string format_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(std::vector<std::string> columns, std::uint64_t seed,
              std::uint64_t config_hash)
        : n_cols_(columns.size()) {
        buf_ += "# seed=" + std::to_string(seed) + " git=" EBM_GIT_DESCRIBE
                " config_hash=" + hex_u64(config_hash) + "\n";
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += columns[i];
        }
        buf_ += '\n';
    }

    void row(std::span<const double> values) {
        if (values.size() != n_cols_) fail_config("CsvWriter: wrong column count");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += format_g17(values[i]);
        }
        buf_ += '\n';
    }

    void row(std::span<const std::string> cells) {
        if (cells.size() != n_cols_) fail_config("CsvWriter: wrong column count");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += cells[i];
        }
        buf_ += '\n';
    }

    const std::string& str() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) fail_config("cannot open output file: " + path);
        f.write(buf_.data(), std::streamsize(buf_.size()));
        if (!f) fail_config("write failed: " + path);
    }

private:
    std::size_t n_cols_;
    std::string buf_;
};

struct Checkpoint {
    std::string family;
    int dim = 0;
    Vec theta;
    std::map<std::string, double> metadata;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    nlohmann::json j;
    j["family"] = c.family;
    j["dim"] = c.dim;
    j["theta"] = c.theta;
    // non-finite entries (not-applicable diagnostics) would serialize as null
    // and break the numeric round-trip on load
    nlohmann::json md = nlohmann::json::object();
    for (const auto& [key, v] : c.metadata)
        if (std::isfinite(v)) md[key] = v;
    j["metadata"] = md;
    std::ofstream f(path, std::ios::binary);
    if (!f) fail_config("cannot open checkpoint file: " + path);
    f << j.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail_config("cannot open checkpoint file: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, true);
    Checkpoint c;
    c.family = j.at("family").get<std::string>();
    c.dim = j.at("dim").get<int>();
    c.theta = j.at("theta").get<Vec>();
    if (j.contains("metadata"))
        c.metadata = j.at("metadata").get<std::map<std::string, double>>();
    return c;
}

}  // namespace ebm
