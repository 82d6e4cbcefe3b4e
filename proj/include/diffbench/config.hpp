#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "diffbench/core.hpp"

namespace diffbench::config {

// ---------------------------------------------------------------------------
// Flat typed key-value config: one "section.key = value" per line, '#'
// comments. One config describes one run. Keys that no command consumes are
// rejected with their exact path.
// ---------------------------------------------------------------------------

class ConfigReader {
public:
    static ConfigReader from_file(const std::string& path);
    static ConfigReader from_text(const std::string& text);

    bool has(const std::string& key) const;

    // required variants throw ConfigError naming the key
    std::string get_string(const std::string& key);
    std::string get_string(const std::string& key, const std::string& fallback);
    double get_real(const std::string& key);
    double get_real(const std::string& key, double fallback);
    int64_t get_int(const std::string& key);
    int64_t get_int(const std::string& key, int64_t fallback);
    uint64_t get_uint(const std::string& key);
    uint64_t get_uint(const std::string& key, uint64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<double> get_real_list(const std::string& key);
    std::vector<double> get_real_list(const std::string& key, const std::vector<double>& fallback);
    std::vector<int> get_int_list(const std::string& key);

    // override a value before any reads (CLI --seed)
    void override_value(const std::string& key, const std::string& value);

    // consume a key without adding it to the resolved map; for values that
    // locate outputs rather than affect results
    std::string peek_string(const std::string& key, const std::string& fallback);

    // every key consumed so far, with defaults expanded
    const std::map<std::string, std::string>& resolved() const { return resolved_; }

    // rejects any key present in the file but never consumed
    void finish() const;

private:
    std::string raw(const std::string& key);
    void note(const std::string& key, const std::string& value);

    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
    std::map<std::string, std::string> resolved_;
};

std::string format_real_list(const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Run manifest: resolved config, artifact digests and result records.
// Wall-clock timings go to a sidecar file excluded from the determinism
// contract, so manifests are byte-stable across reruns.
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string run_id;
    std::string command;
    std::string tool_version;
    std::map<std::string, std::string> resolved_config;
    std::map<std::string, std::string> artifacts;  // file name -> digest hex
    std::vector<std::string> results;              // serialized JSON records

    std::string to_json() const;
    static RunManifest from_json(const std::string& text);

    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

constexpr const char* kToolVersion = "diffbench 0.1.0";

}  // namespace diffbench::config
