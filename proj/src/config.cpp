#include "diffbench/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace diffbench::config {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

ConfigReader ConfigReader::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_text(buf.str());
}

ConfigReader ConfigReader::from_text(const std::string& text) {
    ConfigReader r;
    std::istringstream is(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (r.values_.count(key))
            throw ConfigError("config key '" + key + "' appears more than once");
        r.values_[key] = value;
    }
    return r;
}

bool ConfigReader::has(const std::string& key) const { return values_.count(key) != 0; }

void ConfigReader::override_value(const std::string& key, const std::string& value) {
    values_[key] = value;
}

void ConfigReader::note(const std::string& key, const std::string& value) {
    used_.insert(key);
    resolved_[key] = value;
}

std::string ConfigReader::raw(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    used_.insert(key);
    return it->second;
}

std::string ConfigReader::get_string(const std::string& key) {
    std::string v = raw(key);
    note(key, v);
    return v;
}

std::string ConfigReader::get_string(const std::string& key, const std::string& fallback) {
    std::string v = has(key) ? raw(key) : fallback;
    note(key, v);
    return v;
}

std::string ConfigReader::peek_string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    std::string v = raw(key);  // marks the key as consumed
    return v;
}

namespace {

double parse_real(const std::string& key, const std::string& v) {
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    return x;
}

int64_t parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    return x;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0' || v.find('-') != std::string::npos)
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v +
                          "'");
    return x;
}

}  // namespace

double ConfigReader::get_real(const std::string& key) {
    double x = parse_real(key, raw(key));
    note(key, format_double(x));
    return x;
}

double ConfigReader::get_real(const std::string& key, double fallback) {
    double x = has(key) ? parse_real(key, raw(key)) : fallback;
    note(key, format_double(x));
    return x;
}

int64_t ConfigReader::get_int(const std::string& key) {
    int64_t x = parse_int(key, raw(key));
    note(key, std::to_string(x));
    return x;
}

int64_t ConfigReader::get_int(const std::string& key, int64_t fallback) {
    int64_t x = has(key) ? parse_int(key, raw(key)) : fallback;
    note(key, std::to_string(x));
    return x;
}

uint64_t ConfigReader::get_uint(const std::string& key) {
    uint64_t x = parse_uint(key, raw(key));
    note(key, std::to_string(x));
    return x;
}

uint64_t ConfigReader::get_uint(const std::string& key, uint64_t fallback) {
    uint64_t x = has(key) ? parse_uint(key, raw(key)) : fallback;
    note(key, std::to_string(x));
    return x;
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
    bool x = fallback;
    if (has(key)) {
        std::string v = raw(key);
        if (v == "true" || v == "1")
            x = true;
        else if (v == "false" || v == "0")
            x = false;
        else
            throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
    }
    note(key, x ? "true" : "false");
    return x;
}

namespace {

std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw ConfigError("config key '" + key + "': empty list element");
        out.push_back(parse_real(key, item));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

}  // namespace

std::string format_real_list(const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += format_double(v[i]);
    }
    return s;
}

std::vector<double> ConfigReader::get_real_list(const std::string& key) {
    std::vector<double> x = parse_real_list(key, raw(key));
    note(key, format_real_list(x));
    return x;
}

std::vector<double> ConfigReader::get_real_list(const std::string& key,
                                                const std::vector<double>& fallback) {
    std::vector<double> x = has(key) ? parse_real_list(key, raw(key)) : fallback;
    note(key, format_real_list(x));
    return x;
}

std::vector<int> ConfigReader::get_int_list(const std::string& key) {
    std::vector<double> reals = parse_real_list(key, raw(key));
    std::vector<int> out;
    std::string rendered;
    for (double v : reals) {
        int i = int(v);
        if (double(i) != v)
            throw ConfigError("config key '" + key + "': expected integers");
        out.push_back(i);
        if (!rendered.empty()) rendered += ",";
        rendered += std::to_string(i);
    }
    note(key, rendered);
    return out;
}

void ConfigReader::finish() const {
    for (const auto& [key, value] : values_) {
        (void)value;
        if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
}

// -------------------------------- manifest ----------------------------------

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["run_id"] = run_id;
    j["command"] = command;
    j["tool_version"] = tool_version;
    j["resolved_config"] = resolved_config;
    j["artifacts"] = artifacts;
    nlohmann::json res = nlohmann::json::array();
    for (const std::string& r : results) res.push_back(nlohmann::json::parse(r));
    j["results"] = res;
    j["timings_file"] = "timings.txt";
    return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("manifest: corrupt JSON: ") + e.what());
    }
    RunManifest m;
    try {
        m.run_id = j.at("run_id").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.tool_version = j.at("tool_version").get<std::string>();
        for (auto it = j.at("resolved_config").begin(); it != j.at("resolved_config").end(); ++it)
            m.resolved_config[it.key()] = it.value().get<std::string>();
        for (auto it = j.at("artifacts").begin(); it != j.at("artifacts").end(); ++it)
            m.artifacts[it.key()] = it.value().get<std::string>();
        for (const auto& r : j.at("results")) m.results.push_back(r.dump());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest: missing or mistyped field: ") + e.what());
    }
    return m;
}

void RunManifest::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("manifest: cannot open " + path + " for writing");
    os << to_json();
    if (!os) throw DataError("manifest: write failed for " + path);
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("manifest: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_json(buf.str());
}

}  // namespace diffbench::config
