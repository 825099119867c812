#ifndef AULLMXX_CORE_CONFIG_HPP
#define AULLMXX_CORE_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aullmxx/core/error.hpp"
#include "aullmxx/core/rng.hpp"

namespace aullmxx {

// Flat versioned key-value configuration. One `key value...` pair per line,
// `#` starts a comment, repeated keys build a list. Values keep internal
// whitespace (prompt strings).
class Config {
public:
    static constexpr int kVersion = 1;

    Config() { set("version", std::to_string(kVersion)); }

    static Config parse_text(const std::string& text) {
        Config cfg;
        cfg.values_.clear();
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto sp = trimmed.find_first_of(" \t");
            if (sp == std::string::npos) {
                throw ConfigError("config line " + std::to_string(lineno) + ": key without value");
            }
            cfg.values_[trimmed.substr(0, sp)].push_back(trim(trimmed.substr(sp + 1)));
        }
        if (!cfg.has("version")) throw ConfigError("config missing version");
        if (cfg.get_int("version") != kVersion) {
            throw ConfigError("unsupported config version " + cfg.get_string("version"));
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    const std::vector<std::string>& get_all(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }

    std::string get_string(const std::string& key) const { return get_all(key).back(); }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? get_string(key) : fallback;
    }

    long long get_int(const std::string& key) const {
        try {
            return std::stoll(get_string(key));
        } catch (const std::logic_error&) {
            throw ConfigError("config key " + key + " is not an integer: " + get_string(key));
        }
    }

    long long get_int(const std::string& key, long long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    double get_double(const std::string& key) const {
        try {
            return std::stod(get_string(key));
        } catch (const std::logic_error&) {
            throw ConfigError("config key " + key + " is not a number: " + get_string(key));
        }
    }

    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string v = get_string(key);
        if (v == "true" || v == "1" || v == "on") return true;
        if (v == "false" || v == "0" || v == "off") return false;
        throw ConfigError("config key " + key + " is not a boolean: " + v);
    }

    void set(const std::string& key, const std::string& value) { values_[key] = {value}; }

    void append(const std::string& key, const std::string& value) {
        values_[key].push_back(value);
    }

    // Canonical text: keys sorted, repeats in insertion order. Equal configs
    // serialize identically, which is what the fingerprint hashes.
    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [key, vals] : values_) {
            for (const auto& v : vals) out << key << ' ' << v << '\n';
        }
        return out.str();
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write config file: " + path);
        out << serialize();
    }

    std::string fingerprint() const {
        std::ostringstream os;
        os << std::hex << fnv1a64(serialize());
        return os.str();
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::vector<std::string>> values_;
};

}  // namespace aullmxx

#endif  // AULLMXX_CORE_CONFIG_HPP
