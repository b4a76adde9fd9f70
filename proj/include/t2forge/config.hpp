// Flat key = value configuration with [section] headers and '#' comments.
// Keys are addressed as "section.key". One file drives the whole pipeline;
// stages read their own section.
#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "t2forge/common.hpp"

namespace t2forge {

struct Config {
    std::map<std::string, std::string> values;

    static Config parse(std::istream& is) {
        Config cfg;
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                size_t b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                size_t e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            std::string t = trim(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError("config line " + std::to_string(lineno) +
                                      ": malformed section header");
                section = trim(t.substr(1, t.size() - 2));
                continue;
            }
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string val = trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            cfg.values[section.empty() ? key : section + "." + key] = val;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("config: cannot open " + path);
        return parse(is);
    }

    bool has(const std::string& key) const { return values.count(key) > 0; }

    void set(const std::string& key, const std::string& val) { values[key] = val; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end() || it->second.empty())
            throw ConfigError("config: missing key " + key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key " + key + " is not a number: " + it->second);
        }
    }

    int get_int(const std::string& key, int fallback) const {
        double v = get_double(key, double(fallback));
        int i = int(std::llround(v));
        if (double(i) != v) throw ConfigError("config: key " + key + " is not an integer");
        return i;
    }

    uint64_t get_u64(const std::string& key, uint64_t fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config: key " + key + " is not an unsigned integer: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw ConfigError("config: key " + key + " is not a boolean: " + it->second);
    }

    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        std::istringstream ss(it->second);
        std::vector<double> out;
        double v;
        while (ss >> v) out.push_back(v);
        if (!ss.eof()) throw ConfigError("config: key " + key + " is not a number list");
        if (out.empty()) throw ConfigError("config: key " + key + " is empty");
        return out;
    }

    std::vector<std::string> get_words(const std::string& key,
                                       const std::vector<std::string>& fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        std::istringstream ss(it->second);
        std::vector<std::string> out;
        std::string w;
        while (ss >> w) out.push_back(w);
        return out;
    }
};

} // namespace t2forge
