#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "actalign/error.hpp"

namespace actalign {

// Human-readable `key = value` configuration, one pair per line, '#' comments.
class KvConfig {
public:
    static KvConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open config file: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str(), path);
    }

    static KvConfig parse_text(const std::string& text, const std::string& origin = "<text>") {
        KvConfig cfg;
        std::istringstream in(text);
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw io_error(origin + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw io_error(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.pairs_.emplace_back(key, value);
            cfg.index_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return index_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = index_.find(key);
        return it == index_.end() ? dflt : it->second;
    }

    double get_double(const std::string& key, double dflt) const {
        auto it = index_.find(key);
        if (it == index_.end()) return dflt;
        try {
            size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing chars");
            return v;
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "': expected a number, got '" +
                               it->second + "'");
        }
    }

    long long get_int(const std::string& key, long long dflt) const {
        auto it = index_.find(key);
        if (it == index_.end()) return dflt;
        try {
            size_t used = 0;
            long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing chars");
            return v;
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "': expected an integer, got '" +
                               it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = index_.find(key);
        if (it == index_.end()) return dflt;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw config_error("config key '" + key + "': expected true/false");
    }

    const std::vector<std::pair<std::string, std::string>>& pairs() const { return pairs_; }

    /// Rejects keys outside the allowed set (typo guard).
    void restrict_keys(const std::vector<std::string>& allowed) const {
        for (const auto& [k, v] : pairs_) {
            bool ok = false;
            for (const auto& a : allowed) ok = ok || a == k;
            if (!ok) throw config_error("unknown config key '" + k + "'");
        }
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::vector<std::pair<std::string, std::string>> pairs_;
    std::map<std::string, std::string> index_;
};

}  // namespace actalign
