#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hossnet {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

}  // namespace detail

/// Line-oriented config: `[section]` headers, `key = value` entries, `#` or
/// `;` comments. Later assignments win. Keys outside any section go to "".
class IniConfig {
public:
    IniConfig() = default;

    /// Merges the given text into this config; repeated keys (within one call
    /// or across calls) take the latest value.
    void parse_string(const std::string& text) {
        std::istringstream in(text);
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto comment = line.find_first_of("#;");
            if (comment != std::string::npos) line = line.substr(0, comment);
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw std::runtime_error("config line " + std::to_string(line_no) +
                                             ": unterminated section header");
                section = detail::trim(line.substr(1, line.size() - 2));
                if (section.empty())
                    throw std::runtime_error("config line " + std::to_string(line_no) +
                                             ": empty section name");
                values_[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": expected key = value");
            const std::string key = detail::trim(line.substr(0, eq));
            if (key.empty())
                throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
            values_[section][key] = detail::trim(line.substr(eq + 1));
        }
    }

    void parse_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file " + path.string());
        std::stringstream buf;
        buf << in.rdbuf();
        parse_string(buf.str());
    }

    bool has(const std::string& section, const std::string& key) const {
        const auto s = values_.find(section);
        return s != values_.end() && s->second.count(key) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        const auto s = values_.find(section);
        if (s == values_.end()) return fallback;
        const auto k = s->second.find(key);
        return k == s->second.end() ? fallback : k->second;
    }

    std::string require_string(const std::string& section, const std::string& key) const {
        if (!has(section, key))
            throw std::runtime_error("config: missing required key [" + section + "] " + key);
        return values_.at(section).at(key);
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        if (!has(section, key)) return fallback;
        return parse_double(section, key, values_.at(section).at(key));
    }

    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const {
        if (!has(section, key)) return fallback;
        const std::string& raw = values_.at(section).at(key);
        std::size_t used = 0;
        std::int64_t v = 0;
        try {
            v = std::stoll(raw, &used);
        } catch (const std::exception&) {
            throw std::runtime_error("config: [" + section + "] " + key + " = '" + raw +
                                     "' is not an integer");
        }
        if (used != raw.size())
            throw std::runtime_error("config: [" + section + "] " + key + " = '" + raw +
                                     "' is not an integer");
        return v;
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string& raw = values_.at(section).at(key);
        if (raw == "on" || raw == "true" || raw == "yes" || raw == "1") return true;
        if (raw == "off" || raw == "false" || raw == "no" || raw == "0") return false;
        throw std::runtime_error("config: [" + section + "] " + key + " = '" + raw +
                                 "' is not a boolean (use on/off)");
    }

    std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                  std::vector<int> fallback) const {
        if (!has(section, key)) return fallback;
        const std::string& raw = values_.at(section).at(key);
        std::vector<int> out;
        std::stringstream ss(raw);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = detail::trim(item);
            if (item.empty()) continue;
            out.push_back(static_cast<int>(std::stoll(item)));
        }
        if (out.empty())
            throw std::runtime_error("config: [" + section + "] " + key + " has no entries");
        return out;
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        values_[section][key] = value;
    }

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return values_;
    }

private:
    double parse_double(const std::string& section, const std::string& key,
                        const std::string& raw) const {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(raw, &used);
        } catch (const std::exception&) {
            throw std::runtime_error("config: [" + section + "] " + key + " = '" + raw +
                                     "' is not a number");
        }
        if (used != raw.size())
            throw std::runtime_error("config: [" + section + "] " + key + " = '" + raw +
                                     "' is not a number");
        return v;
    }

    std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace hossnet
