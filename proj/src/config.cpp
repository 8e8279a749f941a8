#include "crownseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "crownseg/binary_io.hpp"
#include "crownseg/error.hpp"

namespace crownseg {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                  const std::string& source) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& kv) { return kv.first == key; });
        if (it != out.end())
            it->second = std::move(value);
        else
            out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

double parse_double(const std::string& value, const std::string& key) {
    double v = 0.0;
    const auto* end = value.data() + value.size();
    auto res = std::from_chars(value.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end || value.empty())
        throw ConfigError("key '" + key + "': '" + value + "' is not a real number");
    return v;
}

std::int64_t parse_int(const std::string& value, const std::string& key) {
    std::int64_t v = 0;
    const auto* end = value.data() + value.size();
    auto res = std::from_chars(value.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end || value.empty())
        throw ConfigError("key '" + key + "': '" + value + "' is not an integer");
    return v;
}

std::size_t parse_size(const std::string& value, const std::string& key) {
    const auto v = parse_int(value, key);
    if (v < 0) throw ConfigError("key '" + key + "': expected a non-negative integer, got " + value);
    return static_cast<std::size_t>(v);
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
    std::uint64_t v = 0;
    const auto* end = value.data() + value.size();
    auto res = std::from_chars(value.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end || value.empty())
        throw ConfigError("key '" + key + "': '" + value + "' is not an unsigned integer");
    return v;
}

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("key '" + key + "': '" + value + "' is not a boolean");
}

namespace {

std::vector<std::string> split_commas(const std::string& value) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) parts.push_back(trim(item));
    return parts;
}

} // namespace

std::vector<std::size_t> parse_size_list(const std::string& value, const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& p : split_commas(value)) out.push_back(parse_size(p, key));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

std::vector<double> parse_double_list(const std::string& value, const std::string& key) {
    std::vector<double> out;
    for (const auto& p : split_commas(value)) out.push_back(parse_double(p, key));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

std::string join_sizes(const std::vector<std::size_t>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(values[i]);
    }
    return s;
}

std::string join_reals(const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ',';
        s += format_real(values[i]);
    }
    return s;
}

} // namespace crownseg
