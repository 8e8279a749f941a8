#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace crownseg {

// Text helpers for the key = value formats (config files, checkpoint config
// block, reports). All parse errors raise ConfigError naming the key.

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
/// Duplicate keys keep the last value. Order of first appearance is kept.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                  const std::string& source);

std::string trim(const std::string& s);

double parse_double(const std::string& value, const std::string& key);
std::int64_t parse_int(const std::string& value, const std::string& key);
std::size_t parse_size(const std::string& value, const std::string& key);
std::uint64_t parse_u64(const std::string& value, const std::string& key);
bool parse_bool(const std::string& value, const std::string& key);
std::vector<std::size_t> parse_size_list(const std::string& value, const std::string& key);
std::vector<double> parse_double_list(const std::string& value, const std::string& key);

std::string join_sizes(const std::vector<std::size_t>& values);
std::string join_reals(const std::vector<double>& values);

} // namespace crownseg
