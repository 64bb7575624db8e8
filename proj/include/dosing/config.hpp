#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dosing {

/// Flat `key = value` configuration. Lines starting with '#' are comments; vectors are
/// comma-separated. Later assignments override earlier ones.
class KeyValueConfig {
  public:
    static KeyValueConfig parse(std::istream& in);
    static KeyValueConfig from_file(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    void merge(const KeyValueConfig& other);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

    /// Throws ConfigError naming the first key not in `known`.
    void reject_unknown(const std::set<std::string>& known) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    /// Sorted `key = value` lines.
    std::string dump() const;
    void save(const std::filesystem::path& path) const;

  private:
    std::map<std::string, std::string> entries_;
};

std::string format_doubles(const std::vector<double>& v);
/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace dosing
