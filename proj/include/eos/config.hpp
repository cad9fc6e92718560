#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace eos {

// Flat key=value settings. Lines starting with '#' and blank lines are
// ignored. Keys carry dotted section prefixes (solver.eta). Typed getters
// raise ConfigError naming the key; every key that is read is marked used so
// callers can reject leftovers.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<text>");
    static KeyValueConfig from_file(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    // "key=value" from the command line.
    void apply_override(const std::string& assignment);
    void merge(const KeyValueConfig& other);

    bool has(const std::string& key) const;
    const std::map<std::string, std::string>& entries() const noexcept { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
    std::vector<std::size_t> get_size_list(const std::string& key, const std::vector<std::size_t>& fallback) const;
    std::vector<std::uint64_t> get_u64_list(const std::string& key, const std::vector<std::uint64_t>& fallback) const;
    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const;

    void mark_used(const std::string& key) const { used_.insert(key); }
    std::vector<std::string> unused_keys() const;
    // Throws ConfigError listing keys that were never read.
    void reject_unused() const;

    std::string to_text() const;

private:
    const std::string* find(const std::string& key) const;

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace eos
