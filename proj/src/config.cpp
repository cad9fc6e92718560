#include "eos/config.hpp"

#include "eos/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace eos {

namespace {

std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [p, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || p != end || text.empty())
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    return value;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    if (trim(text).empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = text.find(sep, start);
        out.push_back(trim(std::string_view(text).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
        cfg.set(trim(std::string_view(stripped).substr(0, eq)), trim(std::string_view(stripped).substr(eq + 1)));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("config: empty key");
    values_[key] = value;
}

void KeyValueConfig::apply_override(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string* KeyValueConfig::find(const std::string& key) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    const std::string* v = find(key);
    return v ? parse_number<double>(key, *v) : fallback;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
    const std::string* v = find(key);
    return v ? parse_number<std::size_t>(key, *v) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (v->size() > 2 && (*v)[0] == '0' && ((*v)[1] == 'x' || (*v)[1] == 'X')) {
        std::uint64_t value = 0;
        const char* end = v->data() + v->size();
        const auto [p, ec] = std::from_chars(v->data() + 2, end, value, 16);
        if (ec != std::errc() || p != end) throw ConfigError("config key '" + key + "': cannot parse '" + *v + "'");
        return value;
    }
    return parse_number<std::uint64_t>(key, *v);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + *v + "'");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    const std::string* v = find(key);
    return v ? split_list(*v) : fallback;
}

std::vector<std::size_t> KeyValueConfig::get_size_list(const std::string& key,
                                                       const std::vector<std::size_t>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<std::size_t> out;
    for (const auto& item : split_list(*v)) out.push_back(parse_number<std::size_t>(key, item));
    return out;
}

std::vector<std::uint64_t> KeyValueConfig::get_u64_list(const std::string& key,
                                                        const std::vector<std::uint64_t>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(*v)) out.push_back(parse_number<std::uint64_t>(key, item));
    return out;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key, const std::vector<double>& fallback) const {
    const std::string* v = find(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(*v)) out.push_back(parse_number<double>(key, item));
    return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
        if (!used_.count(k)) out.push_back(k);
    return out;
}

void KeyValueConfig::reject_unused() const {
    const auto unused = unused_keys();
    if (unused.empty()) return;
    std::string msg = "unknown config key";
    msg += unused.size() > 1 ? "s: " : ": ";
    for (std::size_t i = 0; i < unused.size(); ++i) msg += (i ? ", " : "") + unused[i];
    throw ConfigError(msg);
}

std::string KeyValueConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

}  // namespace eos
