#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cesrnn {

// Flat `key = value` configuration text. Blank lines and lines starting with
// '#' are ignored; keys and values are trimmed. Later assignments win.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::string_view text, const std::string& origin = "<text>");
    static KeyValueConfig from_file(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> get(const std::string& key) const;
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    // Entries of `other` override entries of *this.
    void merge(const KeyValueConfig& other);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

    // Canonical text form: sorted `key = value` lines.
    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

} // namespace cesrnn
