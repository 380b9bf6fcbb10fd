#pragma once

// Flat key=value run configuration with a fixed, documented key set.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace remix {

enum class ValueType { Int, Real, Bool, Text };

struct ConfigKey {
    std::string name;
    ValueType type;
    std::string default_value;
    std::string doc;
};

const std::vector<ConfigKey>& config_schema();

class RunConfig {
public:
    RunConfig();  // all defaults

    // Throws ConfigError on unknown keys or values of the wrong type.
    void set(const std::string& key, const std::string& value);
    bool has_key(const std::string& key) const;

    long long get_int(const std::string& key) const;
    int get_i(const std::string& key) const { return static_cast<int>(get_int(key)); }
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_text(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;  // comma separated

    // Sorted "key=value" lines over every key.
    std::string canonical() const;
    // FNV-1a of canonical(), as 16 hex digits.
    std::string hash() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

// Parses "key = value" lines; '#' starts a comment. Duplicate keys are errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text, const std::string& origin = "<string>");

std::string kebab_to_snake(const std::string& s);
std::string snake_to_kebab(const std::string& s);

}  // namespace remix
