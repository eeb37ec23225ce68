#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace dsr {

/// Flat `key = value` settings with `#` comments. Only declared keys are
/// accepted; later sources (e.g. command-line flags) override earlier ones.
class RunConfig {
public:
    explicit RunConfig(std::map<std::string, std::string> defaults);

    /// Merges a config file's text; unknown keys throw DataError.
    void merge_text(std::string_view text, const std::string& origin = "<config>");
    void merge_file(const std::filesystem::path& path);

    /// Overrides one key; unknown keys throw DataError.
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    /// Effective configuration in the same format merge_text reads.
    std::string snapshot() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace dsr
