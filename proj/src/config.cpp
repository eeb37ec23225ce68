#include "dsr/config.hpp"

#include <algorithm>
#include <sstream>

#include "dsr/common.hpp"
#include "dsr/dataio.hpp"

namespace dsr {

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

} // namespace

RunConfig::RunConfig(std::map<std::string, std::string> defaults)
    : values_(std::move(defaults))
{
}

void RunConfig::merge_text(std::string_view text, const std::string& origin)
{
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const std::string body = trim(line);
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string value = trim(std::string_view(body).substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        if (!values_.contains(key)) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        values_[key] = value;
    }
}

void RunConfig::merge_file(const std::filesystem::path& path)
{
    merge_text(read_file(path), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value)
{
    if (!values_.contains(key)) {
        throw DataError("unknown config key '" + key + "'");
    }
    values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw DataError("unknown config key '" + key + "'");
    }
    return it->second;
}

double RunConfig::get_double(const std::string& key) const
{
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) {
            return d;
        }
    } catch (const std::logic_error&) {
    }
    throw DataError("config key '" + key + "': expected a number, got '" + v + "'");
}

long long RunConfig::get_int(const std::string& key) const
{
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used == v.size()) {
            return i;
        }
    } catch (const std::logic_error&) {
    }
    throw DataError("config key '" + key + "': expected an integer, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const
{
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw DataError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string RunConfig::snapshot() const
{
    std::ostringstream os;
    for (const auto& [k, v] : values_) {
        os << k << " = " << v << '\n';
    }
    return os.str();
}

} // namespace dsr
