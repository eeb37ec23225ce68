#include "dsr/model_io.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <span>

#include "dsr/dataio.hpp"
#include "json.hpp"

namespace dsr {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'D', 'S', 'R', 'F'};

template <typename T>
void put_le(std::string& out, T value)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t at)
{
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    }
    return v;
}

json unit_json(const UnitConfig& c)
{
    return {{"num_layers", c.num_layers}, {"channels", c.channels},   {"kernel", c.kernel},
            {"in_channels", c.in_channels}, {"residual", c.residual}};
}

UnitConfig unit_from_json(const json& j)
{
    UnitConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.channels = j.at("channels").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.residual = j.at("residual").get<bool>();
    return c;
}

/// Visits every parameter array with a stable name, in parameters() order.
template <typename Model, typename Fn>
void for_each_tensor(Model& model, Fn&& fn)
{
    const auto visit_unit = [&](auto& unit, const std::string& prefix) {
        for (std::size_t l = 0; l < unit.layers.size(); ++l) {
            auto& layer = unit.layers[l];
            const std::string base = prefix + ".layer" + std::to_string(l);
            const Shape s = layer.weights.shape();
            fn(base + ".weight", std::vector<Eigen::Index>{s.batch, s.channels, s.height, s.width},
               layer.weights.data());
            fn(base + ".bias", std::vector<Eigen::Index>{layer.bias.size()},
               std::span(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())));
        }
    };
    for (std::size_t s = 0; s < model.stages.size(); ++s) {
        for (std::size_t u = 0; u < model.stages[s].units.size(); ++u) {
            visit_unit(model.stages[s].units[u], "stage" + std::to_string(s) + ".unit" + std::to_string(u));
        }
    }
    if (model.msf) {
        visit_unit(*model.msf, "msf");
    }
}

} // namespace

std::string serialize_model(const CascadeModel<double>& model)
{
    json header;
    header["format"] = "DSRF";
    header["version"] = CascadeModel<double>::kFormatVersion;
    header["scalar"] = "f64le";
    header["value_scale"] = model.value_scale;
    header["stage_factors"] = model.stage_factors();
    header["unit"] = unit_json(model.stages.front().units.front().config);
    header["msf"] = model.msf ? unit_json(model.msf->config) : json(nullptr);

    std::string payload;
    json directory = json::array();
    for_each_tensor(model, [&](const std::string& name, const std::vector<Eigen::Index>& shape,
                               std::span<const double> data) {
        directory.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()}, {"count", data.size()}});
        for (double v : data) {
            put_le(payload, std::bit_cast<std::uint64_t>(v));
        }
    });
    header["tensors"] = directory;
    header["payload_bytes"] = payload.size();

    const std::string text = header.dump();
    std::string out(kMagic, 4);
    put_le(out, CascadeModel<double>::kFormatVersion);
    put_le(out, static_cast<std::uint64_t>(text.size()));
    out += text;
    out += payload;
    return out;
}

CascadeModel<double> deserialize_model(std::string_view bytes)
{
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DataError("model: missing DSRF magic");
    }
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != CascadeModel<double>::kFormatVersion) {
        throw DataError("model: unsupported format version " + std::to_string(version));
    }
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - 16) {
        throw DataError("model: truncated header");
    }
    json header;
    try {
        header = json::parse(bytes.substr(16, header_len));
    } catch (const json::exception& e) {
        throw DataError(std::string("model: invalid header: ") + e.what());
    }
    const std::string_view payload = bytes.substr(16 + header_len);

    try {
        ModelConfig cfg;
        cfg.stage_factors = header.at("stage_factors").get<std::vector<int>>();
        cfg.unit = unit_from_json(header.at("unit"));
        cfg.value_scale = header.at("value_scale").get<double>();
        cfg.msf = !header.at("msf").is_null();
        if (cfg.msf) {
            cfg.msf_unit = unit_from_json(header.at("msf"));
        }
        CascadeModel<double> model(cfg);

        std::map<std::string, json> directory;
        for (const auto& t : header.at("tensors")) {
            directory[t.at("name").get<std::string>()] = t;
        }
        for_each_tensor(model, [&](const std::string& name, const std::vector<Eigen::Index>& shape,
                                   std::span<double> data) {
            const auto it = directory.find(name);
            if (it == directory.end()) {
                throw DataError("model: missing tensor " + name);
            }
            if (it->second.at("shape").get<std::vector<Eigen::Index>>() != shape
                || it->second.at("count").get<std::size_t>() != data.size()) {
                throw DataError("model: tensor " + name + " has unexpected shape");
            }
            const auto offset = it->second.at("offset").get<std::size_t>();
            if (offset > payload.size() || payload.size() - offset < 8 * data.size()) {
                throw DataError("model: truncated payload for " + name);
            }
            for (std::size_t i = 0; i < data.size(); ++i) {
                data[i] = std::bit_cast<double>(get_le<std::uint64_t>(payload, offset + 8 * i));
            }
            directory.erase(it);
        });
        if (!directory.empty()) {
            throw DataError("model: unexpected tensor " + directory.begin()->first);
        }
        return model;
    } catch (const json::exception& e) {
        throw DataError(std::string("model: malformed header: ") + e.what());
    } catch (const ContractError& e) {
        throw DataError(std::string("model: invalid configuration: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const CascadeModel<double>& model)
{
    write_file_atomic(path, serialize_model(model));
}

CascadeModel<double> load_model(const std::filesystem::path& path)
{
    return deserialize_model(read_file(path));
}

} // namespace dsr
