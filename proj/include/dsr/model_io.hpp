#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dsr/network.hpp"

namespace dsr {

/// Model file layout (all integers little-endian):
///   bytes 0..3   "DSRF"
///   bytes 4..7   u32 format version
///   bytes 8..15  u64 length of the JSON header in bytes
///   JSON header  configs, stage factors, value scale and a tensor directory
///                [{"name", "shape", "offset", "count"}] with byte offsets
///                relative to the start of the payload
///   payload      raw f64 little-endian tensor data
std::string serialize_model(const CascadeModel<double>& model);
CascadeModel<double> deserialize_model(std::string_view bytes);

void save_model(const std::filesystem::path& path, const CascadeModel<double>& model);
CascadeModel<double> load_model(const std::filesystem::path& path);

} // namespace dsr
