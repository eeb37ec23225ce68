#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "dsr/model_io.hpp"

using namespace dsr;

namespace {

CascadeModel<double> sample_model(bool msf)
{
    ModelConfig cfg;
    cfg.stage_factors = {2, 3};
    cfg.unit = {2, 3, 3, 1, true};
    cfg.msf = msf;
    cfg.msf_unit = {2, 3, 5, 1, false};
    cfg.value_scale = 1.0 / 128;
    return make_model<double>(cfg, 11);
}

} // namespace

TEST_CASE("model round trip is bitwise")
{
    for (bool msf : {false, true}) {
        const auto m = sample_model(msf);
        const std::string bytes = serialize_model(m);
        CHECK(bytes.substr(0, 4) == "DSRF");
        std::uint32_t version = 0;
        std::memcpy(&version, bytes.data() + 4, 4);
        CHECK(version == CascadeModel<double>::kFormatVersion);
        const auto back = deserialize_model(bytes);
        CHECK(back == m);
        CHECK(serialize_model(back) == bytes);
    }
}

TEST_CASE("model files: save and load")
{
    const auto path = std::filesystem::temp_directory_path() / "dsr_test_model.dsrf";
    const auto m = sample_model(true);
    save_model(path, m);
    CHECK(load_model(path) == m);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_model(path), DataError);
}

TEST_CASE("corrupt model data is rejected")
{
    const std::string bytes = serialize_model(sample_model(false));
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_model(bad_magic), DataError);

    std::string bad_version = bytes;
    bad_version[4] = 99;
    CHECK_THROWS_AS(deserialize_model(bad_version), DataError);

    CHECK_THROWS_AS(deserialize_model(bytes.substr(0, 12)), DataError);
    CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 8)), DataError);
    CHECK_THROWS_AS(deserialize_model(""), DataError);

    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 8);
    std::string bad_json = bytes;
    bad_json[16] = '!';
    CHECK_THROWS_AS(deserialize_model(bad_json), DataError);
    CHECK(header_len > 0);
}
