#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "dsr/dataio.hpp"

using namespace dsr;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("dsr_test_dataio_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("PGM 8-bit: byte layout and round trip")
{
    Image<double> m(2, 3);
    m << 0, 1, 2, 253, 254, 255;
    const std::string bytes = encode_depth(m, DepthFormat::Pgm8);
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 253);
    const auto f = decode_depth(bytes);
    CHECK(f.values == m);
    CHECK(f.bit_depth == 8);
    CHECK(f.range.min == 0.0);
    CHECK(f.range.max == 255.0);
}

TEST_CASE("PGM 16-bit is big-endian and round trips")
{
    Image<double> m(1, 2);
    m << 258, 65535;
    const std::string bytes = encode_depth(m, DepthFormat::Pgm16);
    const std::string header = "P5\n2 1\n65535\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(static_cast<unsigned char>(bytes[header.size()]) == 1);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 2);
    const auto f = decode_depth(bytes);
    CHECK(f.values == m);
    CHECK(f.bit_depth == 16);
}

TEST_CASE("PGM writing rounds and clamps")
{
    Image<double> m(1, 3);
    m << -5.0, 12.4, 400.0;
    CHECK(decode_depth(encode_depth(m, DepthFormat::Pgm8)).values == Image<double>((Image<double>(1, 3) << 0, 12, 255).finished()));
}

TEST_CASE("PFM round trip is exact in float32 and stores rows bottom-up")
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0.0f, 5000.0f);
    Image<double> m(4, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = u(rng);
    }
    const std::string bytes = encode_depth(m, DepthFormat::Pfm);
    const std::string header = "Pf\n5 4\n-1.0\n";
    REQUIRE(bytes.size() == header.size() + 4 * 20);
    float first = 0;
    std::memcpy(&first, bytes.data() + header.size(), 4);
    CHECK(static_cast<double>(first) == m(3, 0));
    const auto f = decode_depth(bytes);
    CHECK(f.values == m);
    CHECK(f.bit_depth == 32);
}

TEST_CASE("decoding rejects unsupported and corrupt files")
{
    CHECK_THROWS_AS(decode_depth("P2\n2 2\n255\n0 0 0 0\n"), DataError);
    CHECK_THROWS_AS(decode_depth("PF\n1 1\n-1.0\n000000000000"), DataError);
    CHECK_THROWS_AS(decode_depth("P5\n4 4\n255\nabc"), DataError);
    CHECK_THROWS_AS(decode_depth("P5\n4 x\n255\n"), DataError);
    CHECK_THROWS_AS(decode_depth("P5\n0 4\n255\n"), DataError);
    CHECK_THROWS_AS(decode_depth("Pf\n1 1\n0.0\n0000"), DataError);
    CHECK_THROWS_AS(decode_depth("P"), DataError);
    CHECK_THROWS_AS(decode_depth("GIF89a"), DataError);
    Image<double> nan = Image<double>::Zero(1, 1);
    nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(encode_depth(nan, DepthFormat::Pgm8), DataError);
}

TEST_CASE("files: extension picks the format; missing files are data errors")
{
    const auto dir = scratch_dir("files");
    Image<double> small(2, 2), big(2, 2);
    small << 1, 2, 3, 4;
    big << 1, 2, 3, 1000;
    write_depth(dir / "a.pgm", small);
    write_depth(dir / "b.pgm", big);
    write_depth(dir / "c.pfm", small);
    CHECK(read_depth(dir / "a.pgm").bit_depth == 8);
    CHECK(read_depth(dir / "b.pgm").bit_depth == 16);
    CHECK(read_depth(dir / "b.pgm").values == big);
    CHECK(read_depth(dir / "c.pfm").values == small);
    CHECK_THROWS_AS(write_depth(dir / "d.png", small), DataError);
    CHECK_THROWS_AS(read_depth(dir / "missing.pgm"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("manifest: parse, resolve, round trip and errors")
{
    const std::string text = R"({"version": 1,
        "degradation": {"factor": 4, "noise": {"delta": 651, "seed": 9}},
        "entries": [{"path": "gt/a.pgm", "split": "train"},
                    {"path": "gt/b.pgm", "mask": "m/b.pgm", "split": "test"}]})";
    const auto m = parse_manifest(text, "/data");
    REQUIRE(m.entries.size() == 2);
    CHECK(m.degradation.factor == 4);
    REQUIRE(m.degradation.noise.has_value());
    CHECK(m.degradation.noise->delta == 651.0);
    CHECK(m.degradation.noise->seed == 9);
    CHECK(m.entries[1].mask == std::optional<std::string>("m/b.pgm"));
    CHECK(m.resolve("gt/a.pgm") == fs::path("/data/gt/a.pgm"));

    const auto back = parse_manifest(manifest_to_json(m), "/data");
    CHECK(back.entries.size() == 2);
    CHECK(back.entries[1].split == "test");
    CHECK(back.degradation.noise->delta == 651.0);

    CHECK_THROWS_AS(parse_manifest("{not json"), DataError);
    CHECK_THROWS_AS(parse_manifest(R"({"version": 2, "degradation": {"factor": 2, "noise": null}, "entries": []})"),
                    DataError);
    CHECK_THROWS_AS(parse_manifest(R"({"version": 1, "degradation": {"factor": 1, "noise": null}, "entries": []})"),
                    DataError);
    CHECK_THROWS_AS(parse_manifest(R"({"version": 1, "degradation": {"factor": 2, "noise": null},
                                      "entries": [{"path": "a", "split": "dev"}]})"),
                    DataError);
    CHECK_THROWS_AS(parse_manifest(R"({"version": 1, "degradation": {"factor": 2, "noise": null},
                                      "entries": [{"path": "a"}, {"path": "a"}]})"),
                    DataError);
}

TEST_CASE("crop_to_multiple keeps the top-left block")
{
    Image<double> m = Image<double>::Random(7, 10);
    const auto c = crop_to_multiple(m, 4);
    CHECK(c.rows() == 4);
    CHECK(c.cols() == 8);
    CHECK(c == m.topLeftCorner(4, 8));
    CHECK_THROWS_AS(crop_to_multiple(m, 8), ContractError);
}

TEST_CASE("patchset: small images, flat patches, determinism, exact degradation")
{
    std::mt19937_64 rng(2);
    const Image<double> gt = synthetic_rectangles(64, 64, rng);
    const Degradation deg{2, NoiseSpec{651.0, 3}};
    PatchOptions po;
    po.patch_size = 32;
    po.stride = 32;

    const auto set = build_patchset({gt}, deg, po);
    CHECK(set.patches.size() + set.dropped_flat == 4);
    const auto again = build_patchset({gt}, deg, po);
    REQUIRE(again.patches.size() == set.patches.size());
    const Image<double> full_lr = degrade(gt, deg, image_seed(deg.noise->seed, 0));
    for (std::size_t i = 0; i < set.patches.size(); ++i) {
        const auto& p = set.patches[i];
        CHECK(p.lr == again.patches[i].lr);
        CHECK(p.lr.rows() == 16);
        CHECK(p.targets.back() == gt.block(p.y, p.x, 32, 32));
        CHECK(p.lr == full_lr.block(p.y / 2, p.x / 2, 16, 16));
    }

    const auto flat = build_patchset({Image<double>::Constant(64, 64, 50.0)}, Degradation{2, std::nullopt}, po);
    CHECK(flat.patches.empty());
    CHECK(flat.dropped_flat == 4);

    const auto tiny = build_patchset({Image<double>::Constant(16, 16, 50.0)}, Degradation{2, std::nullopt}, po);
    CHECK(tiny.patches.empty());
    CHECK(tiny.skipped_small == 1);
}

TEST_CASE("patchset: cascade targets and manifest loading")
{
    const auto dir = scratch_dir("manifest");
    std::mt19937_64 rng(4);
    for (const char* name : {"a.pfm", "b.pfm", "c.pfm"}) {
        write_depth(dir / name, synthetic_rectangles(32, 32, rng));
    }
    write_file_atomic(dir / "set.json", R"({"version": 1, "degradation": {"factor": 4, "noise": null},
        "entries": [{"path": "a.pfm", "split": "train"}, {"path": "b.pfm", "split": "train"},
                    {"path": "c.pfm", "split": "test"}]})");
    const auto m = load_manifest(dir / "set.json");
    PatchOptions po;
    po.stage_factors = {2, 2};
    po.patch_size = 32;
    po.stride = 32;
    const auto train = build_patchset(m, po, "train");
    CHECK(train.patches.size() + train.dropped_flat == 2);
    for (const auto& p : train.patches) {
        REQUIRE(p.targets.size() == 2);
        CHECK(p.targets[0].rows() == 16);
        CHECK(p.targets[1].rows() == 32);
        CHECK(p.lr.rows() == 8);
    }
    CHECK(build_patchset(m, po, "").patches.size() + build_patchset(m, po, "").dropped_flat == 3);
    fs::remove_all(dir);
}

TEST_CASE("synthetic rectangles stay in range and are reproducible")
{
    std::mt19937_64 a(5), b(5);
    const auto x = synthetic_rectangles(40, 30, a);
    CHECK(x == synthetic_rectangles(40, 30, b));
    CHECK(x.minCoeff() >= 10.0);
    CHECK(x.maxCoeff() <= 255.0);
    CHECK(image_seed(7, 0) != image_seed(7, 1));
    CHECK(image_seed(7, 3) == image_seed(7, 3));
}
