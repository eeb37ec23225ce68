#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dsr/common.hpp"
#include "dsr/resample.hpp"

namespace dsr {

struct ValueRange {
    double min = 0.0;
    double max = 0.0;
};

/// A depth map as stored on disk.
struct DepthFile {
    Image<double> values;
    ValueRange range;
    int bit_depth = 32; // 8 or 16 for PGM, 32 for PFM
};

enum class DepthFormat { Pgm8, Pgm16, Pfm };

/// Reads binary PGM (P5, 8/16-bit big-endian) or grayscale PFM (Pf, little-endian).
DepthFile read_depth(const std::filesystem::path& path);

/// Writes atomically (temp file + rename). PGM values are rounded and
/// clamped to [0, maxval].
void write_depth(const std::filesystem::path& path, const Image<double>& map, DepthFormat format);

/// Picks the format from the extension: .pfm -> PFM; .pgm -> 16-bit when any
/// value exceeds 255, else 8-bit.
void write_depth(const std::filesystem::path& path, const Image<double>& map);

/// Decodes/encodes from memory; `name` is only used in error messages.
DepthFile decode_depth(std::string_view bytes, const std::string& name = "<memory>");
std::string encode_depth(const Image<double>& map, DepthFormat format);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

struct ManifestEntry {
    std::string path;
    std::optional<std::string> mask;
    std::string split = "train";
};

struct Degradation {
    int factor = 2;
    std::optional<NoiseSpec> noise;
};

/// JSON document: {"version": 1, "degradation": {"factor": F, "noise": {"delta": D, "seed": S} | null},
///                 "entries": [{"path": P, "mask": M?, "split": "train"|"val"|"test"}]}
/// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
    static constexpr int kVersion = 1;
    std::vector<ManifestEntry> entries;
    Degradation degradation;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& p) const;
};

DatasetManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const DatasetManifest& m);

/// Largest top-left crop whose sides are multiples of `factor`.
Image<double> crop_to_multiple(const Image<double>& img, int factor);

/// LR input for a ground-truth map: bicubic downsample by `factor`, then optional noise.
Image<double> degrade(const Image<double>& gt, const Degradation& deg, std::uint64_t noise_seed);

struct Patch {
    std::size_t source = 0;
    Eigen::Index y = 0; // HR offsets
    Eigen::Index x = 0;
    Image<double> lr;
    std::vector<Image<double>> targets; // per stage, coarsest first; last is the HR patch
};

struct PatchSet {
    std::vector<Patch> patches;
    std::size_t skipped_small = 0;
    std::size_t dropped_flat = 0;
};

struct PatchOptions {
    std::vector<int> stage_factors{2};
    Eigen::Index patch_size = 32;
    Eigen::Index stride = 32;
    std::uint64_t seed = 0;
    double flat_threshold = 1e-9;
};

/// Regular patch grid over each ground-truth image. The whole image is
/// degraded first and patches are cropped at aligned offsets, so every LR
/// patch is exactly the recorded degradation. Flat HR patches are dropped.
PatchSet build_patchset(const std::vector<Image<double>>& ground_truth, const Degradation& deg,
                        const PatchOptions& opt, const std::vector<std::optional<Image<double>>>& masks = {});

/// Loads the entries of `split` (empty = all) and builds their patch set.
PatchSet build_patchset(const DatasetManifest& manifest, const PatchOptions& opt, const std::string& split = "train");

/// Per-image noise seed derived from a base seed and the image index.
std::uint64_t image_seed(std::uint64_t base, std::size_t index);

/// Piecewise-constant depth map: a background plus random axis-aligned
/// rectangles, all values uniform in [lo, hi].
Image<double> synthetic_rectangles(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, int min_rects = 3,
                                   int max_rects = 8, double lo = 10.0, double hi = 255.0);

} // namespace dsr
