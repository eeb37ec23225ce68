#include "dsr/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dsr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Minimal tokenizer for Netpbm-style ASCII headers.
class HeaderReader {
public:
    HeaderReader(std::string_view bytes, const std::string& name)
        : bytes_(bytes)
        , name_(name)
    {
    }

    std::string token()
    {
        skip_space_and_comments();
        const std::size_t start = pos_;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            ++pos_;
        }
        if (start == pos_) {
            throw DataError(name_ + ": truncated header");
        }
        return std::string(bytes_.substr(start, pos_ - start));
    }

    long long integer()
    {
        const std::string t = token();
        try {
            std::size_t used = 0;
            const long long v = std::stoll(t, &used);
            if (used != t.size()) {
                throw DataError(name_ + ": malformed header field '" + t + "'");
            }
            return v;
        } catch (const std::logic_error&) {
            throw DataError(name_ + ": malformed header field '" + t + "'");
        }
    }

    double real()
    {
        const std::string t = token();
        try {
            std::size_t used = 0;
            const double v = std::stod(t, &used);
            if (used != t.size()) {
                throw DataError(name_ + ": malformed header field '" + t + "'");
            }
            return v;
        } catch (const std::logic_error&) {
            throw DataError(name_ + ": malformed header field '" + t + "'");
        }
    }

    /// Consumes the single whitespace byte that terminates the header.
    std::size_t payload_start()
    {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            throw DataError(name_ + ": truncated header");
        }
        return pos_ + 1;
    }

private:
    void skip_space_and_comments()
    {
        while (pos_ < bytes_.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
                    ++pos_;
                }
            } else {
                break;
            }
        }
    }

    std::string_view bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

ValueRange data_range(const Image<double>& m)
{
    if (m.size() == 0) {
        return {};
    }
    return {m.minCoeff(), m.maxCoeff()};
}

DepthFile decode_pgm(std::string_view bytes, const std::string& name)
{
    HeaderReader h(bytes, name);
    h.token(); // magic
    const long long w = h.integer();
    const long long ht = h.integer();
    const long long maxval = h.integer();
    if (w <= 0 || ht <= 0) {
        throw DataError(name + ": invalid PGM dimensions");
    }
    if (maxval <= 0 || maxval > 65535) {
        throw DataError(name + ": invalid PGM maxval " + std::to_string(maxval));
    }
    const std::size_t start = h.payload_start();
    const std::size_t bps = maxval < 256 ? 1 : 2;
    const std::size_t need = static_cast<std::size_t>(w * ht) * bps;
    if (bytes.size() - start < need) {
        throw DataError(name + ": truncated PGM payload");
    }
    DepthFile f;
    f.bit_depth = bps == 1 ? 8 : 16;
    f.range = {0.0, static_cast<double>(maxval)};
    f.values.resize(ht, w);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start);
    for (Eigen::Index i = 0; i < f.values.size(); ++i) {
        const unsigned v = bps == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
        f.values.data()[i] = static_cast<double>(v);
    }
    return f;
}

DepthFile decode_pfm(std::string_view bytes, const std::string& name)
{
    HeaderReader h(bytes, name);
    h.token(); // magic
    const long long w = h.integer();
    const long long ht = h.integer();
    const double scale = h.real();
    if (w <= 0 || ht <= 0) {
        throw DataError(name + ": invalid PFM dimensions");
    }
    if (scale == 0.0) {
        throw DataError(name + ": PFM scale must be non-zero");
    }
    const bool little = scale < 0.0;
    const std::size_t start = h.payload_start();
    const std::size_t need = static_cast<std::size_t>(w * ht) * 4;
    if (bytes.size() - start < need) {
        throw DataError(name + ": truncated PFM payload");
    }
    DepthFile f;
    f.bit_depth = 32;
    f.values.resize(ht, w);
    const char* p = bytes.data() + start;
    for (long long row = 0; row < ht; ++row) {
        // PFM stores rows bottom to top.
        const long long y = ht - 1 - row;
        for (long long x = 0; x < w; ++x) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, p + 4 * (row * w + x), 4);
            if ((std::endian::native == std::endian::little) != little) {
                bits = __builtin_bswap32(bits);
            }
            f.values(y, x) = static_cast<double>(std::bit_cast<float>(bits));
        }
    }
    f.range = data_range(f.values);
    return f;
}

} // namespace

DepthFile decode_depth(std::string_view bytes, const std::string& name)
{
    if (bytes.size() < 2) {
        throw DataError(name + ": file too short");
    }
    const std::string_view magic = bytes.substr(0, 2);
    if (magic == "P5") {
        return decode_pgm(bytes, name);
    }
    if (magic == "Pf") {
        return decode_pfm(bytes, name);
    }
    if (magic == "P2") {
        throw DataError(name + ": ASCII PGM (P2) is not supported; use binary P5");
    }
    if (magic == "PF") {
        throw DataError(name + ": colour PFM (PF) is not supported; use grayscale Pf");
    }
    throw DataError(name + ": unsupported format (magic '" + std::string(magic) + "')");
}

std::string encode_depth(const Image<double>& map, DepthFormat format)
{
    require(map.size() > 0, "encode_depth: empty map");
    std::ostringstream os;
    if (format == DepthFormat::Pfm) {
        os << "Pf\n" << map.cols() << ' ' << map.rows() << "\n-1.0\n";
        std::string payload(static_cast<std::size_t>(map.size()) * 4, '\0');
        for (Eigen::Index row = 0; row < map.rows(); ++row) {
            const Eigen::Index y = map.rows() - 1 - row;
            for (Eigen::Index x = 0; x < map.cols(); ++x) {
                auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map(y, x)));
                if constexpr (std::endian::native != std::endian::little) {
                    bits = __builtin_bswap32(bits);
                }
                std::memcpy(payload.data() + 4 * (row * map.cols() + x), &bits, 4);
            }
        }
        os << payload;
        return os.str();
    }
    const int maxval = format == DepthFormat::Pgm8 ? 255 : 65535;
    os << "P5\n" << map.cols() << ' ' << map.rows() << '\n' << maxval << '\n';
    std::string payload;
    payload.reserve(static_cast<std::size_t>(map.size()) * (maxval == 255 ? 1 : 2));
    for (Eigen::Index i = 0; i < map.size(); ++i) {
        const double v = map.data()[i];
        if (!std::isfinite(v)) {
            throw DataError("encode_depth: non-finite value cannot be stored as PGM");
        }
        const auto q = static_cast<unsigned>(std::clamp(std::round(v), 0.0, static_cast<double>(maxval)));
        if (maxval == 255) {
            payload.push_back(static_cast<char>(q));
        } else {
            payload.push_back(static_cast<char>(q >> 8));
            payload.push_back(static_cast<char>(q & 0xFF));
        }
    }
    os << payload;
    return os.str();
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw DataError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

DepthFile read_depth(const fs::path& path)
{
    return decode_depth(read_file(path), path.string());
}

void write_depth(const fs::path& path, const Image<double>& map, DepthFormat format)
{
    write_file_atomic(path, encode_depth(map, format));
}

void write_depth(const fs::path& path, const Image<double>& map)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pfm") {
        write_depth(path, map, DepthFormat::Pfm);
    } else if (ext == ".pgm") {
        write_depth(path, map, map.size() > 0 && map.maxCoeff() > 255.0 ? DepthFormat::Pgm16 : DepthFormat::Pgm8);
    } else {
        throw DataError(path.string() + ": unknown depth file extension (use .pgm or .pfm)");
    }
}

fs::path DatasetManifest::resolve(const std::string& p) const
{
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

DatasetManifest parse_manifest(std::string_view json_text, const fs::path& base_dir)
{
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest: invalid JSON: ") + e.what());
    }
    try {
        if (doc.at("version").get<int>() != DatasetManifest::kVersion) {
            throw DataError("manifest: unsupported version " + doc.at("version").dump());
        }
        DatasetManifest m;
        m.base_dir = base_dir;
        const auto& deg = doc.at("degradation");
        m.degradation.factor = deg.at("factor").get<int>();
        if (m.degradation.factor < 2) {
            throw DataError("manifest: degradation factor must be at least 2");
        }
        if (deg.contains("noise") && !deg.at("noise").is_null()) {
            NoiseSpec n;
            n.delta = deg.at("noise").value("delta", 651.0);
            n.seed = deg.at("noise").value("seed", std::uint64_t{0});
            if (!(n.delta > 0)) {
                throw DataError("manifest: noise delta must be positive");
            }
            m.degradation.noise = n;
        }
        std::set<std::string> seen;
        for (const auto& e : doc.at("entries")) {
            ManifestEntry entry;
            entry.path = e.at("path").get<std::string>();
            if (e.contains("mask") && !e.at("mask").is_null()) {
                entry.mask = e.at("mask").get<std::string>();
            }
            entry.split = e.value("split", std::string("train"));
            if (entry.split != "train" && entry.split != "val" && entry.split != "test") {
                throw DataError("manifest: unknown split '" + entry.split + "'");
            }
            if (!seen.insert(entry.path).second) {
                throw DataError("manifest: duplicate entry " + entry.path);
            }
            m.entries.push_back(std::move(entry));
        }
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
}

DatasetManifest load_manifest(const fs::path& path)
{
    return parse_manifest(read_file(path), path.parent_path());
}

std::string manifest_to_json(const DatasetManifest& m)
{
    json doc;
    doc["version"] = DatasetManifest::kVersion;
    json deg;
    deg["factor"] = m.degradation.factor;
    if (m.degradation.noise) {
        deg["noise"] = {{"delta", m.degradation.noise->delta}, {"seed", m.degradation.noise->seed}};
    } else {
        deg["noise"] = nullptr;
    }
    doc["degradation"] = deg;
    doc["entries"] = json::array();
    for (const auto& e : m.entries) {
        json j{{"path", e.path}, {"split", e.split}};
        if (e.mask) {
            j["mask"] = *e.mask;
        }
        doc["entries"].push_back(j);
    }
    return doc.dump(2) + "\n";
}

Image<double> crop_to_multiple(const Image<double>& img, int factor)
{
    require(factor >= 1, "crop_to_multiple: factor must be positive");
    const Eigen::Index h = img.rows() - img.rows() % factor;
    const Eigen::Index w = img.cols() - img.cols() % factor;
    if (h == 0 || w == 0) {
        throw ContractError("crop_to_multiple: image smaller than factor");
    }
    return img.topLeftCorner(h, w);
}

std::uint64_t image_seed(std::uint64_t base, std::size_t index)
{
    // splitmix64 finaliser
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Image<double> degrade(const Image<double>& gt, const Degradation& deg, std::uint64_t noise_seed)
{
    Image<double> lr = downsample(gt, deg.factor);
    if (deg.noise) {
        NoiseSpec spec = *deg.noise;
        spec.seed = noise_seed;
        lr = add_depth_noise(lr, spec);
    }
    return lr;
}

PatchSet build_patchset(const std::vector<Image<double>>& ground_truth, const Degradation& deg,
                        const PatchOptions& opt, const std::vector<std::optional<Image<double>>>& masks)
{
    int total = 1;
    for (int f : opt.stage_factors) {
        total *= f;
    }
    require(total == deg.factor, "build_patchset: stage factors do not multiply to the degradation factor");
    require(opt.patch_size > 0 && opt.patch_size % total == 0, "build_patchset: patch size must be divisible by "
                                                                   + std::to_string(total));
    require(opt.stride > 0 && opt.stride % total == 0, "build_patchset: stride must be divisible by "
                                                           + std::to_string(total));
    require(masks.empty() || masks.size() == ground_truth.size(), "build_patchset: one mask slot per image");

    // Size of each stage target relative to the HR patch, as (num, den) = (prod of factors up to k, total).
    std::vector<int> level_num;
    int acc = 1;
    for (int f : opt.stage_factors) {
        acc *= f;
        level_num.push_back(acc);
    }

    const std::uint64_t noise_base = opt.seed ^ (deg.noise ? deg.noise->seed : 0);
    PatchSet set;
    for (std::size_t idx = 0; idx < ground_truth.size(); ++idx) {
        const Image<double> gt = crop_to_multiple(ground_truth[idx], total);
        if (gt.rows() < opt.patch_size || gt.cols() < opt.patch_size) {
            ++set.skipped_small;
            continue;
        }
        const Image<double> lr = degrade(gt, deg, image_seed(noise_base, idx));
        const auto pyramid = make_supervision_pyramid(gt, opt.stage_factors);
        const Image<double>* mask = (!masks.empty() && masks[idx]) ? &*masks[idx] : nullptr;
        for (Eigen::Index y = 0; y + opt.patch_size <= gt.rows(); y += opt.stride) {
            for (Eigen::Index x = 0; x + opt.patch_size <= gt.cols(); x += opt.stride) {
                const auto hr = gt.block(y, x, opt.patch_size, opt.patch_size);
                if (hr.maxCoeff() - hr.minCoeff() < opt.flat_threshold) {
                    ++set.dropped_flat;
                    continue;
                }
                if (mask != nullptr && (mask->block(y, x, opt.patch_size, opt.patch_size).array() == 0.0).any()) {
                    continue;
                }
                Patch p;
                p.source = idx;
                p.y = y;
                p.x = x;
                const Eigen::Index lp = opt.patch_size / total;
                p.lr = lr.block(y / total, x / total, lp, lp);
                for (std::size_t k = 0; k < pyramid.size(); ++k) {
                    const Eigen::Index s = lp * level_num[k];
                    p.targets.emplace_back(pyramid[k].block(y / total * level_num[k], x / total * level_num[k], s, s));
                }
                set.patches.push_back(std::move(p));
            }
        }
    }
    return set;
}

PatchSet build_patchset(const DatasetManifest& manifest, const PatchOptions& opt, const std::string& split)
{
    std::vector<Image<double>> images;
    std::vector<std::optional<Image<double>>> masks;
    for (const auto& e : manifest.entries) {
        if (!split.empty() && e.split != split) {
            continue;
        }
        images.push_back(read_depth(manifest.resolve(e.path)).values);
        if (e.mask) {
            masks.emplace_back(read_depth(manifest.resolve(*e.mask)).values);
        } else {
            masks.emplace_back(std::nullopt);
        }
    }
    return build_patchset(images, manifest.degradation, opt, masks);
}

Image<double> synthetic_rectangles(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, int min_rects,
                                   int max_rects, double lo, double hi)
{
    require(rows > 0 && cols > 0 && min_rects >= 0 && max_rects >= min_rects && lo < hi,
            "synthetic_rectangles: invalid arguments");
    std::uniform_real_distribution<double> value(lo, hi);
    std::uniform_int_distribution<int> count(min_rects, max_rects);
    std::uniform_int_distribution<Eigen::Index> ry(0, rows - 1);
    std::uniform_int_distribution<Eigen::Index> rx(0, cols - 1);
    Image<double> img = Image<double>::Constant(rows, cols, value(rng));
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
        Eigen::Index y0 = ry(rng), y1 = ry(rng), x0 = rx(rng), x1 = rx(rng);
        if (y0 > y1) {
            std::swap(y0, y1);
        }
        if (x0 > x1) {
            std::swap(x0, x1);
        }
        img.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).setConstant(value(rng));
    }
    return img;
}

} // namespace dsr
