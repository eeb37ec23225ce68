// dsr: depth-map super-resolution command-line driver.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "dsr/config.hpp"
#include "dsr/dataio.hpp"
#include "dsr/dfs.hpp"
#include "dsr/gradcheck.hpp"
#include "dsr/metrics.hpp"
#include "dsr/model_io.hpp"
#include "dsr/training.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Thrown for inconsistent flag combinations detected after parsing.
struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_snapshot(const fs::path& output, const std::string& command, const dsr::RunConfig& cfg)
{
    std::string text = "# dsr " + command + " effective configuration\n" + cfg.snapshot();
    dsr::write_file_atomic(output.string() + ".config", text);
}

std::string num(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------- degrade

struct DegradeArgs {
    std::string in, out;
    int factor = 2;
    std::optional<double> noise_delta;
    std::uint64_t seed = 0;
};

int run_degrade(const DegradeArgs& a)
{
    dsr::RunConfig cfg({{"in", a.in},
                        {"out", a.out},
                        {"factor", std::to_string(a.factor)},
                        {"noise_delta", a.noise_delta ? num(*a.noise_delta) : "none"},
                        {"seed", std::to_string(a.seed)}});
    const auto gt = dsr::read_depth(a.in);
    dsr::Degradation deg{a.factor, std::nullopt};
    if (a.noise_delta) {
        deg.noise = dsr::NoiseSpec{*a.noise_delta, a.seed};
    }
    const auto lr = dsr::degrade(gt.values, deg, a.seed);
    dsr::write_depth(a.out, lr);
    write_snapshot(a.out, "degrade", cfg);
    std::cout << a.in << " (" << gt.values.rows() << "x" << gt.values.cols() << ") -> " << a.out << " ("
              << lr.rows() << "x" << lr.cols() << ")\n";
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string manifest, config, out_model;
    int factor = 0;
    std::vector<std::string> overrides;
};

dsr::RunConfig train_defaults()
{
    return dsr::RunConfig({
        {"factor", "2"},
        {"split", "train"},
        {"epochs", "40"},
        {"batch_size", "16"},
        {"patch_size", "32"},
        {"stride", "16"},
        {"layers", "10"},
        {"channels", "64"},
        {"msf", "false"},
        {"msf_layers", "10"},
        {"msf_channels", "64"},
        {"seed", "1"},
        {"lr_initial", "0.1"},
        {"lr_levels", "4"},
        {"lr_gamma", "0.1"},
        {"warm_lr_initial", "0.01"},
        {"warm_lr_levels", "3"},
        {"momentum", "0.9"},
        {"clip", "0.01"},
        {"value_scale", "0.00390625"},
        {"precision", "64"},
        {"init_model", ""},
    });
}

template <typename Scalar>
dsr::TrainResult train_in(dsr::CascadeModel<double>& model, const dsr::PatchSet& patches, const dsr::TrainConfig& tc)
{
    std::vector<dsr::TrainingPair<Scalar>> data;
    data.reserve(patches.patches.size());
    for (const auto& p : patches.patches) {
        dsr::TrainingPair<Scalar> pair{p.lr.cast<Scalar>(), {}};
        for (const auto& t : p.targets) {
            pair.targets.push_back(t.cast<Scalar>());
        }
        data.push_back(std::move(pair));
    }
    const auto report = [](int epoch, double loss) {
        std::cout << "epoch " << epoch << " loss " << loss << std::endl;
    };
    if constexpr (std::is_same_v<Scalar, double>) {
        return dsr::train(model, data, tc, report);
    } else {
        auto m = model.cast<Scalar>();
        auto r = dsr::train(m, data, tc, report);
        model = m.template cast<double>();
        return r;
    }
}

int run_train(const TrainArgs& a)
{
    dsr::RunConfig cfg = train_defaults();
    if (!a.config.empty()) {
        cfg.merge_file(a.config);
    }
    if (a.factor != 0) {
        cfg.set("factor", std::to_string(a.factor));
    }
    for (const auto& kv : a.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw UsageFailure("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }

    const auto manifest = dsr::load_manifest(a.manifest);
    const int factor = static_cast<int>(cfg.get_int("factor"));
    if (manifest.degradation.factor != factor) {
        throw dsr::DataError("manifest degradation factor " + std::to_string(manifest.degradation.factor)
                             + " does not match --factor " + std::to_string(factor));
    }

    dsr::ModelConfig mc;
    mc.stage_factors = dsr::stage_factorization(factor);
    mc.unit = dsr::UnitConfig{static_cast<int>(cfg.get_int("layers")), static_cast<int>(cfg.get_int("channels")), 3,
                              1, true};
    mc.msf = cfg.get_bool("msf");
    mc.msf_unit = dsr::UnitConfig{static_cast<int>(cfg.get_int("msf_layers")),
                                  static_cast<int>(cfg.get_int("msf_channels")), 5, 1, false};
    mc.value_scale = cfg.get_double("value_scale");
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    auto model = dsr::make_model<double>(mc, seed);

    dsr::TrainConfig tc;
    tc.epochs = static_cast<int>(cfg.get_int("epochs"));
    tc.batch_size = static_cast<int>(cfg.get_int("batch_size"));
    tc.seed = seed;
    tc.momentum = cfg.get_double("momentum");
    tc.clip_threshold = cfg.get_double("clip");
    tc.schedule = {cfg.get_double("lr_initial"), static_cast<int>(cfg.get_int("lr_levels")), cfg.get_double("lr_gamma")};
    tc.warm_schedule = {cfg.get_double("warm_lr_initial"), static_cast<int>(cfg.get_int("warm_lr_levels")),
                        cfg.get_double("lr_gamma")};
    if (const std::string init = cfg.get("init_model"); !init.empty()) {
        dsr::warm_start_first_stage(model, dsr::load_model(init));
        tc.first_stage_warm = true;
    }

    dsr::PatchOptions po;
    po.stage_factors = mc.stage_factors;
    po.patch_size = cfg.get_int("patch_size");
    po.stride = cfg.get_int("stride");
    po.seed = seed;
    const auto patches = dsr::build_patchset(manifest, po, cfg.get("split"));
    std::cout << patches.patches.size() << " patches (" << patches.dropped_flat << " flat dropped, "
              << patches.skipped_small << " images too small)\n";
    if (patches.patches.empty()) {
        throw dsr::DataError("no training patches; check the manifest split and patch size");
    }

    const std::string precision = cfg.get("precision");
    dsr::TrainResult result;
    if (precision == "64") {
        result = train_in<double>(model, patches, tc);
    } else if (precision == "32") {
        result = train_in<float>(model, patches, tc);
    } else {
        throw dsr::DataError("precision must be 32 or 64");
    }

    dsr::save_model(a.out_model, model);
    std::ostringstream trace;
    trace << "epoch,loss\n";
    trace.precision(17);
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        trace << e << ',' << result.epoch_loss[e] << '\n';
    }
    dsr::write_file_atomic(a.out_model + ".loss.csv", trace.str());
    cfg.set("init_model", cfg.get("init_model"));
    std::string snapshot_extra = "# manifest = " + a.manifest + "\n";
    dsr::write_file_atomic(a.out_model + ".config", "# dsr train effective configuration\n" + snapshot_extra
                                                         + cfg.snapshot());
    std::cout << "saved " << a.out_model << '\n';
    return kOk;
}

// ---------------------------------------------------------------- sr

struct SrArgs {
    std::string model, in, out;
    bool msf = false;
    bool dfs = false;
    double lambda = 0.7;
};

int run_sr(const SrArgs& a)
{
    dsr::RunConfig cfg({{"model", a.model},
                        {"in", a.in},
                        {"out", a.out},
                        {"msf", a.msf ? "true" : "false"},
                        {"dfs", a.dfs ? "true" : "false"},
                        {"lambda", num(a.lambda)}});
    const auto model = dsr::load_model(a.model);
    if (a.msf && !model.msf) {
        throw UsageFailure("--msf requested but the model has no fusion unit");
    }
    const auto lr = dsr::read_depth(a.in);
    dsr::Image<double> hr = dsr::infer(lr.values, model, a.msf);
    if (a.dfs) {
        dsr::IrlsConfig ic;
        ic.lambda = a.lambda;
        hr = dsr::refine_output(hr, ic);
    }
    dsr::write_depth(a.out, hr);
    write_snapshot(a.out, "sr", cfg);
    std::cout << a.in << " -> " << a.out << " (" << hr.rows() << "x" << hr.cols() << ")\n";
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string pred_dir, gt_dir, csv;
    double dynamic_range = 255.0;
    double threshold = 1.0;
    int crop = 0;
    bool quantize = false;
};

bool is_depth_file(const fs::path& p)
{
    const auto ext = p.extension().string();
    return ext == ".pgm" || ext == ".pfm";
}

int run_eval(const EvalArgs& a)
{
    dsr::RunConfig cfg({{"pred_dir", a.pred_dir},
                        {"gt_dir", a.gt_dir},
                        {"csv", a.csv},
                        {"dynamic_range", num(a.dynamic_range)},
                        {"threshold", num(a.threshold)},
                        {"crop", std::to_string(a.crop)},
                        {"quantize", a.quantize ? "true" : "false"}});
    if (!fs::is_directory(a.gt_dir) || !fs::is_directory(a.pred_dir)) {
        throw dsr::DataError("eval: --pred-dir and --gt-dir must be directories");
    }
    std::vector<fs::path> gts;
    for (const auto& e : fs::directory_iterator(a.gt_dir)) {
        if (e.is_regular_file() && is_depth_file(e.path())) {
            gts.push_back(e.path());
        }
    }
    std::sort(gts.begin(), gts.end());
    if (gts.empty()) {
        throw dsr::DataError("eval: no .pgm/.pfm files in " + a.gt_dir);
    }
    dsr::EvalOptions opt{a.dynamic_range, a.threshold, a.crop, a.quantize};
    std::vector<dsr::EvalRow> rows;
    for (const auto& gt_path : gts) {
        fs::path pred_path;
        for (const char* ext : {".pfm", ".pgm"}) {
            const fs::path candidate = fs::path(a.pred_dir) / (gt_path.stem().string() + ext);
            if (fs::exists(candidate)) {
                pred_path = candidate;
                break;
            }
        }
        if (pred_path.empty()) {
            throw dsr::DataError("eval: no prediction for " + gt_path.filename().string());
        }
        const auto gt = dsr::read_depth(gt_path);
        const auto pred = dsr::read_depth(pred_path);
        rows.push_back(dsr::evaluate(gt_path.stem().string(), pred.values, gt.values, opt));
    }
    std::ostringstream os;
    dsr::write_eval_csv(os, rows);
    dsr::write_file_atomic(a.csv, os.str());
    write_snapshot(a.csv, "eval", cfg);
    std::cout << os.str();
    return kOk;
}

// ---------------------------------------------------------------- refine

struct RefineArgs {
    std::string in, out;
    double lambda = 0.7;
    double epsilon = 1e-6;
    int iters = 30;
};

int run_refine(const RefineArgs& a)
{
    dsr::RunConfig cfg({{"in", a.in},
                        {"out", a.out},
                        {"lambda", num(a.lambda)},
                        {"epsilon", num(a.epsilon)},
                        {"iters", std::to_string(a.iters)}});
    const auto in = dsr::read_depth(a.in);
    dsr::IrlsConfig ic;
    ic.lambda = a.lambda;
    ic.epsilon_guard = a.epsilon;
    ic.max_outer_iters = a.iters;
    const auto state = dsr::irls_refine(in.values, ic);
    dsr::write_depth(a.out, state.d);
    write_snapshot(a.out, "refine", cfg);
    std::cout << "energy " << state.energy.front() << " -> " << state.energy.back() << " in " << state.iterations
              << " iterations\n";
    return kOk;
}

// ---------------------------------------------------------------- gradcheck

int run_gradcheck(std::uint64_t seed, int seeds)
{
    const auto start = std::chrono::steady_clock::now();
    const auto report = dsr::run_gradcheck(seed, seeds);
    std::map<std::string, double> worst;
    for (const auto& c : report.cases) {
        worst[c.name] = std::max(worst[c.name], c.rel_error);
        if (!c.passed) {
            std::cout << "FAIL " << c.name << " seed " << c.seed << " rel_error " << c.rel_error << '\n';
        }
    }
    for (const auto& [name, err] : worst) {
        std::cout << (err < report.tolerance ? "ok   " : "FAIL ") << name << " max rel_error " << err << '\n';
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << report.cases.size() << " checks over " << seeds << " seeds in " << secs << " s: "
              << (report.passed() ? "PASS" : "FAIL") << '\n';
    return report.passed() ? kOk : kNumerical;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string out_dir;
    int count = 200;
    int size = 64;
    int factor = 2;
    std::uint64_t seed = 7;
    double test_fraction = 0.2;
    std::optional<double> noise_delta;
};

int run_synth(const SynthArgs& a)
{
    fs::create_directories(a.out_dir);
    std::mt19937_64 rng(a.seed);
    dsr::DatasetManifest m;
    m.degradation.factor = a.factor;
    if (a.noise_delta) {
        m.degradation.noise = dsr::NoiseSpec{*a.noise_delta, a.seed};
    }
    const int n_test = static_cast<int>(std::lround(a.count * a.test_fraction));
    for (int i = 0; i < a.count; ++i) {
        const auto img = dsr::synthetic_rectangles(a.size, a.size, rng);
        char name[32];
        std::snprintf(name, sizeof(name), "rect_%04d.pgm", i);
        dsr::write_depth(fs::path(a.out_dir) / name, img, dsr::DepthFormat::Pgm8);
        m.entries.push_back({name, std::nullopt, i < a.count - n_test ? "train" : "test"});
    }
    dsr::write_file_atomic(fs::path(a.out_dir) / "manifest.json", dsr::manifest_to_json(m));
    std::cout << "wrote " << a.count << " maps and manifest.json to " << a.out_dir << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Depth-map super-resolution toolkit"};
    app.require_subcommand(1);

    DegradeArgs da;
    auto* degrade = app.add_subcommand("degrade", "Bicubic-downsample a depth map, optionally adding depth noise");
    degrade->add_option("--in", da.in, "Ground-truth depth file (.pgm/.pfm)")->required();
    degrade->add_option("--factor", da.factor, "Down-sampling factor")->required()->check(CLI::Range(1, 64));
    degrade->add_option("--noise-delta", da.noise_delta, "Noise std is delta/d per pixel (651 for ToF simulation)");
    degrade->add_option("--seed", da.seed, "Noise seed");
    degrade->add_option("--out", da.out, "Output LR depth file")->required();

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a cascade on a dataset manifest");
    train->add_option("--manifest", ta.manifest, "Dataset manifest (JSON)")->required();
    train->add_option("--factor", ta.factor, "Total up-sampling factor (overrides config)");
    train->add_option("--config", ta.config, "Flat key = value config file");
    train->add_option("--set", ta.overrides, "Override a config key (key=value), repeatable");
    train->add_option("--out-model", ta.out_model, "Output model file")->required();

    SrArgs sa;
    auto* sr = app.add_subcommand("sr", "Super-resolve a depth map: cascade, optional fusion, optional DFS");
    sr->add_option("--model", sa.model, "Model file")->required();
    sr->add_option("--in", sa.in, "LR depth file")->required();
    sr->add_option("--out", sa.out, "Output depth file")->required();
    sr->add_flag("--msf", sa.msf, "Apply multi-scale fusion");
    sr->add_flag("--dfs", sa.dfs, "Apply TV refinement after fusion");
    sr->add_option("--lambda", sa.lambda, "TV weight for --dfs");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Compute RMSE/SSIM/bad-pixel CSV for matching files");
    eval->add_option("--pred-dir", ea.pred_dir, "Predictions")->required();
    eval->add_option("--gt-dir", ea.gt_dir, "Ground truth")->required();
    eval->add_option("--csv", ea.csv, "Output CSV")->required();
    eval->add_option("--dynamic-range", ea.dynamic_range, "SSIM dynamic range L");
    eval->add_option("--threshold", ea.threshold, "Bad-pixel threshold");
    eval->add_option("--crop", ea.crop, "Border pixels to exclude");
    eval->add_flag("--quantize", ea.quantize, "Round both maps to 8 bits first");

    RefineArgs ra;
    auto* refine = app.add_subcommand("refine", "TV refinement of a depth map by IRLS");
    refine->add_option("--in", ra.in, "Input depth file")->required();
    refine->add_option("--lambda", ra.lambda, "TV weight");
    refine->add_option("--epsilon", ra.epsilon, "Gradient guard");
    refine->add_option("--iters", ra.iters, "Maximum outer iterations");
    refine->add_option("--out", ra.out, "Output depth file")->required();

    std::uint64_t gc_seed = 1;
    int gc_seeds = 20;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
    gradcheck->add_option("--seed", gc_seed, "Base seed");
    gradcheck->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);

    SynthArgs ya;
    auto* synth = app.add_subcommand("synth", "Write a synthetic piecewise-constant dataset with a manifest");
    synth->add_option("--out-dir", ya.out_dir, "Output directory")->required();
    synth->add_option("--count", ya.count, "Number of maps");
    synth->add_option("--size", ya.size, "Map side length");
    synth->add_option("--factor", ya.factor, "Degradation factor recorded in the manifest");
    synth->add_option("--seed", ya.seed, "Generator seed");
    synth->add_option("--test-fraction", ya.test_fraction, "Fraction tagged as test split");
    synth->add_option("--noise-delta", ya.noise_delta, "Record depth noise in the manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*degrade) {
            return run_degrade(da);
        }
        if (*train) {
            return run_train(ta);
        }
        if (*sr) {
            return run_sr(sa);
        }
        if (*eval) {
            return run_eval(ea);
        }
        if (*refine) {
            return run_refine(ra);
        }
        if (*gradcheck) {
            return run_gradcheck(gc_seed, gc_seeds);
        }
        if (*synth) {
            return run_synth(ya);
        }
    } catch (const UsageFailure& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const dsr::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const dsr::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const dsr::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const dsr::ContractError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
