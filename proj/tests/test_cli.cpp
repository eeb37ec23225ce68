#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <sys/wait.h>

#include "doctest.h"
#include "dsr/dataio.hpp"
#include "dsr/dfs.hpp"
#include "dsr/model_io.hpp"
#include "dsr/reorg.hpp"

using namespace dsr;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir()
{
    static const fs::path dir = [] {
        const fs::path p = fs::temp_directory_path() / "dsr_test_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

int run(const std::string& args)
{
    const std::string cmd = std::string(DSR_CLI_PATH) + " " + args + " > " + (work_dir() / "stdout.txt").string()
                            + " 2> " + (work_dir() / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string p(const std::string& name)
{
    return (work_dir() / name).string();
}

Image<double> sample_map(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols)
{
    std::mt19937_64 rng(seed);
    return synthetic_rectangles(rows, cols, rng);
}

} // namespace

TEST_CASE("cli: degrade is deterministic and halves the size")
{
    write_depth(p("gt.pfm"), sample_map(1, 64, 64));
    CHECK(run("degrade --in " + p("gt.pfm") + " --factor 2 --noise-delta 651 --seed 4 --out " + p("lr1.pfm")) == 0);
    CHECK(run("degrade --in " + p("gt.pfm") + " --factor 2 --noise-delta 651 --seed 4 --out " + p("lr2.pfm")) == 0);
    CHECK(read_file(p("lr1.pfm")) == read_file(p("lr2.pfm")));
    const auto lr = read_depth(p("lr1.pfm"));
    CHECK(lr.values.rows() == 32);
    CHECK(lr.values.cols() == 32);
    CHECK(fs::exists(p("lr1.pfm.config")));
}

TEST_CASE("cli: sr with a zero-weight model is nearest-neighbour upsampling")
{
    ModelConfig cfg;
    cfg.stage_factors = {2, 2};
    cfg.unit = {2, 4, 3, 1, true};
    save_model(p("zero.dsrf"), CascadeModel<double>(cfg));
    const Image<double> lr = sample_map(2, 12, 10);
    write_depth(p("in.pfm"), lr);
    CHECK(run("sr --model " + p("zero.dsrf") + " --in " + p("in.pfm") + " --out " + p("sr.pfm")) == 0);
    const Image<float> expected = nearest_upsample(lr, 4).cast<float>();
    CHECK(read_depth(p("sr.pfm")).values == expected.cast<double>());
    CHECK(run("sr --model " + p("zero.dsrf") + " --in " + p("in.pfm") + " --msf --out " + p("sr2.pfm")) == 1);
}

TEST_CASE("cli: eval of identical directories reports zero error")
{
    fs::create_directories(p("pred"));
    fs::create_directories(p("gt"));
    for (int i = 0; i < 3; ++i) {
        const auto m = sample_map(10 + i, 20, 24);
        write_depth(p("pred/m" + std::to_string(i) + ".pfm"), m);
        write_depth(p("gt/m" + std::to_string(i) + ".pfm"), m);
    }
    REQUIRE(run("eval --pred-dir " + p("pred") + " --gt-dir " + p("gt") + " --csv " + p("eval.csv")) == 0);
    std::ifstream in(p("eval.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "id,rmse,ssim,bad_pct");
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.rfind("m", 0) != 0) {
            continue;
        }
        std::stringstream ss(line);
        std::string id, rmse, ssim, bad;
        std::getline(ss, id, ',');
        std::getline(ss, rmse, ',');
        std::getline(ss, ssim, ',');
        std::getline(ss, bad, ',');
        CHECK(std::stod(rmse) == 0.0);
        CHECK(std::stod(ssim) == 1.0);
        CHECK(std::stod(bad) == 0.0);
        ++rows;
    }
    CHECK(rows == 3);
}

TEST_CASE("cli: refine matches the library and lambda 0 is the identity")
{
    Image<double> m = sample_map(5, 16, 16);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd(0.0, 2.0);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<float>(m.data()[i] + nd(rng));
    }
    write_depth(p("noisy.pfm"), m);
    CHECK(run("refine --in " + p("noisy.pfm") + " --lambda 0 --out " + p("same.pfm")) == 0);
    CHECK((read_depth(p("same.pfm")).values - m).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(run("refine --in " + p("noisy.pfm") + " --out " + p("tv.pfm")) == 0);
    const Image<double> lib = refine_output(m, IrlsConfig{}).cast<float>().cast<double>();
    CHECK((read_depth(p("tv.pfm")).values - lib).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("cli: train, then sr, on a tiny synthetic set")
{
    REQUIRE(run("synth --out-dir " + p("data") + " --count 4 --size 32 --factor 2 --seed 3") == 0);
    REQUIRE(run("train --manifest " + p("data/manifest.json") + " --set epochs=2 --set layers=2 --set channels=4"
                + " --set batch_size=2 --out-model " + p("tiny.dsrf"))
            == 0);
    CHECK(fs::exists(p("tiny.dsrf.loss.csv")));
    CHECK(fs::exists(p("tiny.dsrf.config")));
    const auto model = load_model(p("tiny.dsrf"));
    CHECK(model.total_factor() == 2);
    CHECK(run("sr --model " + p("tiny.dsrf") + " --in " + p("in.pfm") + " --dfs --out " + p("tiny_sr.pfm")) == 0);
    CHECK(read_depth(p("tiny_sr.pfm")).values.rows() == 24);
}

TEST_CASE("cli: exit codes")
{
    CHECK(run("") == 1);
    CHECK(run("nonsense") == 1);
    CHECK(run("degrade --in " + p("gt.pfm")) == 1);
    CHECK(run("degrade --in " + p("missing.pfm") + " --factor 2 --out " + p("x.pfm")) == 2);
    write_file_atomic(p("bad.pgm"), "P2\n1 1\n255\n0\n");
    CHECK(run("refine --in " + p("bad.pgm") + " --out " + p("x.pfm")) == 2);
    CHECK(run("train --manifest " + p("data/manifest.json") + " --set bogus=1 --out-model " + p("x.dsrf")) == 2);
    CHECK(run("train --manifest " + p("data/manifest.json") + " --factor 4 --out-model " + p("x.dsrf")) == 2);
    CHECK(run("gradcheck --seeds 1") == 0);
}
