#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dsr/metrics.hpp"

using namespace dsr;

namespace {

Image<double> random_map(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols)
{
    std::uniform_real_distribution<double> u(0.0, 255.0);
    Image<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = u(rng);
    }
    return m;
}

} // namespace

TEST_CASE("rmse examples")
{
    Image<double> a = Image<double>::Zero(1, 2), b(1, 2);
    b << 3, 4;
    CHECK(rmse(a, a) == 0.0);
    CHECK(rmse(a, b) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
    CHECK_THROWS_AS(rmse(a, Image<double>(Image<double>::Zero(2, 1))), ContractError);
}

TEST_CASE("rmse: translation invariance and triangle inequality")
{
    std::mt19937_64 rng(1);
    for (int k = 0; k < 50; ++k) {
        const auto a = random_map(rng, 7, 9);
        const auto b = random_map(rng, 7, 9);
        const auto c = random_map(rng, 7, 9);
        const Image<double> as = a.array() + 13.0;
        const Image<double> bs = b.array() + 13.0;
        CHECK(rmse(as, bs) == doctest::Approx(rmse(a, b)).epsilon(1e-12));
        CHECK(rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12);
    }
}

TEST_CASE("ssim: identity, symmetry, offset and size guard")
{
    std::mt19937_64 rng(2);
    const auto x = random_map(rng, 32, 32);
    const auto y = random_map(rng, 32, 32);
    CHECK(ssim(x, x) == 1.0);
    CHECK(ssim(x, y) == ssim(y, x));
    CHECK(ssim(x, y) <= 1.0);
    const Image<double> shifted = x.array() + 200.0;
    CHECK(ssim(x, shifted) < 1.0);
    CHECK_THROWS_AS(ssim(Image<double>(Image<double>::Zero(10, 20)), Image<double>(Image<double>::Zero(10, 20))),
                    ContractError);
    CHECK_THROWS_AS(ssim(x, x, 0.0), ContractError);
}

TEST_CASE("bad pixel percent")
{
    Image<double> gt = Image<double>::Zero(4, 4);
    Image<double> pred = gt;
    pred.topRows(2).setConstant(2.0);
    CHECK(bad_pixel_percent(gt, gt) == 0.0);
    CHECK(bad_pixel_percent(pred, gt, 1.0) == 50.0);
    CHECK(bad_pixel_percent(pred, gt, std::numeric_limits<double>::infinity()) == 0.0);
    CHECK(bad_pixel_percent(pred, gt, 2.0) == 0.0);
}

TEST_CASE("metrics are invariant to transposing both inputs")
{
    std::mt19937_64 rng(3);
    const auto a = random_map(rng, 20, 15);
    const auto b = random_map(rng, 20, 15);
    const Image<double> at = a.transpose();
    const Image<double> bt = b.transpose();
    CHECK(rmse(at, bt) == doctest::Approx(rmse(a, b)).epsilon(1e-14));
    CHECK(ssim(at, bt) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
    CHECK(bad_pixel_percent(at, bt) == bad_pixel_percent(a, b));
}

TEST_CASE("evaluate: crop and quantize options, CSV layout")
{
    std::mt19937_64 rng(4);
    const auto gt = random_map(rng, 20, 20);
    Image<double> pred = gt;
    pred.row(0).array() += 50.0;
    EvalOptions opt;
    CHECK(evaluate("a", pred, gt, opt).rmse > 0);
    opt.crop = 1;
    const auto row = evaluate("a", pred, gt, opt);
    CHECK(row.rmse == 0.0);
    CHECK(row.ssim == 1.0);
    CHECK(row.bad_pct == 0.0);

    Image<double> q(1, 3);
    q << -4.2, 17.5, 300.0;
    const auto qq = quantize_8bit(q);
    CHECK(qq(0, 0) == 0.0);
    CHECK(qq(0, 1) == 18.0);
    CHECK(qq(0, 2) == 255.0);

    std::ostringstream os;
    write_eval_csv(os, {EvalRow{"img1", 1.5, 0.9, 2.0}});
    const std::string csv = os.str();
    CHECK(csv.rfind("id,rmse,ssim,bad_pct\n", 0) == 0);
    CHECK(csv.find("img1,") != std::string::npos);
}
