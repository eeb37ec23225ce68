#include <random>

#include "doctest.h"
#include "dsr/conv.hpp"
#include "dsr/optim.hpp"

using namespace dsr;

namespace {

Tensor<double> random_tensor(std::mt19937_64& rng, Shape s)
{
    std::normal_distribution<double> d(0.0, 1.0);
    Tensor<double> t(s);
    for (auto& v : t.data()) {
        v = d(rng);
    }
    return t;
}

ConvLayer<double> random_layer(std::mt19937_64& rng, Eigen::Index in, Eigen::Index out, Eigen::Index k, bool relu)
{
    ConvLayer<double> l(in, out, k, relu);
    l.initialize(rng);
    std::normal_distribution<double> d(0.0, 0.3);
    for (Eigen::Index o = 0; o < out; ++o) {
        l.bias(o) = d(rng);
    }
    return l;
}

// Zero-padded cross-correlation written as the textbook loop nest.
Tensor<double> conv_reference(const Tensor<double>& in, const ConvLayer<double>& l)
{
    const Eigen::Index k = l.kernel();
    const Eigen::Index pad = k / 2;
    Tensor<double> out(in.batch(), l.out_channels(), in.height(), in.width());
    for (Eigen::Index n = 0; n < in.batch(); ++n) {
        for (Eigen::Index o = 0; o < l.out_channels(); ++o) {
            for (Eigen::Index y = 0; y < in.height(); ++y) {
                for (Eigen::Index x = 0; x < in.width(); ++x) {
                    double s = l.bias(o);
                    for (Eigen::Index c = 0; c < in.channels(); ++c) {
                        for (Eigen::Index dy = 0; dy < k; ++dy) {
                            for (Eigen::Index dx = 0; dx < k; ++dx) {
                                const Eigen::Index yy = y + dy - pad;
                                const Eigen::Index xx = x + dx - pad;
                                if (yy >= 0 && yy < in.height() && xx >= 0 && xx < in.width()) {
                                    s += l.weights(o, c, dy, dx) * in(n, c, yy, xx);
                                }
                            }
                        }
                    }
                    out(n, o, y, x) = l.has_relu ? std::max(0.0, s) : s;
                }
            }
        }
    }
    return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b)
{
    return (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

} // namespace

TEST_CASE("tensor indexing is NCHW row-major")
{
    Tensor<double> t(2, 3, 4, 5);
    t(1, 2, 3, 4) = 7.0;
    CHECK(t.data()[t.size() - 1] == 7.0);
    t(0, 1, 2, 3) = 5.0;
    CHECK(t.data()[1 * 20 + 2 * 5 + 3] == 5.0);
    CHECK(t.plane(0, 1)(2, 3) == 5.0);
    CHECK(t.shape().str() == "(2, 3, 4, 5)");
}

TEST_CASE("conv: zero input isolates the bias")
{
    ConvLayer<double> l(1, 1, 3, true);
    std::mt19937_64 rng(1);
    l.initialize(rng);
    l.bias(0) = 0.5;
    const auto out = conv2d_forward(Tensor<double>(1, 1, 3, 3), l);
    for (double v : out.data()) {
        CHECK(v == 0.5);
    }
}

TEST_CASE("conv: identity kernel reproduces the input")
{
    std::mt19937_64 rng(2);
    for (Eigen::Index k : {3, 5}) {
        ConvLayer<double> l(1, 1, k, false);
        l.weights(0, 0, k / 2, k / 2) = 1.0;
        const auto in = random_tensor(rng, {2, 1, 4, 6});
        CHECK(conv2d_forward(in, l) == in);
    }
}

TEST_CASE("conv: matches the direct correlation loop")
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const bool relu = trial % 2 == 0;
        const Eigen::Index k = trial < 5 ? 3 : 5;
        const auto in = random_tensor(rng, {1 + trial % 2, 2, 5, 5});
        const auto l = random_layer(rng, 2, 3, k, relu);
        const auto out = conv2d_forward(in, l);
        CHECK(out.shape() == Shape{in.batch(), 3, 5, 5});
        CHECK(max_abs_diff(out, conv_reference(in, l)) < 1e-12);
    }
}

TEST_CASE("conv: channel mismatch is a contract error")
{
    ConvLayer<double> l(2, 1, 3, true);
    CHECK_THROWS_AS(conv2d_forward(Tensor<double>(1, 3, 4, 4), l), ContractError);
    CHECK_THROWS_AS(ConvLayer<double>(1, 1, 4, true), ContractError);
}

TEST_CASE("conv backward: missing forward record is a usage error")
{
    ConvLayer<double> l(1, 1, 3, true);
    CHECK_THROWS_AS(conv2d_backward(ConvActivation<double>{}, l, Tensor<double>(1, 1, 3, 3)), UsageError);
}

TEST_CASE("conv backward: zero upstream gradient gives zero gradients")
{
    std::mt19937_64 rng(4);
    const auto l = random_layer(rng, 2, 2, 3, true);
    ConvActivation<double> rec;
    const auto out = conv2d_forward(random_tensor(rng, {1, 2, 4, 4}), l, &rec);
    const auto g = conv2d_backward(rec, l, Tensor<double>(out.shape()));
    CHECK(g.input.flat().isZero(0));
    CHECK(g.weights.flat().isZero(0));
    CHECK(g.bias.isZero(0));
}

TEST_CASE("conv backward: linear layer bias gradient is the per-channel sum")
{
    std::mt19937_64 rng(5);
    const auto l = random_layer(rng, 1, 3, 5, false);
    ConvActivation<double> rec;
    const auto out = conv2d_forward(random_tensor(rng, {2, 1, 4, 4}), l, &rec);
    const auto go = random_tensor(rng, out.shape());
    const auto g = conv2d_backward(rec, l, go);
    for (Eigen::Index o = 0; o < 3; ++o) {
        double s = 0;
        for (Eigen::Index n = 0; n < 2; ++n) {
            s += go.plane(n, o).sum();
        }
        CHECK(g.bias(o) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("conv backward: matches central finite differences")
{
    std::mt19937_64 rng(6);
    const double h = 1e-6;
    for (bool relu : {true, false}) {
        auto l = random_layer(rng, 1, 1, 3, relu);
        auto in = random_tensor(rng, {1, 1, 4, 4});
        const auto probe = random_tensor(rng, {1, 1, 4, 4});
        const auto loss = [&] { return conv2d_forward(in, l).flat().dot(probe.flat()); };

        ConvActivation<double> rec;
        conv2d_forward(in, l, &rec);
        const auto g = conv2d_backward(rec, l, probe);

        Vector<double> num_in(in.size()), num_w(l.weights.size());
        for (Eigen::Index i = 0; i < in.size(); ++i) {
            const double v = in.data()[i];
            in.data()[i] = v + h;
            const double up = loss();
            in.data()[i] = v - h;
            const double dn = loss();
            in.data()[i] = v;
            num_in(i) = (up - dn) / (2 * h);
        }
        for (Eigen::Index i = 0; i < l.weights.size(); ++i) {
            const double v = l.weights.data()[i];
            l.weights.data()[i] = v + h;
            const double up = loss();
            l.weights.data()[i] = v - h;
            const double dn = loss();
            l.weights.data()[i] = v;
            num_w(i) = (up - dn) / (2 * h);
        }
        CHECK((g.input.flat() - num_in).norm() / num_in.norm() < 1e-6);
        CHECK((g.weights.flat() - num_w).norm() / num_w.norm() < 1e-6);
    }
}

TEST_CASE("conv: same padding preserves spatial size")
{
    std::mt19937_64 rng(7);
    for (Eigen::Index k : {3, 5}) {
        const auto l = random_layer(rng, 1, 4, k, true);
        CHECK(conv2d_forward(Tensor<double>(1, 1, 7, 3), l).shape() == Shape{1, 4, 7, 3});
    }
}

TEST_CASE("conv: forward is deterministic")
{
    std::mt19937_64 rng(8);
    const auto l = random_layer(rng, 3, 8, 3, true);
    const auto in = random_tensor(rng, {2, 3, 9, 9});
    CHECK(conv2d_forward(in, l) == conv2d_forward(in, l));
}

TEST_CASE("conv: non-finite output is a numerical error")
{
    ConvLayer<double> l(1, 1, 3, false);
    l.bias(0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(conv2d_forward(Tensor<double>(1, 1, 3, 3), l), NumericalError);
}

TEST_CASE("He initialisation has the expected spread")
{
    ConvLayer<double> l(64, 64, 3, true);
    std::mt19937_64 rng(9);
    l.initialize(rng);
    const auto w = l.weights.flat();
    const double mean = w.mean();
    const double sd = std::sqrt((w.array() - mean).square().mean());
    CHECK(std::abs(mean) < 0.002);
    CHECK(sd == doctest::Approx(std::sqrt(2.0 / (9 * 64))).epsilon(0.02));
    CHECK(l.bias.isZero(0));
}
