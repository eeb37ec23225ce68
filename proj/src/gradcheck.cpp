#include "dsr/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "dsr/training.hpp"

namespace dsr {

namespace {

using T = Tensor<double>;
using Loss = std::function<double()>;

constexpr double kStep = 1e-6;

void fill_normal(std::span<double> v, std::mt19937_64& rng, double stddev = 1.0)
{
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& x : v) {
        x = d(rng);
    }
}

/// Central differences of `loss` w.r.t. every element of `params`.
std::vector<double> numeric_gradient(const ParamList<double>& params, const Loss& loss)
{
    std::vector<double> g;
    for (auto p : params) {
        for (auto& x : p) {
            const double saved = x;
            x = saved + kStep;
            const double up = loss();
            x = saved - kStep;
            const double down = loss();
            x = saved;
            g.push_back((up - down) / (2.0 * kStep));
        }
    }
    return g;
}

std::vector<double> flatten(const ParamList<double>& grads)
{
    std::vector<double> g;
    for (auto s : grads) {
        g.insert(g.end(), s.begin(), s.end());
    }
    return g;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& n)
{
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    return std::sqrt(diff) / denom;
}

double conv_case(std::mt19937_64& rng, Eigen::Index in_ch, Eigen::Index out_ch, Eigen::Index k, bool relu,
                 Eigen::Index batch, Eigen::Index size)
{
    ConvLayer<double> layer(in_ch, out_ch, k, relu);
    fill_normal(layer.weights.data(), rng, 0.5);
    fill_normal(std::span(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())), rng, 0.5);
    T input(batch, in_ch, size, size);
    fill_normal(input.data(), rng);
    T target(batch, out_ch, size, size);
    fill_normal(target.data(), rng);

    ConvActivation<double> act;
    const T out = conv2d_forward(input, layer, &act);
    const auto l = mse_loss(out, target);
    auto g = conv2d_backward(act, layer, l.grad);

    ParamList<double> params{input.data(), layer.weights.data(),
                             std::span(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()))};
    const auto numeric = numeric_gradient(params, [&] { return mse_loss(conv2d_forward(input, layer), target).loss; });
    const auto analytic = flatten(
        {g.input.data(), g.weights.data(), std::span(g.bias.data(), static_cast<std::size_t>(g.bias.size()))});
    return relative_error(analytic, numeric);
}

double mse_case(std::mt19937_64& rng)
{
    T pred(1, 1, 3, 3), target(1, 1, 3, 3);
    fill_normal(pred.data(), rng);
    fill_normal(target.data(), rng);
    auto l = mse_loss(pred, target);
    const auto numeric = numeric_gradient({pred.data()}, [&] { return mse_loss(pred, target).loss; });
    return relative_error(flatten({l.grad.data()}), numeric);
}

double unit_case(std::mt19937_64& rng)
{
    DcnnUnit<double> unit(UnitConfig{2, 3, 3, 1, true});
    unit.initialize(rng);
    for (auto& l : unit.layers) {
        fill_normal(std::span(l.bias.data(), static_cast<std::size_t>(l.bias.size())), rng, 0.3);
    }
    T input(1, 1, 4, 4), target(1, 1, 4, 4);
    fill_normal(input.data(), rng);
    fill_normal(target.data(), rng);

    UnitTape<double> tape;
    const auto l = mse_loss(dcnn_unit_forward(input, unit, &tape), target);
    DcnnUnit<double> grads = unit;
    for (auto& layer : grads.layers) {
        layer.weights.set_zero();
        layer.bias.setZero();
    }
    T g_in = dcnn_unit_backward(unit, tape, l.grad, grads);

    ParamList<double> params{input.data()};
    ParamList<double> analytic{g_in.data()};
    for (std::size_t i = 0; i < unit.layers.size(); ++i) {
        auto& p = unit.layers[i];
        auto& g = grads.layers[i];
        params.emplace_back(p.weights.data());
        params.emplace_back(p.bias.data(), static_cast<std::size_t>(p.bias.size()));
        analytic.emplace_back(g.weights.data());
        analytic.emplace_back(g.bias.data(), static_cast<std::size_t>(g.bias.size()));
    }
    const auto numeric = numeric_gradient(params, [&] { return mse_loss(dcnn_unit_forward(input, unit), target).loss; });
    return relative_error(flatten(analytic), numeric);
}

CascadeModel<double> random_model(std::mt19937_64& rng, std::vector<int> factors, bool msf)
{
    ModelConfig cfg;
    cfg.stage_factors = std::move(factors);
    cfg.unit = UnitConfig{2, 2, 3, 1, true};
    cfg.msf = msf;
    cfg.msf_unit = UnitConfig{2, 2, 5, 1, false};
    CascadeModel<double> m(cfg);
    m.initialize(rng);
    const auto randomize_biases = [&](DcnnUnit<double>& u) {
        for (auto& l : u.layers) {
            fill_normal(std::span(l.bias.data(), static_cast<std::size_t>(l.bias.size())), rng, 0.3);
        }
    };
    for (auto& s : m.stages) {
        for (auto& u : s.units) {
            randomize_biases(u);
        }
    }
    if (m.msf) {
        randomize_biases(*m.msf);
    }
    return m;
}

double cascade_case(std::mt19937_64& rng, std::vector<int> factors, bool msf, Eigen::Index size)
{
    CascadeModel<double> model = random_model(rng, factors, msf);
    T input(2, 1, size, size);
    fill_normal(input.data(), rng);
    std::vector<T> targets;
    Eigen::Index s = size;
    for (int f : factors) {
        s *= f;
        T t(2, 1, s, s);
        fill_normal(t.data(), rng);
        targets.push_back(std::move(t));
    }
    auto bg = batch_gradient(model, input, targets, 1.0);
    const auto loss = [&] {
        const auto outs = cascade_forward(input, model);
        double total = deep_supervised_loss(outs, targets).loss;
        if (model.msf) {
            total += mse_loss(msf_forward(outs, model), targets.back()).loss;
        }
        return total;
    };
    const auto numeric = numeric_gradient(model.parameters(), loss);
    return relative_error(flatten(bg.grads.parameters()), numeric);
}

} // namespace

bool GradcheckReport::passed() const
{
    return !cases.empty()
        && std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.passed; });
}

double GradcheckReport::worst() const
{
    double w = 0.0;
    for (const auto& c : cases) {
        w = std::max(w, c.rel_error);
    }
    return w;
}

GradcheckReport run_gradcheck(std::uint64_t base_seed, int seeds, double tolerance)
{
    GradcheckReport report;
    report.tolerance = tolerance;
    const auto add = [&](const std::string& name, std::uint64_t seed, double err) {
        report.cases.push_back({name, seed, err, err < tolerance});
    };
    for (int i = 0; i < seeds; ++i) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
        std::mt19937_64 rng(seed);
        add("conv3x3_relu", seed, conv_case(rng, 2, 3, 3, true, 1, 5));
        add("conv5x5_linear", seed, conv_case(rng, 1, 2, 5, false, 2, 4));
        add("mse", seed, mse_case(rng));
        add("unit_2layer", seed, unit_case(rng));
        add("stage_r2", seed, cascade_case(rng, {2}, false, 3));
        add("cascade_2stage", seed, cascade_case(rng, {2, 2}, false, 4));
        add("cascade_2stage_msf", seed, cascade_case(rng, {2, 2}, true, 4));
    }
    return report;
}

} // namespace dsr
