#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dsr/conv.hpp"
#include "dsr/optim.hpp"
#include "dsr/reorg.hpp"
#include "dsr/resample.hpp"

namespace dsr {

struct UnitConfig {
    int num_layers = 10;
    int channels = 64;
    int kernel = 3;
    int in_channels = 1;
    bool residual = true;

    bool operator==(const UnitConfig&) const = default;
};

/// A plain conv stack: in -> channels (ReLU) ... channels -> 1 (linear),
/// optionally adding input channel 0 to the result.
template <typename Scalar>
struct DcnnUnit {
    UnitConfig config;
    std::vector<ConvLayer<Scalar>> layers;

    DcnnUnit() = default;

    explicit DcnnUnit(const UnitConfig& cfg)
        : config(cfg)
    {
        require(cfg.num_layers >= 2, "DcnnUnit: at least two layers required");
        require(cfg.channels >= 1 && cfg.in_channels >= 1, "DcnnUnit: channel counts must be positive");
        layers.reserve(static_cast<std::size_t>(cfg.num_layers));
        for (int l = 0; l < cfg.num_layers; ++l) {
            const int in = l == 0 ? cfg.in_channels : cfg.channels;
            const bool last = l + 1 == cfg.num_layers;
            layers.emplace_back(in, last ? 1 : cfg.channels, cfg.kernel, !last);
        }
    }

    template <typename Rng>
    void initialize(Rng& rng)
    {
        for (auto& layer : layers) {
            layer.initialize(rng);
        }
    }

    template <typename Other>
    DcnnUnit<Other> cast() const
    {
        DcnnUnit<Other> out;
        out.config = config;
        for (const auto& l : layers) {
            out.layers.push_back(l.template cast<Other>());
        }
        return out;
    }

    bool operator==(const DcnnUnit&) const = default;
};

template <typename Scalar>
struct UnitTape {
    std::vector<ConvActivation<Scalar>> layers;
    Shape input_shape{};
};

template <typename Scalar>
Tensor<Scalar> dcnn_unit_forward(const Tensor<Scalar>& input, const DcnnUnit<Scalar>& unit,
                                 UnitTape<Scalar>* tape = nullptr)
{
    if (input.channels() != unit.config.in_channels) {
        throw ContractError("dcnn_unit_forward: input has " + std::to_string(input.channels())
                            + " channels, unit expects " + std::to_string(unit.config.in_channels));
    }
    if (tape != nullptr) {
        tape->layers.assign(unit.layers.size(), {});
        tape->input_shape = input.shape();
    }
    Tensor<Scalar> x = input;
    for (std::size_t l = 0; l < unit.layers.size(); ++l) {
        try {
            x = conv2d_forward(x, unit.layers[l], tape ? &tape->layers[l] : nullptr);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (layer " + std::to_string(l) + ")");
        }
    }
    if (unit.config.residual) {
        for (Eigen::Index n = 0; n < x.batch(); ++n) {
            x.plane(n, 0) += input.plane(n, 0);
        }
    }
    return x;
}

/// Accumulates parameter gradients into `grads` and returns dL/d(input).
template <typename Scalar>
Tensor<Scalar> dcnn_unit_backward(const DcnnUnit<Scalar>& unit, const UnitTape<Scalar>& tape,
                                  const Tensor<Scalar>& grad_out, DcnnUnit<Scalar>& grads)
{
    if (tape.layers.size() != unit.layers.size()) {
        throw UsageError("dcnn_unit_backward: tape does not belong to this unit");
    }
    Tensor<Scalar> g = grad_out;
    for (std::size_t l = unit.layers.size(); l-- > 0;) {
        auto lg = conv2d_backward(tape.layers[l], unit.layers[l], g);
        grads.layers[l].weights.flat() += lg.weights.flat();
        grads.layers[l].bias += lg.bias;
        g = std::move(lg.input);
    }
    if (unit.config.residual) {
        for (Eigen::Index n = 0; n < g.batch(); ++n) {
            g.plane(n, 0) += grad_out.plane(n, 0);
        }
    }
    return g;
}

/// One novel-view-synthesis stage: r*r units, one per view position.
template <typename Scalar>
struct NvsStage {
    int factor = 2;
    std::vector<DcnnUnit<Scalar>> units; // row-major over view (i, j)

    NvsStage() = default;

    NvsStage(int r, const UnitConfig& cfg)
        : factor(r)
        , units(static_cast<std::size_t>(r * r), DcnnUnit<Scalar>(cfg))
    {
        require(r >= 2, "NvsStage: factor must be at least 2");
        require(cfg.in_channels == 1 && cfg.residual, "NvsStage: sub-task units are single-channel residual units");
    }

    template <typename Other>
    NvsStage<Other> cast() const
    {
        NvsStage<Other> out;
        out.factor = factor;
        for (const auto& u : units) {
            out.units.push_back(u.template cast<Other>());
        }
        return out;
    }

    bool operator==(const NvsStage&) const = default;
};

template <typename Scalar>
struct StageTape {
    std::vector<UnitTape<Scalar>> units;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> reorganize_batch(const std::vector<Tensor<Scalar>>& views, int r)
{
    const Shape s = views.front().shape();
    Tensor<Scalar> hr(s.batch, 1, s.height * r, s.width * r);
    for (Eigen::Index n = 0; n < s.batch; ++n) {
        ViewGrid<Scalar> grid{r, {}};
        grid.views.reserve(views.size());
        for (const auto& v : views) {
            grid.views.emplace_back(v.plane(n, 0));
        }
        hr.plane(n, 0) = reorganize(grid);
    }
    return hr;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> decompose_batch(const Tensor<Scalar>& hr, int r)
{
    std::vector<Tensor<Scalar>> views(static_cast<std::size_t>(r * r),
                                      Tensor<Scalar>(hr.batch(), 1, hr.height() / r, hr.width() / r));
    for (Eigen::Index n = 0; n < hr.batch(); ++n) {
        const auto grid = decompose(hr.plane(n, 0), r);
        for (std::size_t u = 0; u < views.size(); ++u) {
            views[u].plane(n, 0) = grid.views[u];
        }
    }
    return views;
}

} // namespace detail

/// Batched stage forward: (N,1,H,W) -> (N,1,rH,rW). Units run concurrently.
template <typename Scalar>
Tensor<Scalar> nvs_stage_forward(const Tensor<Scalar>& lr, const NvsStage<Scalar>& stage,
                                 StageTape<Scalar>* tape = nullptr)
{
    require(lr.channels() == 1, "nvs_stage_forward: input must be single-channel");
    require(stage.units.size() == static_cast<std::size_t>(stage.factor * stage.factor),
            "nvs_stage_forward: stage must hold r*r units");
    std::vector<Tensor<Scalar>> views(stage.units.size());
    if (tape != nullptr) {
        tape->units.assign(stage.units.size(), {});
    }
    parallel_for(stage.units.size(), [&](std::size_t u) {
        try {
            views[u] = dcnn_unit_forward(lr, stage.units[u], tape ? &tape->units[u] : nullptr);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (unit " + std::to_string(u) + ")");
        }
    });
    return detail::reorganize_batch(views, stage.factor);
}

/// Returns dL/d(lr); accumulates unit gradients into `grads`.
template <typename Scalar>
Tensor<Scalar> nvs_stage_backward(const NvsStage<Scalar>& stage, const StageTape<Scalar>& tape,
                                  const Tensor<Scalar>& grad_hr, NvsStage<Scalar>& grads)
{
    if (tape.units.size() != stage.units.size()) {
        throw UsageError("nvs_stage_backward: no cached forward pass for this stage");
    }
    const auto grad_views = detail::decompose_batch(grad_hr, stage.factor);
    std::vector<Tensor<Scalar>> grad_inputs(stage.units.size());
    parallel_for(stage.units.size(), [&](std::size_t u) {
        grad_inputs[u] = dcnn_unit_backward(stage.units[u], tape.units[u], grad_views[u], grads.units[u]);
    });
    Tensor<Scalar> g = std::move(grad_inputs.front());
    for (std::size_t u = 1; u < grad_inputs.size(); ++u) {
        g.flat() += grad_inputs[u].flat();
    }
    return g;
}

template <typename Scalar>
struct StageOutput {
    Image<Scalar> hr;
    ViewGrid<Scalar> views;
};

/// Single-image stage forward exposing the per-view predictions.
template <typename Scalar>
StageOutput<Scalar> nvs_stage_forward(const Image<Scalar>& lr, const NvsStage<Scalar>& stage)
{
    require(lr.allFinite(), "nvs_stage_forward: input contains non-finite values");
    const auto input = Tensor<Scalar>::from_image(lr);
    StageOutput<Scalar> out;
    out.views.factor = stage.factor;
    for (const auto& unit : stage.units) {
        out.views.views.emplace_back(dcnn_unit_forward(input, unit).plane(0, 0));
    }
    out.hr = reorganize(out.views);
    return out;
}

/// Stage factors used for a total up-sampling factor, smallest first.
inline std::vector<int> stage_factorization(int total)
{
    switch (total) {
    case 2: return {2};
    case 3: return {3};
    case 4: return {2, 2};
    case 5: return {5};
    case 6: return {2, 3};
    case 8: return {2, 2, 2};
    case 16: return {2, 2, 2, 2};
    default: throw ContractError("unsupported up-sampling factor " + std::to_string(total));
    }
}

struct ModelConfig {
    std::vector<int> stage_factors{2};
    UnitConfig unit{};
    bool msf = false;
    UnitConfig msf_unit{10, 64, 5, 1, false};
    /// Power of two; the network works on depth * value_scale.
    double value_scale = 1.0 / 256.0;
};

/// Ordered stages plus optional multi-scale fusion unit.
template <typename Scalar>
struct CascadeModel {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::vector<NvsStage<Scalar>> stages;
    std::optional<DcnnUnit<Scalar>> msf;
    double value_scale = 1.0 / 256.0;

    CascadeModel() = default;

    /// Zero-initialised model.
    explicit CascadeModel(const ModelConfig& cfg)
        : value_scale(cfg.value_scale)
    {
        require(!cfg.stage_factors.empty(), "CascadeModel: at least one stage required");
        int mantissa_exp = 0;
        require(cfg.value_scale > 0 && std::frexp(cfg.value_scale, &mantissa_exp) == 0.5,
                "CascadeModel: value_scale must be a power of two");
        UnitConfig unit = cfg.unit;
        unit.in_channels = 1;
        unit.residual = true;
        for (int f : cfg.stage_factors) {
            stages.emplace_back(f, unit);
        }
        if (cfg.msf) {
            UnitConfig m = cfg.msf_unit;
            m.in_channels = static_cast<int>(cfg.stage_factors.size());
            m.residual = false;
            require(m.kernel == 5, "CascadeModel: fusion unit uses 5x5 kernels");
            msf.emplace(m);
        }
    }

    template <typename Rng>
    void initialize(Rng& rng)
    {
        for (auto& s : stages) {
            for (auto& u : s.units) {
                u.initialize(rng);
            }
        }
        if (msf) {
            msf->initialize(rng);
        }
    }

    int total_factor() const
    {
        int t = 1;
        for (const auto& s : stages) {
            t *= s.factor;
        }
        return t;
    }

    std::vector<int> stage_factors() const
    {
        std::vector<int> f;
        for (const auto& s : stages) {
            f.push_back(s.factor);
        }
        return f;
    }

    ModelConfig config() const
    {
        ModelConfig c;
        c.stage_factors = stage_factors();
        c.unit = stages.front().units.front().config;
        c.msf = msf.has_value();
        if (msf) {
            c.msf_unit = msf->config;
        }
        c.value_scale = value_scale;
        return c;
    }

    /// Same structure, all parameters zero (gradient accumulator).
    CascadeModel zeros_like() const
    {
        CascadeModel z = *this;
        for (auto p : z.parameters()) {
            std::fill(p.begin(), p.end(), Scalar(0));
        }
        return z;
    }

    /// Every weight and bias array, stages first then fusion, in a fixed order.
    ParamList<Scalar> parameters()
    {
        ParamList<Scalar> out;
        for (auto& s : stages) {
            for (auto& u : s.units) {
                append(u, out);
            }
        }
        if (msf) {
            append(*msf, out);
        }
        return out;
    }

    /// Parameter arrays grouped by optimizer group: one group per stage, then fusion.
    std::vector<ParamList<Scalar>> parameter_groups()
    {
        std::vector<ParamList<Scalar>> groups;
        for (auto& s : stages) {
            ParamList<Scalar> g;
            for (auto& u : s.units) {
                append(u, g);
            }
            groups.push_back(std::move(g));
        }
        if (msf) {
            ParamList<Scalar> g;
            append(*msf, g);
            groups.push_back(std::move(g));
        }
        return groups;
    }

    template <typename Other>
    CascadeModel<Other> cast() const
    {
        CascadeModel<Other> out;
        out.value_scale = value_scale;
        for (const auto& s : stages) {
            out.stages.push_back(s.template cast<Other>());
        }
        if (msf) {
            out.msf = msf->template cast<Other>();
        }
        return out;
    }

    bool operator==(const CascadeModel&) const = default;

private:
    static void append(DcnnUnit<Scalar>& u, ParamList<Scalar>& out)
    {
        for (auto& l : u.layers) {
            out.emplace_back(l.weights.data());
            out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
        }
    }
};

/// Fresh model with He-normal weights drawn from `seed`.
template <typename Scalar>
CascadeModel<Scalar> make_model(const ModelConfig& cfg, std::uint64_t seed)
{
    CascadeModel<Scalar> m(cfg);
    std::mt19937_64 rng(seed);
    m.initialize(rng);
    return m;
}

/// Copies the first stage of a trained x2 model into `model` (warm start).
template <typename Scalar>
void warm_start_first_stage(CascadeModel<Scalar>& model, const CascadeModel<Scalar>& x2)
{
    require(!model.stages.empty() && !x2.stages.empty(), "warm_start_first_stage: empty model");
    require(x2.stages.front().factor == model.stages.front().factor,
            "warm_start_first_stage: first-stage factors differ");
    require(x2.stages.front().units.front().config == model.stages.front().units.front().config,
            "warm_start_first_stage: unit configurations differ");
    model.stages.front() = x2.stages.front();
}

template <typename Scalar>
struct CascadeTape {
    std::vector<StageTape<Scalar>> stages;
    UnitTape<Scalar> msf;
};

/// Batched cascade forward in normalised units; returns every stage output, coarsest first.
template <typename Scalar>
std::vector<Tensor<Scalar>> cascade_forward(const Tensor<Scalar>& lr, const CascadeModel<Scalar>& model,
                                            CascadeTape<Scalar>* tape = nullptr)
{
    require(!model.stages.empty(), "cascade_forward: model has no stages");
    if (tape != nullptr) {
        tape->stages.assign(model.stages.size(), {});
    }
    std::vector<Tensor<Scalar>> outputs;
    outputs.reserve(model.stages.size());
    for (std::size_t k = 0; k < model.stages.size(); ++k) {
        const Tensor<Scalar>& in = k == 0 ? lr : outputs.back();
        try {
            outputs.push_back(nvs_stage_forward(in, model.stages[k], tape ? &tape->stages[k] : nullptr));
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (stage " + std::to_string(k) + ")");
        }
    }
    return outputs;
}

/// Upsamples every stage output to the final size, stacks them coarsest first,
/// and adds the fusion unit's correction to the final stage output.
template <typename Scalar>
Tensor<Scalar> msf_forward(const std::vector<Tensor<Scalar>>& outputs, const CascadeModel<Scalar>& model,
                           CascadeTape<Scalar>* tape = nullptr)
{
    if (!model.msf) {
        throw ContractError("msf_forward: model has no fusion unit");
    }
    require(!outputs.empty(), "msf_forward: no stage outputs");
    require(static_cast<int>(outputs.size()) == model.msf->config.in_channels,
            "msf_forward: stage output count does not match fusion unit");
    const Tensor<Scalar>& last = outputs.back();
    Tensor<Scalar> stacked(last.batch(), static_cast<Eigen::Index>(outputs.size()), last.height(), last.width());
    for (Eigen::Index n = 0; n < last.batch(); ++n) {
        for (std::size_t k = 0; k < outputs.size(); ++k) {
            stacked.plane(n, static_cast<Eigen::Index>(k))
                = bicubic_resize_to(outputs[k].plane(n, 0), last.height(), last.width());
        }
    }
    Tensor<Scalar> fused = dcnn_unit_forward(stacked, *model.msf, tape ? &tape->msf : nullptr);
    fused.flat() += last.flat();
    return fused;
}

/// Backward through fusion (when grad_msf is given) and all stages.
/// `grad_outputs` holds the direct loss gradient for each stage output.
template <typename Scalar>
void cascade_backward(const CascadeModel<Scalar>& model, const CascadeTape<Scalar>& tape,
                      std::vector<Tensor<Scalar>> grad_outputs, const Tensor<Scalar>* grad_msf,
                      CascadeModel<Scalar>& grads)
{
    require(grad_outputs.size() == model.stages.size(), "cascade_backward: one gradient per stage required");
    if (tape.stages.size() != model.stages.size()) {
        throw UsageError("cascade_backward: no cached forward pass");
    }
    if (grad_msf != nullptr) {
        require(model.msf.has_value(), "cascade_backward: model has no fusion unit");
        Tensor<Scalar>& g_last = grad_outputs.back();
        g_last.flat() += grad_msf->flat();
        const Tensor<Scalar> g_stack = dcnn_unit_backward(*model.msf, tape.msf, *grad_msf, *grads.msf);
        for (std::size_t k = 0; k < grad_outputs.size(); ++k) {
            Tensor<Scalar>& gk = grad_outputs[k];
            for (Eigen::Index n = 0; n < gk.batch(); ++n) {
                gk.plane(n, 0) += bicubic_resize_adjoint(g_stack.plane(n, static_cast<Eigen::Index>(k)), gk.height(),
                                                         gk.width());
            }
        }
    }
    for (std::size_t k = model.stages.size(); k-- > 0;) {
        Tensor<Scalar> g_in = nvs_stage_backward(model.stages[k], tape.stages[k], grad_outputs[k], grads.stages[k]);
        if (k > 0) {
            grad_outputs[k - 1].flat() += g_in.flat();
        }
    }
}

template <typename Scalar>
struct SupervisedLoss {
    Scalar loss = 0;
    std::vector<Tensor<Scalar>> grads; // one per stage output
};

/// Sum over stages of MSE(output_k, target_k), all weights 1.
template <typename Scalar>
SupervisedLoss<Scalar> deep_supervised_loss(const std::vector<Tensor<Scalar>>& outputs,
                                            const std::vector<Tensor<Scalar>>& targets)
{
    if (outputs.size() != targets.size()) {
        throw ContractError("deep_supervised_loss: " + std::to_string(outputs.size()) + " outputs but "
                            + std::to_string(targets.size()) + " targets");
    }
    SupervisedLoss<Scalar> r;
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        auto l = mse_loss(outputs[k], targets[k]);
        r.loss += l.loss;
        r.grads.push_back(std::move(l.grad));
    }
    return r;
}

namespace detail {

template <typename Scalar>
Image<Scalar> scale_image(const Image<Scalar>& img, double s)
{
    return img * static_cast<Scalar>(s);
}

} // namespace detail

/// Per-stage outputs for one depth map, in depth units, coarsest first.
template <typename Scalar>
std::vector<Image<Scalar>> cascade_forward(const Image<Scalar>& lr, const CascadeModel<Scalar>& model)
{
    require(lr.allFinite(), "cascade_forward: input contains non-finite values");
    const auto input = Tensor<Scalar>::from_image(detail::scale_image(lr, model.value_scale));
    std::vector<Image<Scalar>> maps;
    for (const auto& t : cascade_forward(input, model)) {
        maps.push_back(detail::scale_image<Scalar>(t.plane(0, 0), 1.0 / model.value_scale));
    }
    return maps;
}

/// Fused output for one depth map, from stage outputs in depth units.
template <typename Scalar>
Image<Scalar> msf_forward(const std::vector<Image<Scalar>>& outputs, const CascadeModel<Scalar>& model)
{
    std::vector<Tensor<Scalar>> t;
    for (const auto& o : outputs) {
        t.push_back(Tensor<Scalar>::from_image(detail::scale_image(o, model.value_scale)));
    }
    const Tensor<Scalar> fused = msf_forward(t, model);
    return detail::scale_image<Scalar>(fused.plane(0, 0), 1.0 / model.value_scale);
}

/// Cascade, then fusion when requested (requires a fusion unit).
template <typename Scalar>
Image<Scalar> infer(const Image<Scalar>& lr, const CascadeModel<Scalar>& model, bool use_msf)
{
    auto outputs = cascade_forward(lr, model);
    if (use_msf) {
        return msf_forward(outputs, model);
    }
    return std::move(outputs.back());
}

} // namespace dsr
