#pragma once

#include <cmath>
#include <random>

#include "dsr/tensor.hpp"

namespace dsr {

/// Stride-1, same-padded 2-D convolution (cross-correlation) with optional ReLU.
template <typename Scalar>
struct ConvLayer {
    Tensor<Scalar> weights; // (out_ch, in_ch, k, k)
    Vector<Scalar> bias;    // out_ch
    bool has_relu = true;

    ConvLayer() = default;

    ConvLayer(Eigen::Index in_ch, Eigen::Index out_ch, Eigen::Index kernel, bool relu)
        : weights(out_ch, in_ch, kernel, kernel)
        , bias(Vector<Scalar>::Zero(out_ch))
        , has_relu(relu)
    {
        require(kernel == 3 || kernel == 5, "conv kernel must be 3 or 5");
        require(in_ch > 0 && out_ch > 0, "conv channel counts must be positive");
    }

    Eigen::Index in_channels() const { return weights.channels(); }
    Eigen::Index out_channels() const { return weights.batch(); }
    Eigen::Index kernel() const { return weights.height(); }
    Eigen::Index padding() const { return kernel() / 2; }

    /// Weights as an (out_ch, in_ch*k*k) matrix.
    auto weight_matrix() const
    {
        return Eigen::Map<const Image<Scalar>>(weights.data().data(), out_channels(),
                                               in_channels() * kernel() * kernel());
    }

    /// He-normal weights, zero bias.
    template <typename Rng>
    void initialize(Rng& rng)
    {
        const double fan_in = static_cast<double>(kernel() * kernel() * in_channels());
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& w : weights.data()) {
            w = static_cast<Scalar>(dist(rng));
        }
        bias.setZero();
    }

    template <typename Other>
    ConvLayer<Other> cast() const
    {
        ConvLayer<Other> out;
        out.weights = weights.template cast<Other>();
        out.bias = bias.template cast<Other>();
        out.has_relu = has_relu;
        return out;
    }

    bool operator==(const ConvLayer& o) const
    {
        return weights == o.weights && bias.size() == o.bias.size() && bias == o.bias && has_relu == o.has_relu;
    }
};

/// Forward record needed by the backward pass.
template <typename Scalar>
struct ConvActivation {
    Tensor<Scalar> input;
    Tensor<Scalar> output; // post-activation
};

template <typename Scalar>
struct ConvGradients {
    Tensor<Scalar> input;
    Tensor<Scalar> weights;
    Vector<Scalar> bias;
};

namespace detail {

/// Unfolds item n of `in` into a (C*k*k, H*W) patch matrix with zero padding.
template <typename Scalar>
Image<Scalar> im2col(const Tensor<Scalar>& in, Eigen::Index n, Eigen::Index k)
{
    const Eigen::Index C = in.channels();
    const Eigen::Index H = in.height();
    const Eigen::Index W = in.width();
    const Eigen::Index pad = k / 2;
    Image<Scalar> col = Image<Scalar>::Zero(C * k * k, H * W);
    for (Eigen::Index c = 0; c < C; ++c) {
        const auto src = in.plane(n, c);
        for (Eigen::Index ky = 0; ky < k; ++ky) {
            for (Eigen::Index kx = 0; kx < k; ++kx) {
                Scalar* row = col.row((c * k + ky) * k + kx).data();
                const Eigen::Index dx = kx - pad;
                const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx);
                const Eigen::Index x1 = std::min<Eigen::Index>(W, W - dx);
                for (Eigen::Index y = 0; y < H; ++y) {
                    const Eigen::Index sy = y + ky - pad;
                    if (sy < 0 || sy >= H) {
                        continue;
                    }
                    for (Eigen::Index x = x0; x < x1; ++x) {
                        row[y * W + x] = src(sy, x + dx);
                    }
                }
            }
        }
    }
    return col;
}

/// Adjoint of im2col: scatters a patch matrix back into item n of `out`.
template <typename Scalar>
void col2im_add(const Image<Scalar>& col, Tensor<Scalar>& out, Eigen::Index n, Eigen::Index k)
{
    const Eigen::Index C = out.channels();
    const Eigen::Index H = out.height();
    const Eigen::Index W = out.width();
    const Eigen::Index pad = k / 2;
    for (Eigen::Index c = 0; c < C; ++c) {
        auto dst = out.plane(n, c);
        for (Eigen::Index ky = 0; ky < k; ++ky) {
            for (Eigen::Index kx = 0; kx < k; ++kx) {
                const Scalar* row = col.row((c * k + ky) * k + kx).data();
                const Eigen::Index dx = kx - pad;
                const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx);
                const Eigen::Index x1 = std::min<Eigen::Index>(W, W - dx);
                for (Eigen::Index y = 0; y < H; ++y) {
                    const Eigen::Index sy = y + ky - pad;
                    if (sy < 0 || sy >= H) {
                        continue;
                    }
                    for (Eigen::Index x = x0; x < x1; ++x) {
                        dst(sy, x + dx) += row[y * W + x];
                    }
                }
            }
        }
    }
}

} // namespace detail

/// out = relu?(W * in + b). When `record` is given, the input and the
/// activation are stored for conv2d_backward.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const ConvLayer<Scalar>& layer,
                              ConvActivation<Scalar>* record = nullptr)
{
    if (input.channels() != layer.in_channels()) {
        throw ContractError("conv2d_forward: input has " + std::to_string(input.channels())
                            + " channels, layer expects " + std::to_string(layer.in_channels()));
    }
    const Eigen::Index k = layer.kernel();
    Tensor<Scalar> out(input.batch(), layer.out_channels(), input.height(), input.width());
    const auto w = layer.weight_matrix();
    for (Eigen::Index n = 0; n < input.batch(); ++n) {
        auto o = out.item(n);
        o.noalias() = w * detail::im2col(input, n, k);
        o.colwise() += layer.bias;
        if (layer.has_relu) {
            o = o.cwiseMax(Scalar(0));
        }
    }
    require_finite(out, "conv2d_forward");
    if (record != nullptr) {
        record->input = input;
        record->output = out;
    }
    return out;
}

/// Gradients of a scalar loss w.r.t. input, weights and bias given dL/d(output).
template <typename Scalar>
ConvGradients<Scalar> conv2d_backward(const ConvActivation<Scalar>& record, const ConvLayer<Scalar>& layer,
                                      const Tensor<Scalar>& grad_out)
{
    if (record.input.empty() || record.output.empty()) {
        throw UsageError("conv2d_backward: no cached forward activation");
    }
    require_same_shape(record.output, grad_out, "conv2d_backward");
    if (record.input.channels() != layer.in_channels() || grad_out.channels() != layer.out_channels()) {
        throw ContractError("conv2d_backward: cached activation does not match layer");
    }
    const Eigen::Index k = layer.kernel();
    ConvGradients<Scalar> g{Tensor<Scalar>(record.input.shape()), Tensor<Scalar>(layer.weights.shape()),
                            Vector<Scalar>::Zero(layer.out_channels())};
    Eigen::Map<Image<Scalar>> gw(g.weights.data().data(), layer.out_channels(),
                                 layer.in_channels() * k * k);
    const auto w = layer.weight_matrix();
    for (Eigen::Index n = 0; n < grad_out.batch(); ++n) {
        Image<Scalar> go = grad_out.item(n);
        if (layer.has_relu) {
            go = (record.output.item(n).array() > Scalar(0)).select(go, Scalar(0));
        }
        const Image<Scalar> col = detail::im2col(record.input, n, k);
        gw.noalias() += go * col.transpose();
        g.bias += go.rowwise().sum();
        const Image<Scalar> gcol = w.transpose() * go;
        detail::col2im_add(gcol, g.input, n, k);
    }
    require_finite(g.input, "conv2d_backward");
    return g;
}

} // namespace dsr
