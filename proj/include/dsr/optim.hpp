#pragma once

#include <span>
#include <vector>

#include "dsr/tensor.hpp"

namespace dsr {

template <typename Scalar>
struct LossResult {
    Scalar loss = 0;
    Tensor<Scalar> grad;
};

/// Mean squared error and its gradient 2(pred - target)/count.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target)
{
    require_same_shape(pred, target, "mse_loss");
    require(pred.size() > 0, "mse_loss: empty tensors");
    LossResult<Scalar> r{Scalar(0), Tensor<Scalar>(pred.shape())};
    const auto diff = (pred.flat() - target.flat()).eval();
    const Scalar count = static_cast<Scalar>(pred.size());
    r.loss = diff.squaredNorm() / count;
    r.grad.flat() = (Scalar(2) / count) * diff;
    return r;
}

/// Flat views over every parameter (or gradient) array of a model.
template <typename Scalar>
using ParamList = std::vector<std::span<Scalar>>;

template <typename Scalar>
struct OptimizerState {
    std::vector<Vector<Scalar>> velocity;
    Scalar learning_rate = Scalar(0.1);
    Scalar momentum = Scalar(0.9);
    Scalar clip_threshold = Scalar(0.01);

    OptimizerState() = default;

    template <typename ParamSpans>
    OptimizerState(const ParamSpans& params, Scalar lr, Scalar m, Scalar clip)
        : learning_rate(lr)
        , momentum(m)
        , clip_threshold(clip)
    {
        require(lr > 0, "learning rate must be positive");
        require(m >= 0 && m < 1, "momentum must lie in [0, 1)");
        require(clip > 0, "clip threshold must be positive");
        velocity.reserve(params.size());
        for (const auto& p : params) {
            velocity.push_back(Vector<Scalar>::Zero(static_cast<Eigen::Index>(p.size())));
        }
    }
};

/// Clamps every gradient element to [-threshold/lr, threshold/lr].
template <typename Scalar>
void clip_gradients(const ParamList<Scalar>& grads, Scalar threshold, Scalar learning_rate)
{
    require(threshold > 0, "clip_gradients: threshold must be positive");
    require(learning_rate > 0, "clip_gradients: learning rate must be positive");
    const Scalar bound = threshold / learning_rate;
    for (auto g : grads) {
        Eigen::Map<Vector<Scalar>> v(g.data(), static_cast<Eigen::Index>(g.size()));
        v = v.cwiseMax(-bound).cwiseMin(bound);
    }
}

/// v <- m v - lr g ; p <- p + v. Clipping is applied to `grads` first.
template <typename Scalar>
void sgd_momentum_step(const ParamList<Scalar>& params, const ParamList<Scalar>& grads, OptimizerState<Scalar>& state)
{
    require(params.size() == grads.size() && params.size() == state.velocity.size(),
            "sgd_momentum_step: parameter/gradient/buffer count mismatch");
    clip_gradients(grads, state.clip_threshold, state.learning_rate);
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(params[i].size() == grads[i].size()
                    && static_cast<Eigen::Index>(params[i].size()) == state.velocity[i].size(),
                "sgd_momentum_step: shape mismatch");
        Eigen::Map<Vector<Scalar>> p(params[i].data(), static_cast<Eigen::Index>(params[i].size()));
        Eigen::Map<const Vector<Scalar>> g(grads[i].data(), static_cast<Eigen::Index>(grads[i].size()));
        auto& v = state.velocity[i];
        v = state.momentum * v - state.learning_rate * g;
        p += v;
    }
}

/// Stepwise decay: `levels` equal segments of the run, lr multiplied by gamma per segment.
struct LrSchedule {
    double initial = 0.1;
    int levels = 4;
    double gamma = 0.1;

    double at(int epoch, int total_epochs) const
    {
        require(levels >= 1 && total_epochs >= 1, "LrSchedule: invalid configuration");
        const int level = std::min(levels - 1, epoch * levels / total_epochs);
        double lr = initial;
        for (int i = 0; i < level; ++i) {
            lr *= gamma;
        }
        return lr;
    }

    double final_rate() const { return at(levels - 1, levels); }
};

} // namespace dsr
