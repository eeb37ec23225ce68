#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dsr/network.hpp"

namespace dsr {

/// One training example in depth units: the network input and one target per stage.
template <typename Scalar>
struct TrainingPair {
    Image<Scalar> lr;
    std::vector<Image<Scalar>> targets; // coarsest first, last is the HR patch
};

struct TrainConfig {
    int epochs = 40;
    int batch_size = 16;
    std::uint64_t seed = 1;
    double momentum = 0.9;
    double clip_threshold = 0.01;
    LrSchedule schedule{0.1, 4, 0.1};
    /// Used for the first stage when it was initialised from a trained x2 model.
    LrSchedule warm_schedule{0.01, 3, 0.1};
    bool first_stage_warm = false;
    /// Weight of the fusion output's MSE term (when the model has a fusion unit).
    double msf_weight = 1.0;
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> stack_batch(const std::vector<const Image<Scalar>*>& images, double scale)
{
    const auto& first = *images.front();
    Tensor<Scalar> t(static_cast<Eigen::Index>(images.size()), 1, first.rows(), first.cols());
    for (std::size_t n = 0; n < images.size(); ++n) {
        require(images[n]->rows() == first.rows() && images[n]->cols() == first.cols(),
                "train: all patches in a batch must share one size");
        t.plane(static_cast<Eigen::Index>(n), 0) = *images[n] * static_cast<Scalar>(scale);
    }
    return t;
}

inline void validate_schedule(const LrSchedule& s)
{
    require(s.initial > 0 && s.levels >= 1 && s.gamma > 0 && s.gamma < 1,
            "train: learning-rate schedule must be positive and strictly decreasing");
}

} // namespace detail

/// Result of one loss+gradient evaluation over a batch (normalised units).
template <typename Scalar>
struct BatchGradient {
    Scalar loss = 0;
    CascadeModel<Scalar> grads;
};

/// Deep-supervised loss (plus fusion term) and its gradient for one batch.
template <typename Scalar>
BatchGradient<Scalar> batch_gradient(const CascadeModel<Scalar>& model, const Tensor<Scalar>& lr,
                                     const std::vector<Tensor<Scalar>>& targets, double msf_weight)
{
    CascadeTape<Scalar> tape;
    const auto outputs = cascade_forward(lr, model, &tape);
    auto sup = deep_supervised_loss(outputs, targets);
    BatchGradient<Scalar> r{sup.loss, model.zeros_like()};
    if (model.msf) {
        const Tensor<Scalar> fused = msf_forward(outputs, model, &tape);
        auto fl = mse_loss(fused, targets.back());
        r.loss += static_cast<Scalar>(msf_weight) * fl.loss;
        fl.grad.flat() *= static_cast<Scalar>(msf_weight);
        cascade_backward(model, tape, std::move(sup.grads), &fl.grad, r.grads);
    } else {
        cascade_backward<Scalar>(model, tape, std::move(sup.grads), nullptr, r.grads);
    }
    return r;
}

/// Mini-batch SGD with momentum, adjustable clipping and a stepwise schedule.
/// Deterministic for a given seed. Throws NumericalError on a non-finite loss.
template <typename Scalar>
TrainResult train(CascadeModel<Scalar>& model, const std::vector<TrainingPair<Scalar>>& data,
                  const TrainConfig& cfg, const std::function<void(int, double)>& on_epoch = {})
{
    require(cfg.epochs >= 0, "train: epochs must be non-negative");
    require(cfg.batch_size >= 1, "train: batch size must be positive");
    detail::validate_schedule(cfg.schedule);
    detail::validate_schedule(cfg.warm_schedule);
    TrainResult result;
    if (cfg.epochs == 0) {
        return result;
    }
    require(!data.empty(), "train: empty dataset");
    const std::size_t stages = model.stages.size();
    for (const auto& p : data) {
        require(p.targets.size() == stages, "train: each pair needs one target per stage");
        require(p.targets.back().rows() == p.lr.rows() * model.total_factor()
                    && p.targets.back().cols() == p.lr.cols() * model.total_factor(),
                "train: target size does not match the model's factor");
    }

    auto groups = model.parameter_groups();
    std::vector<OptimizerState<Scalar>> optim;
    std::vector<const LrSchedule*> schedules;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const LrSchedule* s = (g == 0 && cfg.first_stage_warm) ? &cfg.warm_schedule : &cfg.schedule;
        schedules.push_back(s);
        optim.emplace_back(groups[g], static_cast<Scalar>(s->initial), static_cast<Scalar>(cfg.momentum),
                           static_cast<Scalar>(cfg.clip_threshold));
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t g = 0; g < optim.size(); ++g) {
            optim[g].learning_rate = static_cast<Scalar>(schedules[g]->at(epoch, cfg.epochs));
        }
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Image<Scalar>*> inputs;
            std::vector<std::vector<const Image<Scalar>*>> target_ptrs(stages);
            for (std::size_t i = start; i < end; ++i) {
                const auto& pair = data[order[i]];
                inputs.push_back(&pair.lr);
                for (std::size_t k = 0; k < stages; ++k) {
                    target_ptrs[k].push_back(&pair.targets[k]);
                }
            }
            const Tensor<Scalar> lr = detail::stack_batch(inputs, model.value_scale);
            std::vector<Tensor<Scalar>> targets;
            for (const auto& tp : target_ptrs) {
                targets.push_back(detail::stack_batch(tp, model.value_scale));
            }

            BatchGradient<Scalar> bg;
            const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches);
            try {
                bg = batch_gradient(model, lr, targets, cfg.msf_weight);
            } catch (const NumericalError& e) {
                throw NumericalError("training diverged at " + where + ": " + e.what());
            }
            if (!std::isfinite(static_cast<double>(bg.loss))) {
                throw NumericalError("training diverged at " + where + ": non-finite loss");
            }
            auto grad_groups = bg.grads.parameter_groups();
            for (std::size_t g = 0; g < groups.size(); ++g) {
                sgd_momentum_step(groups[g], grad_groups[g], optim[g]);
            }
            epoch_sum += static_cast<double>(bg.loss);
            ++batches;
        }
        const double mean = epoch_sum / static_cast<double>(batches);
        result.epoch_loss.push_back(mean);
        if (on_epoch) {
            on_epoch(epoch, mean);
        }
    }
    return result;
}

} // namespace dsr
