#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dsr/common.hpp"

namespace dsr {

/// Keys cubic convolution kernel, a = -0.5.
inline double keys_kernel(double t)
{
    constexpr double a = -0.5;
    const double x = std::abs(t);
    if (x <= 1.0) {
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    }
    if (x < 2.0) {
        return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    }
    return 0.0;
}

/// Positive rational scale num/den.
struct Ratio {
    int num = 1;
    int den = 1;

    double value() const { return static_cast<double>(num) / den; }
    Eigen::Index apply(Eigen::Index n) const
    {
        return static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * num / den));
    }
};

/// (out x in) matrix R such that R * signal resamples a 1-D signal of length
/// `in` to length `out`: half-pixel centres, Keys kernel widened by in/out when
/// shrinking, clamp-to-edge, rows normalised to sum 1.
template <typename Scalar>
Image<Scalar> resample_matrix(Eigen::Index in, Eigen::Index out)
{
    require(in >= 1 && out >= 1, "resample_matrix: sizes must be positive");
    Image<Scalar> m = Image<Scalar>::Zero(out, in);
    const double scale = static_cast<double>(out) / static_cast<double>(in);
    const double support_scale = std::min(1.0, scale);
    const double radius = 2.0 / support_scale;
    for (Eigen::Index i = 0; i < out; ++i) {
        const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
        const auto first = static_cast<Eigen::Index>(std::floor(center - radius));
        const auto last = static_cast<Eigen::Index>(std::ceil(center + radius));
        double total = 0.0;
        std::vector<double> taps;
        taps.reserve(static_cast<std::size_t>(last - first + 1));
        for (Eigen::Index j = first; j <= last; ++j) {
            const double w = keys_kernel((center - static_cast<double>(j)) * support_scale);
            taps.push_back(w);
            total += w;
        }
        for (Eigen::Index j = first; j <= last; ++j) {
            const Eigen::Index src = std::clamp<Eigen::Index>(j, 0, in - 1);
            m(i, src) += static_cast<Scalar>(taps[static_cast<std::size_t>(j - first)] / total);
        }
    }
    return m;
}

/// Separable bicubic resampling to an explicit output size.
template <typename Derived>
Image<typename Derived::Scalar> bicubic_resize_to(const Eigen::MatrixBase<Derived>& map, Eigen::Index rows,
                                                  Eigen::Index cols)
{
    using Scalar = typename Derived::Scalar;
    if (rows < 1 || cols < 1) {
        throw ContractError("bicubic_resize: degenerate output size " + std::to_string(rows) + "x"
                            + std::to_string(cols));
    }
    if (rows == map.rows() && cols == map.cols()) {
        return map;
    }
    const Image<Scalar> ry = resample_matrix<Scalar>(map.rows(), rows);
    const Image<Scalar> rx = resample_matrix<Scalar>(map.cols(), cols);
    return ry * map * rx.transpose();
}

template <typename Derived>
Image<typename Derived::Scalar> bicubic_resize(const Eigen::MatrixBase<Derived>& map, Ratio scale)
{
    require(scale.num > 0 && scale.den > 0, "bicubic_resize: scale must be positive");
    return bicubic_resize_to(map, scale.apply(map.rows()), scale.apply(map.cols()));
}

/// Adjoint of bicubic_resize_to: maps a gradient at the output size back to the input size.
template <typename Derived>
Image<typename Derived::Scalar> bicubic_resize_adjoint(const Eigen::MatrixBase<Derived>& grad, Eigen::Index in_rows,
                                                       Eigen::Index in_cols)
{
    using Scalar = typename Derived::Scalar;
    if (grad.rows() == in_rows && grad.cols() == in_cols) {
        return grad;
    }
    const Image<Scalar> ry = resample_matrix<Scalar>(in_rows, grad.rows());
    const Image<Scalar> rx = resample_matrix<Scalar>(in_cols, grad.cols());
    return ry.transpose() * grad * rx;
}

/// Bicubic downsampling by an integer factor (the degradation model).
template <typename Derived>
Image<typename Derived::Scalar> downsample(const Eigen::MatrixBase<Derived>& map, int factor)
{
    require(factor >= 1, "downsample: factor must be positive");
    if (map.rows() % factor != 0 || map.cols() % factor != 0) {
        throw ContractError("downsample: " + std::to_string(map.rows()) + "x" + std::to_string(map.cols())
                            + " map is not divisible by " + std::to_string(factor));
    }
    return bicubic_resize(map, Ratio{1, factor});
}

/// Supervision targets for a cascade, coarsest first, ending with gt itself.
/// Level k is the target of stage k; the network input size is not included.
template <typename Derived>
std::vector<Image<typename Derived::Scalar>> make_supervision_pyramid(const Eigen::MatrixBase<Derived>& gt,
                                                                      const std::vector<int>& stage_factors)
{
    require(!stage_factors.empty(), "make_supervision_pyramid: no stages");
    long long total = 1;
    for (int f : stage_factors) {
        require(f >= 2, "make_supervision_pyramid: stage factors must be at least 2");
        total *= f;
    }
    if (gt.rows() % total != 0 || gt.cols() % total != 0) {
        throw ContractError("make_supervision_pyramid: ground truth not divisible by total factor "
                            + std::to_string(total));
    }
    std::vector<Image<typename Derived::Scalar>> levels(stage_factors.size());
    levels.back() = gt;
    for (std::size_t k = stage_factors.size() - 1; k > 0; --k) {
        levels[k - 1] = downsample(levels[k], stage_factors[k]);
    }
    return levels;
}

struct NoiseSpec {
    double delta = 651.0;
    std::uint64_t seed = 0;
};

/// Adds N(0, (delta/d)^2) to every pixel with d > 0; other pixels are left unchanged.
template <typename Derived>
Image<typename Derived::Scalar> add_depth_noise(const Eigen::MatrixBase<Derived>& map, const NoiseSpec& spec)
{
    using Scalar = typename Derived::Scalar;
    require(spec.delta > 0, "add_depth_noise: delta must be positive");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    Image<Scalar> out = map;
    for (Eigen::Index y = 0; y < out.rows(); ++y) {
        for (Eigen::Index x = 0; x < out.cols(); ++x) {
            const double d = static_cast<double>(out(y, x));
            if (d > 0.0) {
                out(y, x) = static_cast<Scalar>(d + unit(rng) * spec.delta / d);
            }
        }
    }
    return out;
}

} // namespace dsr
