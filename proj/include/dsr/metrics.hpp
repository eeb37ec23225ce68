#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "dsr/common.hpp"

namespace dsr {

namespace detail {

template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ContractError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x"
                            + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x"
                            + std::to_string(b.cols()));
    }
    require(a.size() > 0, std::string(what) + ": empty images");
}

} // namespace detail

/// sqrt(sum (pred - gt)^2 / N)
template <typename A, typename B>
double rmse(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt)
{
    detail::require_same_size(pred, gt, "rmse");
    const double sq = (pred.template cast<double>() - gt.template cast<double>()).squaredNorm();
    return std::sqrt(sq / static_cast<double>(pred.size()));
}

/// Percentage of pixels with |pred - gt| > threshold.
template <typename A, typename B>
double bad_pixel_percent(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt, double threshold = 1.0)
{
    detail::require_same_size(pred, gt, "bad_pixel_percent");
    const auto bad = ((pred.template cast<double>() - gt.template cast<double>()).array().abs() > threshold).count();
    return 100.0 * static_cast<double>(bad) / static_cast<double>(pred.size());
}

/// Normalised 11-tap Gaussian, sigma 1.5.
inline Eigen::VectorXd ssim_window()
{
    Eigen::VectorXd g(11);
    for (int i = 0; i < 11; ++i) {
        const double t = i - 5;
        g(i) = std::exp(-t * t / (2.0 * 1.5 * 1.5));
    }
    return g / g.sum();
}

namespace detail {

/// Separable "valid" Gaussian filtering.
inline Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& img, const Eigen::VectorXd& g)
{
    const Eigen::Index k = g.size();
    const Eigen::Index h = img.rows() - k + 1;
    const Eigen::Index w = img.cols() - k + 1;
    Eigen::MatrixXd tmp(img.rows(), w);
    for (Eigen::Index x = 0; x < w; ++x) {
        tmp.col(x) = img.middleCols(x, k) * g;
    }
    Eigen::MatrixXd out(h, w);
    for (Eigen::Index y = 0; y < h; ++y) {
        out.row(y) = g.transpose() * tmp.middleRows(y, k);
    }
    return out;
}

} // namespace detail

/// Mean SSIM over all valid 11x11 windows, C1 = (0.01 L)^2, C2 = (0.03 L)^2.
template <typename A, typename B>
double ssim(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt, double dynamic_range = 255.0)
{
    detail::require_same_size(pred, gt, "ssim");
    require(dynamic_range > 0, "ssim: dynamic range must be positive");
    if (pred.rows() < 11 || pred.cols() < 11) {
        throw ContractError("ssim: image smaller than the 11x11 window");
    }
    const Eigen::MatrixXd x = pred.template cast<double>();
    const Eigen::MatrixXd y = gt.template cast<double>();
    const Eigen::VectorXd g = ssim_window();
    const double c1 = std::pow(0.01 * dynamic_range, 2);
    const double c2 = std::pow(0.03 * dynamic_range, 2);

    const Eigen::ArrayXXd mx = detail::filter_valid(x, g).array();
    const Eigen::ArrayXXd my = detail::filter_valid(y, g).array();
    const Eigen::ArrayXXd sxx = detail::filter_valid(x.cwiseProduct(x), g).array() - mx * mx;
    const Eigen::ArrayXXd syy = detail::filter_valid(y.cwiseProduct(y), g).array() - my * my;
    const Eigen::ArrayXXd sxy = detail::filter_valid(x.cwiseProduct(y), g).array() - mx * my;

    const Eigen::ArrayXXd map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                                / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.mean();
}

/// Crops `border` pixels from every side (for comparisons against border-shaved results).
template <typename Derived>
Image<typename Derived::Scalar> crop_border(const Eigen::MatrixBase<Derived>& img, Eigen::Index border)
{
    require(border >= 0 && 2 * border < img.rows() && 2 * border < img.cols(), "crop_border: border too large");
    return img.block(border, border, img.rows() - 2 * border, img.cols() - 2 * border);
}

/// Rounds and clamps to [0, 255], for metrics on 8-bit-quantised maps.
template <typename Derived>
Image<typename Derived::Scalar> quantize_8bit(const Eigen::MatrixBase<Derived>& img)
{
    using Scalar = typename Derived::Scalar;
    return img.unaryExpr([](Scalar v) { return std::clamp(std::round(v), Scalar(0), Scalar(255)); });
}

struct EvalRow {
    std::string id;
    double rmse = 0.0;
    double ssim = 0.0;
    double bad_pct = 0.0;
};

struct EvalOptions {
    double dynamic_range = 255.0;
    double bad_threshold = 1.0;
    Eigen::Index crop = 0;
    bool quantize = false;
};

template <typename A, typename B>
EvalRow evaluate(std::string id, const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& gt,
                 const EvalOptions& opt = {})
{
    Image<double> p = pred.template cast<double>();
    Image<double> g = gt.template cast<double>();
    if (opt.crop > 0) {
        p = crop_border(p, opt.crop);
        g = crop_border(g, opt.crop);
    }
    if (opt.quantize) {
        p = quantize_8bit(p);
        g = quantize_8bit(g);
    }
    return {std::move(id), rmse(p, g), ssim(p, g, opt.dynamic_range), bad_pixel_percent(p, g, opt.bad_threshold)};
}

/// One row per image under the fixed header `id,rmse,ssim,bad_pct`.
void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows);

} // namespace dsr
